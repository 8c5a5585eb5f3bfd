# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled encoder kernels: fused affine -> tanh -> affine -> normalize.

Same contracts as ``_kernels_py``; see there for shapes. Loops accumulate
in a fixed ascending order so results are deterministic run to run.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport sqrt, tanh

cnp.import_array()


def mlp_forward(const double[:, ::1] pooled, const double[:, ::1] w1, const double[::1] b1,
                const double[:, ::1] w2, const double[::1] b2):
    cdef Py_ssize_t B = pooled.shape[0]
    cdef Py_ssize_t d = pooled.shape[1]
    cdef Py_ssize_t h = w1.shape[0]
    cdef cnp.ndarray[double, ndim=2] z_arr = np.empty((B, d), dtype=np.float64)
    cdef double[:, ::1] z = z_arr
    cdef cnp.ndarray[double, ndim=1] hid_arr = np.empty(h, dtype=np.float64)
    cdef double[::1] hid = hid_arr
    cdef Py_ssize_t b, i, k
    cdef double acc, norm

    with nogil:
        for b in range(B):
            for i in range(h):
                acc = b1[i]
                for k in range(d):
                    acc += w1[i, k] * pooled[b, k]
                hid[i] = tanh(acc)
            norm = 0.0
            for i in range(d):
                acc = b2[i]
                for k in range(h):
                    acc += w2[i, k] * hid[k]
                z[b, i] = acc
                norm += acc * acc
            norm = sqrt(norm)
            for i in range(d):
                z[b, i] = z[b, i] / norm
    return z_arr


def mlp_vjp(const double[:, ::1] pooled, const double[:, ::1] w1, const double[::1] b1,
            const double[:, ::1] w2, const double[::1] b2, const double[:, ::1] upstream):
    cdef Py_ssize_t B = pooled.shape[0]
    cdef Py_ssize_t d = pooled.shape[1]
    cdef Py_ssize_t h = w1.shape[0]
    cdef cnp.ndarray[double, ndim=2] gp_arr = np.empty((B, d), dtype=np.float64)
    cdef double[:, ::1] gp = gp_arr
    cdef cnp.ndarray[double, ndim=1] hid_arr = np.empty(h, dtype=np.float64)
    cdef double[::1] hid = hid_arr
    cdef cnp.ndarray[double, ndim=1] out_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef cnp.ndarray[double, ndim=1] gout_arr = np.empty(d, dtype=np.float64)
    cdef double[::1] gout = gout_arr
    cdef cnp.ndarray[double, ndim=1] gpre_arr = np.empty(h, dtype=np.float64)
    cdef double[::1] gpre = gpre_arr
    cdef Py_ssize_t b, i, k
    cdef double acc, norm, zu, zi

    with nogil:
        for b in range(B):
            for i in range(h):
                acc = b1[i]
                for k in range(d):
                    acc += w1[i, k] * pooled[b, k]
                hid[i] = tanh(acc)
            norm = 0.0
            for i in range(d):
                acc = b2[i]
                for k in range(h):
                    acc += w2[i, k] * hid[k]
                out[i] = acc
                norm += acc * acc
            norm = sqrt(norm)
            zu = 0.0
            for i in range(d):
                zu += (out[i] / norm) * upstream[b, i]
            for i in range(d):
                zi = out[i] / norm
                gout[i] = (upstream[b, i] - zi * zu) / norm
            for i in range(h):
                acc = 0.0
                for k in range(d):
                    acc += w2[k, i] * gout[k]
                gpre[i] = (1.0 - hid[i] * hid[i]) * acc
            for i in range(d):
                acc = 0.0
                for k in range(h):
                    acc += w1[k, i] * gpre[k]
                gp[b, i] = acc
    return gp_arr
