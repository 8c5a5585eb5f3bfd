"""Numpy implementations of the hot encoder kernels.

These are the reference semantics; the compiled extension in
``_kernels_cy.pyx`` mirrors them operation for operation. Both map a batch
of pooled slot vectors through affine -> tanh -> affine -> L2 normalize.
"""

from __future__ import annotations

import numpy as np


def mlp_forward(pooled, w1, b1, w2, b2):
    """Forward pass for a batch of pooled inputs.

    pooled: (B, d); w1: (h, d); b1: (h,); w2: (d, h); b2: (d,).
    Returns unit-norm rows (B, d).
    """
    hidden = np.tanh(pooled @ w1.T + b1)
    out = hidden @ w2.T + b2
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    return out / norms


def mlp_vjp(pooled, w1, b1, w2, b2, upstream):
    """Gradient of <upstream_b, forward(pooled)_b> w.r.t. each pooled row.

    Recomputes the forward internally; returns (B, d).
    """
    hidden = np.tanh(pooled @ w1.T + b1)
    out = hidden @ w2.T + b2
    norms = np.linalg.norm(out, axis=1, keepdims=True)
    z = out / norms
    # d<u,z>/d out through z = out/||out||: (u - z <z,u>) / ||out||
    zu = np.sum(z * upstream, axis=1, keepdims=True)
    g_out = (upstream - z * zu) / norms
    g_hidden = g_out @ w2
    g_pre = (1.0 - hidden * hidden) * g_hidden
    return g_pre @ w1
