"""Dense float64 primitives: similarity, distances, softmax, seeded RNG.

Everything here is pure and operates on plain numpy arrays. All public
operations validate shapes and reject non-finite inputs so downstream code
can assume clean values.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import DomainError, NumericError, ShapeError

RNG_ALGORITHM = "philox4x64"


def as_vector(x, name: str = "vector") -> np.ndarray:
    """Coerce to a 1-D float64 array, checking finiteness and non-emptiness."""
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    if v.size == 0:
        raise ShapeError(f"{name} must be non-empty")
    if not np.all(np.isfinite(v)):
        raise NumericError(f"{name} contains non-finite entries")
    return v


def as_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, checking finiteness."""
    m = np.asarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{name} contains non-finite entries")
    return m


def cosine_sim(a, b) -> float:
    """Cosine similarity of two vectors, clamped to [-1, 1].

    The clamp absorbs rounding past the analytic bound so callers can feed
    the result to acos or compare against exact endpoints.
    """
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    if va.shape != vb.shape:
        raise ShapeError(f"length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = float(np.linalg.norm(va))
    nb = float(np.linalg.norm(vb))
    if na == 0.0 or nb == 0.0:
        raise DomainError("cosine similarity undefined for zero-norm input")
    return float(np.clip(float(va @ vb) / (na * nb), -1.0, 1.0))


def l2_dist(a, b) -> float:
    """Euclidean distance between two equal-length vectors."""
    va = as_vector(a, "a")
    vb = as_vector(b, "b")
    if va.shape != vb.shape:
        raise ShapeError(f"length mismatch: {va.shape[0]} vs {vb.shape[0]}")
    return float(np.linalg.norm(va - vb))


def stable_softmax(logits) -> np.ndarray:
    """Softmax with max-subtraction; exact for arbitrarily large gaps."""
    v = as_vector(logits, "logits")
    shifted = v - v.max()
    e = np.exp(shifted)
    return e / e.sum()


def _derive_seed(seed: int, label: str) -> int:
    """64-bit child seed from (seed, label) via blake2b; platform independent."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(seed).to_bytes(8, "little", signed=False))
    h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


class SeededRng:
    """Counter-based RNG (numpy Philox) with documented stream splitting.

    Identical seeds reproduce identical draw sequences across runs and
    platforms. Child streams are derived by hashing (seed, label) with
    blake2b so that workers can own independent deterministic streams.
    """

    algorithm = RNG_ALGORITHM

    def __init__(self, seed: int):
        if seed < 0:
            raise DomainError("seed must be a non-negative integer")
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.Philox(key=self.seed))

    def spawn(self, label: str) -> "SeededRng":
        """Independent child stream; deterministic in (seed, label)."""
        return SeededRng(_derive_seed(self.seed, label))

    def normal(self, scale: float, size) -> np.ndarray:
        return self._gen.normal(0.0, scale, size=size)

    def uniform(self, size=None):
        return self._gen.uniform(size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice_without_replacement(self, pool, k: int) -> np.ndarray:
        pool = np.asarray(pool)
        if k > pool.size:
            raise DomainError(f"cannot draw {k} from pool of {pool.size}")
        return self._gen.choice(pool, size=k, replace=False)
