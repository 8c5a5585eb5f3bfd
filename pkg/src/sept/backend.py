"""Kernel backend selection: compiled extension when available, numpy otherwise.

``SEPT_BACKEND`` controls the choice: ``auto`` (default) prefers the
compiled extension, ``compiled`` requires it, ``python`` forces the numpy
fallback. ``SEPT_THREADS`` caps worker parallelism; 1 (the default) keeps
every pipeline bitwise deterministic.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from . import _kernels_py
from .errors import ConfigError

_cached = None


def _select():
    choice = os.environ.get("SEPT_BACKEND", "auto").strip().lower()
    if choice not in ("auto", "compiled", "python"):
        raise ConfigError(f"SEPT_BACKEND must be auto|compiled|python, got {choice!r}")
    if choice == "python":
        return _kernels_py, "python"
    try:
        from . import _kernels_cy
        return _kernels_cy, "compiled"
    except ImportError:
        if choice == "compiled":
            raise ConfigError("SEPT_BACKEND=compiled but the extension is not built")
        return _kernels_py, "python"


def _kernels():
    global _cached
    if _cached is None:
        _cached = _select()
    return _cached


def active_backend() -> str:
    """Name of the kernel backend in use ('compiled' or 'python')."""
    return _kernels()[1]


def mlp_forward(pooled, w1, b1, w2, b2):
    return _kernels()[0].mlp_forward(pooled, w1, b1, w2, b2)


def mlp_vjp(pooled, w1, b1, w2, b2, upstream):
    return _kernels()[0].mlp_vjp(pooled, w1, b1, w2, b2, upstream)


def thread_count() -> int:
    raw = os.environ.get("SEPT_THREADS", "1").strip()
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"SEPT_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise ConfigError("SEPT_THREADS must be >= 1")
    return n


def parallel_map(fn, items):
    """Ordered map honoring SEPT_THREADS.

    Results are collected in input order, so the output is identical to the
    sequential map regardless of thread count.
    """
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
