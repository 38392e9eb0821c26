"""Dispatch to the numba or numpy implementation of each hot kernel.

The choice is made once at import time from ``mnl_ucb._accel.USE_NUMBA``.
Both implementations stay importable as ``kernels.jit_impl`` and
``kernels.numpy_impl`` so they can be compared against each other.
"""
import numpy as np

from .._accel import USE_NUMBA
from . import _jit as jit_impl
from . import _numpy as numpy_impl

BACKEND = "numba" if USE_NUMBA else "numpy"
_impl = jit_impl if USE_NUMBA else numpy_impl

__all__ = ["BACKEND", "brute_force", "greedy_swap", "jit_impl", "loglik_terms", "numpy_impl"]


def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def _i64(a):
    return np.ascontiguousarray(a, dtype=np.int64)


def loglik_terms(theta, feats, sizes, chosen, want_hess=True):
    ll, grad, neg_hess = _impl.loglik_terms(_f64(theta), _f64(feats), _i64(sizes), _i64(chosen), bool(want_hess))
    return float(ll), grad, neg_hess


def greedy_swap(u, r, x, capacity, omega, start, eps=1e-12, max_moves=None):
    x = _f64(x)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if max_moves is None:
        max_moves = 10 * max(n, 1) ** 4
    items, obj, moves = _impl.greedy_swap(_f64(u), _f64(r), x, int(capacity), float(omega),
                                          _i64(start), float(eps), int(max_moves))
    return tuple(int(i) for i in items), float(obj), int(moves)


def brute_force(u, r, x, capacity, omega):
    x = _f64(x)
    if x.ndim == 1:
        x = x[:, None]
    items, obj, visited = _impl.brute_force(_f64(u), _f64(r), x, int(capacity), float(omega))
    return tuple(int(i) for i in items), float(obj), int(visited)
