"""Numba availability and the switch between compiled and pure-numpy kernels.

Set ``MNL_UCB_DISABLE_NUMBA=1`` to force the numpy fallback, e.g. for
debugging or benchmarking.  Numba missing from the environment has the
same effect.
"""
import os
import warnings

__all__ = ["USE_NUMBA", "njit", "numba_disabled_by_env"]


def numba_disabled_by_env():
    return os.environ.get("MNL_UCB_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


try:
    from numba import njit as _numba_njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False
    _numba_njit = None

USE_NUMBA = HAVE_NUMBA and not numba_disabled_by_env()


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, otherwise an identity decorator.

    The compiled kernels are always *defined* with this decorator, so the
    numba module can be imported for equivalence tests even when the
    dispatch layer has selected the numpy path.
    """
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return _numba_njit(*args, **kwargs)
    if args and callable(args[0]):
        return args[0]

    def deco(func):
        return func

    return deco


if not HAVE_NUMBA:  # pragma: no cover
    warnings.warn("numba is not available; using the pure-numpy kernels", RuntimeWarning)
