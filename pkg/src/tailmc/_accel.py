"""Numba switch.

Set ``TAILMC_DISABLE_NUMBA=1`` to run the pure-numpy kernels instead of the
jitted ones (useful for debugging and for platforms without numba).
"""

import os

_FLAG = "TAILMC_DISABLE_NUMBA"


def _wants_numba():
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    if not _wants_numba():
        raise ImportError("disabled by " + _FLAG)
    from numba import njit as _njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False
    _njit = None


def jit(fn):
    """``numba.njit(cache=True, nogil=True)`` when enabled, identity otherwise."""
    if HAS_NUMBA:
        return _njit(cache=True, nogil=True)(fn)
    return fn


def backend():
    return "numba" if HAS_NUMBA else "numpy"
