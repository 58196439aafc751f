"""Numba JIT dispatch for the hot kernels.

Every accelerated kernel in this package exists in two versions: a scalar-loop
body compiled with ``numba.njit`` and a vectorized pure-numpy fallback. The
fallback is selected when numba is not importable or when the environment
variable ``AIRMASK_NO_NUMBA`` is set to a non-empty value other than ``0``.
``benchmarks/bench_kernels.py`` times the two paths against each other.
"""

import os

_disabled = os.environ.get("AIRMASK_NO_NUMBA", "").strip() not in ("", "0")

try:
    if _disabled:
        raise ImportError("numba disabled via AIRMASK_NO_NUMBA")
    from numba import njit as _njit

    USING_NUMBA = True
except ImportError:
    _njit = None
    USING_NUMBA = False


def jit_kernel(func):
    """Compile `func` with njit when numba is active, else return it unchanged.

    nogil=True so threaded per-room evaluation can overlap kernel calls;
    cache=True so test runs do not pay compilation twice.
    """
    if USING_NUMBA:
        return _njit(cache=True, nogil=True)(func)
    return func
