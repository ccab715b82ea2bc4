"""Optional numba acceleration for the hot kernels.

Every kernel in :mod:`hazard_ctmc.kernels` is written in the subset of numpy
that numba can compile, so the same source runs either jitted or as plain
numpy.  Set ``HAZARD_CTMC_DISABLE_NUMBA=1`` before import to force the numpy
path (useful for debugging and for the benchmark in ``benchmarks/``).
"""

import os

_FLAG = os.environ.get("HAZARD_CTMC_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and not NUMBA_DISABLED

JIT_OPTIONS = {"cache": True, "nogil": True}


def njit(func=None, **kwargs):
    """``numba.njit`` when enabled, identity decorator otherwise."""
    options = dict(JIT_OPTIONS, **kwargs)

    def wrap(f):
        if USE_NUMBA:
            return numba.njit(**options)(f)
        return f

    if func is not None:
        return wrap(func)
    return wrap


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
