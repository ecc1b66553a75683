"""Optional numba acceleration.

Set ``SAFEABR_DISABLE_NUMBA=1`` to force the pure-numpy kernels.
"""

import os

_DISABLED = os.environ.get("SAFEABR_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes", "on")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

NUMBA_AVAILABLE = numba is not None
USE_NUMBA = NUMBA_AVAILABLE and not _DISABLED


def njit(fn):
    """Compile ``fn`` with numba in nopython mode (cached on disk)."""
    if not NUMBA_AVAILABLE:
        raise RuntimeError("numba is not installed")
    return numba.njit(cache=True)(fn)


def pick(loops_fn, numpy_fn):
    """Return the compiled loop kernel when numba is active, else the numpy one."""
    if USE_NUMBA:
        return njit(loops_fn)
    return numpy_fn
