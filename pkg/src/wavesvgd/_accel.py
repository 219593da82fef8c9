"""Backend selection for the hot time-stepping kernels.

Set ``WAVESVGD_DISABLE_NUMBA=1`` to force the pure numpy/scipy path. The
numba path is used whenever numba imports and the flag is unset.
"""
import os

ENV_FLAG = "WAVESVGD_DISABLE_NUMBA"

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

NUMBA_AVAILABLE = numba is not None


def numba_enabled():
    if not NUMBA_AVAILABLE:
        return False
    return os.environ.get(ENV_FLAG, "0").strip().lower() not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, identity decorator otherwise."""
    kwargs.setdefault("cache", True)
    kwargs.setdefault("nogil", True)
    if numba is None:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return numba.njit(*args, **kwargs)
