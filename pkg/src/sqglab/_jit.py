"""Numba switch and worker count.

Set ``SQGLAB_DISABLE_NUMBA=1`` to run every kernel through its pure-numpy
path. ``SQGLAB_WORKERS`` sets how many processes ensemble runs may use.
"""
import os

_FLAG = os.environ.get("SQGLAB_DISABLE_NUMBA", "").strip().lower()

try:
    if _FLAG in ("1", "true", "yes", "on"):
        raise ImportError
    import numba as nb

    USE_NUMBA = True
except ImportError:
    nb = None
    USE_NUMBA = False


def njit(*args, **kwargs):
    if USE_NUMBA:
        return nb.njit(*args, **kwargs)
    return lambda func: func


def workers(default: int = 1) -> int:
    """Worker processes for ensemble runs (``$SQGLAB_WORKERS``, at least 1)."""
    env = os.environ.get("SQGLAB_WORKERS", "").strip()
    return max(1, int(env)) if env else max(1, int(default))
