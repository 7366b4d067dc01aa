"""numba switch.

Set ``COVSTEER_DISABLE_JIT=1`` to run every kernel through its pure-numpy
path (useful for debugging and for environments without numba).
"""
import os

_disabled = os.environ.get("COVSTEER_DISABLE_JIT", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _disabled:
        raise ImportError("disabled by COVSTEER_DISABLE_JIT")
    from numba import njit
    JIT_ENABLED = True
except ImportError:
    JIT_ENABLED = False

    def njit(func=None, **kwargs):
        if func is not None:
            return func

        def wrapper(f):
            return f

        return wrapper
