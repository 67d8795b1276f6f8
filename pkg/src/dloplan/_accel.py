"""Numba dispatch switch.

Set ``DLOPLAN_DISABLE_NUMBA=1`` to run every hot kernel through its
pure-numpy implementation instead of the compiled one.
"""
import os

try:
    import numba
except ImportError:  # pragma: no cover - numba is an install requirement
    numba = None

USE_NUMBA = numba is not None and os.environ.get("DLOPLAN_DISABLE_NUMBA", "0") not in ("1", "true", "yes")


def njit(*args, **kwargs):
    """``numba.njit`` with caching on, or a no-op when compilation is disabled."""
    kwargs.setdefault("cache", True)

    def wrap(fn):
        if not USE_NUMBA:
            return fn
        return numba.njit(**kwargs)(fn)

    if args and callable(args[0]):
        return wrap(args[0])
    return wrap
