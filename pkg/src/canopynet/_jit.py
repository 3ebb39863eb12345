"""Numba switch.

Set ``CANOPYNET_JIT=0`` to run every kernel through its vectorised numpy
implementation instead of the compiled loop version.
"""
import os

JIT_ENABLED = os.environ.get("CANOPYNET_JIT", "1").strip().lower() not in ("0", "false", "no", "off")

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None
    JIT_ENABLED = False


def njit(func=None, **kwargs):
    """`numba.njit` when numba is importable, identity otherwise.

    Kernels decorated here are only *dispatched* to when `JIT_ENABLED` is
    true; compilation stays lazy so importing the package is cheap.
    """
    kwargs.setdefault("cache", True)
    if numba is None:
        if func is not None:
            return func
        return lambda f: f
    if func is not None:
        return numba.njit(**kwargs)(func)
    return numba.njit(**kwargs)
