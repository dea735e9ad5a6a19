"""Hot inner kernels: layer norm, masked softmax and the optimizer updates.

The compiled ``_native`` extension is used when it was built; otherwise the
numpy implementation in ``_numpy`` is selected at import time. Set
``CTXFUSION_KERNELS=numpy`` to force the fallback.
"""
import importlib
import os

from . import _numpy

__all__ = ["active", "available", "get", "use"]


def _load_native():
    try:
        return importlib.import_module("ctxfusion.kernels._native")
    except ImportError:
        return None


_native = _load_native()


def available():
    """Names of the kernel backends that can be selected."""
    return ["numpy"] + (["native"] if _native is not None else [])


def get(name):
    if name == "numpy":
        return _numpy
    if name == "native":
        if _native is None:
            raise RuntimeError("native kernels were not compiled; reinstall with Cython available")
        return _native
    raise ValueError(f"unknown kernel backend {name!r}")


def _initial():
    choice = os.environ.get("CTXFUSION_KERNELS", "auto")
    if choice == "auto":
        return _native if _native is not None else _numpy
    return get(choice)


active = _initial()


def use(name):
    """Switch the process-wide backend. Returns the previously active name."""
    global active
    previous = active.NAME
    active = get(name)
    return previous
