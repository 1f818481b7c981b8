"""Convolution kernel backends.

Two interchangeable implementations of the same four-function API
(conv2d_forward/backward, tconv2d_forward/backward):

* ``compiled`` - Cython direct-summation loops, preferred when built.
* ``numpy``   - patch-matrix fallback, always available.

The active backend is chosen at import time. Set LINKSEG_KERNELS=numpy or
LINKSEG_KERNELS=compiled to force one; the default "auto" takes the
compiled core when the extension imports.
"""
import contextlib
import os

from . import numpy_backend

try:
    from . import compiled as compiled_backend
except ImportError:
    compiled_backend = None

HAVE_COMPILED = compiled_backend is not None


def available_backends():
    names = ["numpy"]
    if HAVE_COMPILED:
        names.insert(0, "compiled")
    return names


def get_backend(name="auto"):
    """Resolve a backend module by name ("auto", "numpy", "compiled")."""
    if name in (None, "", "auto"):
        return compiled_backend if HAVE_COMPILED else numpy_backend
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        if not HAVE_COMPILED:
            raise RuntimeError("compiled kernel backend requested but the extension is not built")
        return compiled_backend
    raise ValueError(f"unknown kernel backend {name!r} (choose auto, numpy or compiled)")


active = get_backend(os.environ.get("LINKSEG_KERNELS", "auto"))
BACKEND = active.NAME


@contextlib.contextmanager
def use_backend(name):
    """Temporarily swap the process-wide active backend.

    "auto" (or None) keeps whatever is currently active, so a swap never
    silently overrides a LINKSEG_KERNELS choice or an enclosing swap.
    """
    global active, BACKEND
    prev = active
    active = prev if name in (None, "", "auto") else get_backend(name)
    BACKEND = active.NAME
    try:
        yield active
    finally:
        active = prev
        BACKEND = prev.NAME
