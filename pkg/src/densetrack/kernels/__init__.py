"""Hot per-point kernels with a compiled core and a numpy fallback.

The default ``auto`` backend takes the gather-heavy kernels from the compiled
extension (when it imports) and the matmul-bound ones from numpy, whose BLAS
calls beat the compiled loops. Set ``DENSETRACK_PURE=1`` to force numpy. Callers must go through this module's attributes
(``kernels.corr4d(...)``) so :func:`use_backend` takes effect everywhere.
"""

from __future__ import annotations

import os
from contextlib import contextmanager
from types import ModuleType

from . import _numpy

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

_NAMES = (
    "bilinear_sample",
    "corr_window",
    "corr4d",
    "depth_window",
    "project_rows",
    "dual_conv",
    "knn4",
)

# BLAS-bound kernels where numpy is faster than the compiled loops
_BLAS = ("project_rows", "dual_conv")

window_offsets = _numpy.window_offsets
BACKEND = "numpy"


def available_backends() -> list[str]:
    return ["compiled", "numpy"] if _ckernels is not None else ["numpy"]


def _module(name: str) -> ModuleType:
    if name == "numpy":
        return _numpy
    if name == "compiled":
        if _ckernels is None:
            raise RuntimeError("compiled kernels are not built; run `pip install -e .`")
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def use_backend(name: str) -> None:
    """Select ``numpy``, ``compiled`` or ``auto`` (compiled gathers, numpy matmuls)."""
    global BACKEND
    if name == "auto":
        mod = _module("compiled") if _ckernels is not None else _numpy
        for n in _NAMES:
            globals()[n] = getattr(_numpy if n in _BLAS else mod, n)
    else:
        mod = _module(name)
        for n in _NAMES:
            globals()[n] = getattr(mod, n)
    BACKEND = name


@contextmanager
def backend(name: str):
    prev = BACKEND
    use_backend(name)
    try:
        yield
    finally:
        use_backend(prev)


use_backend("numpy" if os.environ.get("DENSETRACK_PURE") == "1" else "auto")
