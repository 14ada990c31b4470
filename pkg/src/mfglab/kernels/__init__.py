"""Hot loops with a numba implementation and a pure-numpy fallback.

``MFGLAB_NUMBA=0`` in the environment selects the numpy versions; so does a
missing numba install. :func:`use_backend` switches temporarily (tests and
benchmarks compare the two).
"""

from __future__ import annotations

import contextlib
import importlib
import os

from . import _numpy
from ._tables import (
    KERNEL_DISTANCE,
    KERNEL_GAUSSIAN,
    KERNEL_NONE,
    KERNEL_QUADRATIC,
    MODE_EXACT,
    MODE_FIELD,
    MODE_NONE,
    CostTables,
    field_components,
    make_tables,
)

try:
    _numba = importlib.import_module("._numba", __name__)
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

NUMBA_AVAILABLE = _numba is not None
_active = _numba if NUMBA_AVAILABLE and os.environ.get("MFGLAB_NUMBA", "1") != "0" else _numpy

_NAMES = (
    "hjb_1d",
    "hjb_2d",
    "characteristics",
    "transcribe",
    "path_costs",
    "build_field",
    "coupling_batch",
    "bellman_ford",
)


def backend() -> str:
    return "numba" if _active is _numba else "numpy"


def set_backend(name: str) -> None:
    global _active
    if name == "numba":
        if not NUMBA_AVAILABLE:
            raise RuntimeError("numba is not installed")
        _active = _numba
    elif name == "numpy":
        _active = _numpy
    else:
        raise ValueError(f"unknown backend {name!r}")


@contextlib.contextmanager
def use_backend(name: str):
    previous = backend()
    set_backend(name)
    try:
        yield
    finally:
        set_backend(previous)


def kernel(name: str):
    return getattr(_active, name)


def __getattr__(name):
    if name in _NAMES:
        return getattr(_active, name)
    raise AttributeError(name)


__all__ = [
    "CostTables",
    "make_tables",
    "field_components",
    "backend",
    "set_backend",
    "use_backend",
    "kernel",
    "NUMBA_AVAILABLE",
    "MODE_NONE",
    "MODE_EXACT",
    "MODE_FIELD",
    "KERNEL_NONE",
    "KERNEL_GAUSSIAN",
    "KERNEL_DISTANCE",
    "KERNEL_QUADRATIC",
]
