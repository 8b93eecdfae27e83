"""Hot inner loops, each available as a numba and a numpy implementation.

The active backend is chosen once at import time (see ``patchforge._accel``).
Both backends are importable directly for parity tests and benchmarking via
:func:`get_backend`.
"""

from types import ModuleType

from .._accel import HAVE_NUMBA, USE_NUMBA
from . import _numpy

if USE_NUMBA:
    from . import _numba as _active

    BACKEND = "numba"
else:
    _active = _numpy
    BACKEND = "numpy"

cubic_apply = _active.cubic_apply
even_odd_mask = _active.even_odd_mask
points_in_edges = _active.points_in_edges
remap_bilinear = _active.remap_bilinear
remap_nearest = _active.remap_nearest
accumulate_tile = _active.accumulate_tile

KERNELS = (
    "cubic_apply",
    "even_odd_mask",
    "points_in_edges",
    "remap_bilinear",
    "remap_nearest",
    "accumulate_tile",
)


def available_backends() -> list[str]:
    return ["numpy", "numba"] if HAVE_NUMBA else ["numpy"]


def get_backend(name: str) -> ModuleType:
    if name == "numpy":
        return _numpy
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba is not installed")
        from . import _numba

        return _numba
    raise ValueError(f"unknown backend {name!r}")


__all__ = ["BACKEND", "KERNELS", "available_backends", "get_backend", *KERNELS]
