"""Georeferenced rasters, the ``.rstr`` interchange codec, windowed reads and
cubic-convolution resampling.

File layout (little-endian)::

    "RSTR" 0x01 | u32 width | u32 height | u32 bands | u8 dtype | u8 has_nodata
    | f64 nodata | 6 x f64 geotransform | payload (band-sequential, row-major)

dtype codes: 0 = uint8, 1 = uint16, 2 = float32. An optional JSON sidecar
``<file>.json`` carries ``band_names`` and ``class_names``.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Optional, Sequence

import numpy as np

from . import kernels
from .errors import (
    BadMagicError,
    DataError,
    RasterFormatError,
    TruncatedPayloadError,
    UnsupportedDtypeError,
    WindowError,
)

MAGIC = b"RSTR"
VERSION = 1
HEADER = struct.Struct("<4sBIIIBBd6d")

DTYPE_CODES = {0: np.dtype("<u1"), 1: np.dtype("<u2"), 2: np.dtype("<f4")}
CODE_OF = {np.dtype(np.uint8): 0, np.dtype(np.uint16): 1, np.dtype(np.float32): 2}
DTYPE_NAMES = {0: "u8", 1: "u16", 2: "f32"}

_SNAP = 1e-9


def _snap(v):
    r = np.round(v)
    return np.where(np.abs(v - r) < _SNAP, r, v)


@dataclass(frozen=True)
class GeoTransform:
    """Six-term affine map between pixel (col, row) and map (x, y) coordinates.

    Field order follows the usual GDAL convention.
    """

    origin_x: float = 0.0
    pixel_width: float = 1.0
    row_rotation: float = 0.0
    origin_y: float = 0.0
    col_rotation: float = 0.0
    pixel_height_neg: float = -1.0

    @classmethod
    def from_tuple(cls, values: Sequence[float]) -> "GeoTransform":
        if len(values) != 6:
            raise DataError(f"geotransform needs 6 values, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_tuple(self) -> tuple:
        return (
            self.origin_x,
            self.pixel_width,
            self.row_rotation,
            self.origin_y,
            self.col_rotation,
            self.pixel_height_neg,
        )

    @property
    def north_up(self) -> bool:
        return self.row_rotation == 0.0 and self.col_rotation == 0.0

    def to_map(self, col, row):
        col = np.asarray(col, dtype=float)
        row = np.asarray(row, dtype=float)
        x = self.origin_x + col * self.pixel_width + row * self.row_rotation
        y = self.origin_y + col * self.col_rotation + row * self.pixel_height_neg
        return x, y

    def to_pixel(self, x, y):
        """Inverse of :meth:`to_map`; returns fractional (col, row).

        Results within 1e-9 of an integer are snapped so that integer pixel
        coordinates survive a round trip exactly.
        """
        det = self.pixel_width * self.pixel_height_neg - self.row_rotation * self.col_rotation
        if det == 0:
            raise DataError("singular geotransform")
        dx = np.asarray(x, dtype=float) - self.origin_x
        dy = np.asarray(y, dtype=float) - self.origin_y
        col = (dx * self.pixel_height_neg - dy * self.row_rotation) / det
        row = (dy * self.pixel_width - dx * self.col_rotation) / det
        return _snap(col), _snap(row)

    def for_window(self, window: "Window") -> "GeoTransform":
        x, y = self.to_map(window.col_off, window.row_off)
        return replace(self, origin_x=float(x), origin_y=float(y))

    def require_north_up(self) -> None:
        if not self.north_up:
            raise DataError("rotated geotransforms are not supported by this operation")


@dataclass(frozen=True)
class Window:
    col_off: int
    row_off: int
    width: int
    height: int

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise WindowError(f"window must be positive, got {self.width}x{self.height}")

    @property
    def col_end(self) -> int:
        return self.col_off + self.width

    @property
    def row_end(self) -> int:
        return self.row_off + self.height

    def contains(self, other: "Window") -> bool:
        return (
            other.col_off >= self.col_off
            and other.row_off >= self.row_off
            and other.col_end <= self.col_end
            and other.row_end <= self.row_end
        )

    def intersects(self, other: "Window") -> bool:
        return (
            other.col_off < self.col_end
            and self.col_off < other.col_end
            and other.row_off < self.row_end
            and self.row_off < other.row_end
        )


@dataclass(frozen=True, eq=False)
class Raster:
    """Immutable multi-band raster. ``pixels`` has shape (bands, height, width)."""

    pixels: np.ndarray
    geotransform: GeoTransform = field(default_factory=GeoTransform)
    nodata: Optional[float] = None
    band_names: Optional[tuple] = None
    class_names: Optional[tuple] = None

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[None]
        if px.ndim != 3:
            raise DataError(f"raster pixels must be 2-D or 3-D, got shape {px.shape}")
        if px.dtype.newbyteorder("=") not in CODE_OF:
            raise UnsupportedDtypeError(f"unsupported raster dtype {px.dtype}")
        if min(px.shape) < 1:
            raise DataError(f"empty raster of shape {px.shape}")
        px = np.ascontiguousarray(px, dtype=px.dtype.newbyteorder("="))
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)
        for name in ("band_names", "class_names"):
            value = getattr(self, name)
            if value is not None:
                object.__setattr__(self, name, tuple(value))

    @property
    def bands(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]

    @property
    def dtype(self) -> np.dtype:
        return self.pixels.dtype

    @property
    def dtype_code(self) -> int:
        return CODE_OF[self.pixels.dtype]

    @property
    def window(self) -> Window:
        return Window(0, 0, self.width, self.height)

    def equals(self, other: "Raster") -> bool:
        """Value identity: header fields and payload bits."""
        same_nodata = (self.nodata is None and other.nodata is None) or (
            self.nodata is not None
            and other.nodata is not None
            and np.float64(self.nodata).tobytes() == np.float64(other.nodata).tobytes()
        )
        return (
            self.pixels.shape == other.pixels.shape
            and self.dtype == other.dtype
            and self.geotransform == other.geotransform
            and same_nodata
            and self.pixels.tobytes() == other.pixels.tobytes()
        )


# -- codec ------------------------------------------------------------------


def encode_raster(raster: Raster) -> bytes:
    header = HEADER.pack(
        MAGIC,
        VERSION,
        raster.width,
        raster.height,
        raster.bands,
        raster.dtype_code,
        0 if raster.nodata is None else 1,
        0.0 if raster.nodata is None else float(raster.nodata),
        *raster.geotransform.as_tuple(),
    )
    payload = raster.pixels.astype(DTYPE_CODES[raster.dtype_code], copy=False).tobytes()
    return header + payload


def _parse_header(buf: bytes):
    if len(buf) < 5 or buf[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if buf[4] != VERSION:
        raise RasterFormatError(f"unsupported format version {buf[4]}")
    if len(buf) < HEADER.size:
        raise TruncatedPayloadError(f"header truncated: {len(buf)} of {HEADER.size} bytes")
    _, _, width, height, bands, code, has_nodata, nodata, *gt = HEADER.unpack_from(buf)
    if code not in DTYPE_CODES:
        raise UnsupportedDtypeError(f"unsupported dtype code {code}")
    if has_nodata not in (0, 1):
        raise RasterFormatError(f"has_nodata flag must be 0 or 1, got {has_nodata}")
    if min(width, height, bands) < 1:
        raise RasterFormatError(f"empty raster {width}x{height}x{bands}")
    nbytes = width * height * bands * DTYPE_CODES[code].itemsize
    return (width, height, bands, code, has_nodata, nodata, gt), nbytes


def _build(meta, payload: bytes) -> Raster:
    width, height, bands, code, has_nodata, nodata, gt = meta
    pixels = np.frombuffer(payload, dtype=DTYPE_CODES[code]).reshape(bands, height, width)
    return Raster(
        pixels=pixels.astype(pixels.dtype.newbyteorder("=")),
        geotransform=GeoTransform.from_tuple(gt),
        nodata=float(nodata) if has_nodata else None,
    )


def decode_raster(buf: bytes) -> Raster:
    meta, nbytes = _parse_header(buf)
    payload = buf[HEADER.size:]
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"payload truncated: {len(payload)} of {nbytes} bytes")
    if len(payload) > nbytes:
        raise RasterFormatError(f"{len(payload) - nbytes} trailing bytes after payload")
    return _build(meta, payload)


def read_raster_from(stream: BinaryIO) -> Optional[Raster]:
    """Read one raster from a byte stream; ``None`` on clean end of stream."""
    head = stream.read(HEADER.size)
    if not head:
        return None
    meta, nbytes = _parse_header(head)
    payload = stream.read(nbytes)
    if len(payload) < nbytes:
        raise TruncatedPayloadError(f"payload truncated: {len(payload)} of {nbytes} bytes")
    return _build(meta, payload)


def write_raster_to(raster: Raster, stream: BinaryIO) -> None:
    stream.write(encode_raster(raster))


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def load_raster(path) -> Raster:
    path = Path(path)
    raster = decode_raster(path.read_bytes())
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        raster = replace(
            raster,
            band_names=meta.get("band_names"),
            class_names=meta.get("class_names"),
        )
    return raster


def write_raster(raster: Raster, path) -> None:
    path = Path(path)
    path.write_bytes(encode_raster(raster))
    if raster.band_names is not None or raster.class_names is not None:
        meta = {}
        if raster.band_names is not None:
            meta["band_names"] = list(raster.band_names)
        if raster.class_names is not None:
            meta["class_names"] = list(raster.class_names)
        sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n")


# -- windowed reads -----------------------------------------------------------


def reflect_index(idx, n: int) -> np.ndarray:
    """Mirror indices into ``[0, n)`` without repeating the edge sample."""
    idx = np.asarray(idx, dtype=np.int64)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    m = np.abs(idx) % period
    return np.where(m >= n, period - m, m)


def read_window(source, window: Window, pad: str = "error", fill: float = 0):
    """Return the (bands, height, width) block under ``window``.

    ``pad`` is ``"error"`` (window must lie inside), ``"reflect"`` or
    ``"constant"`` (out-of-bounds pixels set to ``fill``).
    """
    arr = source.pixels if isinstance(source, Raster) else np.asarray(source)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[None]
    _, h, w = arr.shape
    inside = Window(0, 0, w, h).contains(window)
    if inside:
        out = arr[:, window.row_off:window.row_end, window.col_off:window.col_end].copy()
    elif pad == "error":
        raise WindowError(f"{window} extends outside a {w}x{h} raster")
    elif pad == "reflect":
        rows = reflect_index(np.arange(window.row_off, window.row_end), h)
        cols = reflect_index(np.arange(window.col_off, window.col_end), w)
        out = arr[:, rows[:, None], cols[None, :]]
    elif pad == "constant":
        out = np.full((arr.shape[0], window.height, window.width), fill, dtype=arr.dtype)
        r0, r1 = max(window.row_off, 0), min(window.row_end, h)
        c0, c1 = max(window.col_off, 0), min(window.col_end, w)
        if r0 < r1 and c0 < c1:
            out[:, r0 - window.row_off:r1 - window.row_off, c0 - window.col_off:c1 - window.col_off] = (
                arr[:, r0:r1, c0:c1]
            )
    else:
        raise ValueError(f"unknown pad mode {pad!r}")
    return out[0] if squeeze else out


# -- cubic convolution ----------------------------------------------------------

KEYS_A = -0.5
_EDGE_PAD = 3


def keys_kernel(x, a: float = KEYS_A):
    """Cubic convolution kernel with parameter ``a`` (support [-2, 2])."""
    x = np.abs(np.asarray(x, dtype=float))
    x2, x3 = x * x, x * x * x
    near = (a + 2.0) * x3 - (a + 3.0) * x2 + 1.0
    far = a * x3 - 5.0 * a * x2 + 8.0 * a * x - 4.0 * a
    return np.where(x <= 1.0, near, np.where(x < 2.0, far, 0.0))


def _taps(positions, n: int):
    """Padded-array tap indices and weights for fractional sample positions."""
    positions = np.asarray(positions, dtype=float)
    base = np.floor(positions)
    t = positions - base
    weights = np.stack(
        [keys_kernel(t + 1.0), keys_kernel(t), keys_kernel(1.0 - t), keys_kernel(2.0 - t)],
        axis=1,
    )
    idx = base.astype(np.int64)[:, None] - 1 + np.arange(4)[None, :] + _EDGE_PAD
    idx = np.clip(idx, 0, n + 2 * _EDGE_PAD - 1)
    return idx, weights


def _pad_axis(a: np.ndarray, axis: int, edge: str) -> np.ndarray:
    if edge == "reflect":
        widths = [(0, 0)] * a.ndim
        widths[axis] = (_EDGE_PAD, _EDGE_PAD)
        return np.pad(a, widths, mode="reflect")
    if edge != "linear":
        raise ValueError(f"unknown edge mode {edge!r}")
    a = np.moveaxis(a, axis, 0)
    k = np.arange(_EDGE_PAD, 0, -1, dtype=float).reshape(-1, *([1] * (a.ndim - 1)))
    left = a[0] + k * (a[0] - a[1])
    right = a[-1] + k[::-1] * (a[-1] - a[-2])
    return np.moveaxis(np.concatenate([left, a, right], axis=0), 0, axis)


def cubic_sample(plane, rows, cols, edge: str = "linear") -> np.ndarray:
    """Evaluate the cubic interpolant of a 2-D plane on the grid ``rows x cols``.

    ``rows``/``cols`` are fractional pixel indices (integer = pixel centre).
    ``edge="linear"`` extends the plane by linear extrapolation from the two
    outermost samples, so linear signals are reproduced up to the border;
    ``edge="reflect"`` mirrors interior samples instead.
    """
    plane = np.asarray(plane, dtype=float)
    h, w = plane.shape
    if h < 2 or w < 2:
        raise DataError(f"cubic interpolation needs at least 2x2 pixels, got {w}x{h}")
    padded = _pad_axis(_pad_axis(plane, 0, edge), 1, edge)
    ri, rw = _taps(np.atleast_1d(rows), h)
    ci, cw = _taps(np.atleast_1d(cols), w)
    return kernels.cubic_apply(np.ascontiguousarray(padded), ri, rw, ci, cw)


def resample_cubic(raster: Raster, target_pixel_size: float, edge: str = "linear") -> Raster:
    """Resample to square pixels of ``target_pixel_size`` map units.

    Output keeps the source origin; pixel centres are aligned so that an
    identity scale reproduces the source exactly.
    """
    if not target_pixel_size > 0:
        raise DataError("target pixel size must be positive")
    gt = raster.geotransform
    gt.require_north_up()
    if raster.width < 2 or raster.height < 2:
        raise DataError(f"cannot resample a degenerate {raster.width}x{raster.height} raster")
    sx = gt.pixel_width / target_pixel_size
    sy = -gt.pixel_height_neg / target_pixel_size
    out_w = max(1, int(math.floor(raster.width * sx + 0.5)))
    out_h = max(1, int(math.floor(raster.height * sy + 0.5)))
    cols = (np.arange(out_w) + 0.5) / sx - 0.5
    rows = (np.arange(out_h) + 0.5) / sy - 0.5
    planes = [cubic_sample(raster.pixels[b], rows, cols, edge) for b in range(raster.bands)]
    data = np.stack(planes)
    if raster.dtype.kind in "ui":
        info = np.iinfo(raster.dtype)
        data = np.clip(np.round(data), info.min, info.max)
    out_gt = GeoTransform(gt.origin_x, target_pixel_size, 0.0, gt.origin_y, 0.0, -target_pixel_size)
    return Raster(
        pixels=data.astype(raster.dtype),
        geotransform=out_gt,
        nodata=raster.nodata,
        band_names=raster.band_names,
        class_names=raster.class_names,
    )
