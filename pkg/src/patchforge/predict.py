"""Tiled inference with pluggable predictors.

A predictor is any callable ``predictor(chip, ctx) -> probs`` where ``chip``
is a (P, P, B) float32 array with values in [0, 255], ``ctx`` a
:class:`TileContext`, and ``probs`` a (P, P, C) array in [0, 1]. It must
expose ``n_classes``. Predictors without ``thread_safe = True`` are wrapped
in a lock before tiles run concurrently.
"""

from __future__ import annotations

import json
import shlex
import subprocess
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Protocol

import numpy as np

from . import kernels
from ._accel import worker_count
from .errors import DataError
from .raster import GeoTransform, Raster, Window, read_raster_from, read_window, write_raster_to
from .seeding import rng_for
from .vector import ClassCatalog


@dataclass(frozen=True)
class TileContext:
    """Where a chip came from: image pixel offsets (may be negative in padding)
    and the number of quarter turns (``np.rot90`` k) applied to it."""

    row_off: int
    col_off: int
    size: int
    rotation: int = 0


class Predictor(Protocol):
    n_classes: int

    def __call__(self, chip: np.ndarray, ctx: TileContext) -> np.ndarray: ...


# -- built-in predictors -------------------------------------------------------------


class ConstantPredictor:
    thread_safe = True

    def __init__(self, class_index: int, n_classes: int):
        if not 0 <= class_index < n_classes:
            raise ValueError(f"class index {class_index} outside 0..{n_classes - 1}")
        self.class_index = class_index
        self.n_classes = n_classes

    def __call__(self, chip, ctx=None):
        out = np.zeros(chip.shape[:2] + (self.n_classes,), dtype=np.float32)
        out[..., self.class_index] = 1.0
        return out


class ColorRulePredictor:
    """Per-pixel nearest class colour (hard assignment)."""

    thread_safe = True

    def __init__(self, class_colors):
        self.centroids = np.asarray(class_colors, dtype=np.float64)
        if self.centroids.ndim != 2:
            raise ValueError("class colours must be a (classes, bands) table")
        self.n_classes = self.centroids.shape[0]

    @classmethod
    def from_json(cls, obj, class_order=None) -> "ColorRulePredictor":
        colors = obj["class_colors"]
        if isinstance(colors, dict):
            if class_order is None:
                class_order = sorted(colors)
            colors = [colors[name] for name in class_order]
        return cls(colors)

    def __call__(self, chip, ctx=None):
        px = np.asarray(chip, dtype=np.float64)
        d2 = ((px[..., None, :] - self.centroids) ** 2).sum(axis=-1)
        idx = np.argmin(d2, axis=-1)
        return (idx[..., None] == np.arange(self.n_classes)).astype(np.float32)


class OraclePredictor:
    """Returns the true one-hot label, corrupted to a random other class with
    probability ``error_rate`` per pixel."""

    thread_safe = True

    def __init__(self, labels: np.ndarray, n_classes: int, error_rate: float = 0.0, seed: int = 0):
        labels = np.asarray(labels)
        if labels.ndim == 3:
            labels = labels[0] if labels.shape[0] == 1 else np.argmax(labels, axis=0)
        if not 0.0 <= error_rate <= 1.0:
            raise ValueError("error rate must lie in [0, 1]")
        self.labels = labels.astype(np.int64)
        self.n_classes = int(n_classes)
        self.error_rate = float(error_rate)
        self.seed = int(seed)

    @classmethod
    def from_raster(cls, raster: Raster, error_rate: float = 0.0, seed: int = 0) -> "OraclePredictor":
        if raster.bands > 1:
            n = raster.bands
        elif raster.class_names:
            n = len(raster.class_names)
        else:
            n = int(raster.pixels.max()) + 1
        return cls(raster.pixels, n, error_rate, seed)

    def __call__(self, chip, ctx: TileContext):
        truth = read_window(self.labels, Window(ctx.col_off, ctx.row_off, ctx.size, ctx.size), pad="reflect")
        truth = np.rot90(truth, ctx.rotation)
        if self.error_rate > 0 and self.n_classes > 1:
            rng = rng_for(self.seed, ctx.row_off, ctx.col_off, ctx.rotation)
            flip = rng.random(truth.shape) < self.error_rate
            shift = rng.integers(1, self.n_classes, truth.shape)
            truth = np.where(flip, (truth + shift) % self.n_classes, truth)
        return (truth[..., None] == np.arange(self.n_classes)).astype(np.float32)


class SubprocessPredictor:
    """External predictor speaking the raster stream protocol.

    Each chip is written to the child's stdin as one ``.rstr`` record (bands
    first, float32; geotransform origin = tile col/row offset); the child
    answers on stdout with one C-band probability raster per chip.
    """

    thread_safe = False

    def __init__(self, command, n_classes: int):
        self.command = shlex.split(command) if isinstance(command, str) else list(command)
        self.n_classes = n_classes
        self._proc: Optional[subprocess.Popen] = None
        self._lock = threading.Lock()

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(self.command, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        return self._proc

    def __call__(self, chip, ctx: TileContext):
        with self._lock:
            proc = self._ensure()
            gt = GeoTransform(float(ctx.col_off), 1.0, 0.0, float(ctx.row_off), 0.0, -1.0)
            write_raster_to(Raster(np.ascontiguousarray(chip.transpose(2, 0, 1), dtype=np.float32), gt), proc.stdin)
            proc.stdin.flush()
            reply = read_raster_from(proc.stdout)
        if reply is None:
            raise RuntimeError(f"external predictor {self.command[0]!r} closed its output")
        return reply.pixels.transpose(1, 2, 0).astype(np.float32)

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SerializedPredictor:
    """Lock-wrapping adapter for predictors that are not thread safe."""

    thread_safe = True

    def __init__(self, inner):
        self.inner = inner
        self.n_classes = inner.n_classes
        self._lock = threading.Lock()

    def __call__(self, chip, ctx):
        with self._lock:
            return self.inner(chip, ctx)


def predictor_from_spec(spec: str, n_classes: Optional[int] = None, base_dir=".", class_order=None):
    """Build a predictor from ``constant:k``, ``color-rule:cfg.json``,
    ``oracle:labels.rstr,eps[,seed]`` or ``exec:command``."""
    from .raster import load_raster

    kind, _, arg = spec.partition(":")
    base = Path(base_dir)
    if kind == "constant":
        if n_classes is None:
            raise DataError("constant predictor needs the class count")
        return ConstantPredictor(int(arg), n_classes)
    if kind == "color-rule":
        return ColorRulePredictor.from_json(json.loads((base / arg).read_text()), class_order)
    if kind == "oracle":
        parts = arg.split(",")
        eps = float(parts[1]) if len(parts) > 1 else 0.0
        seed = int(parts[2]) if len(parts) > 2 else 0
        return OraclePredictor.from_raster(load_raster(base / parts[0]), eps, seed)
    if kind == "exec":
        if n_classes is None:
            raise DataError("external predictor needs the class count")
        return SubprocessPredictor(arg, n_classes)
    raise DataError(f"unknown predictor spec {spec!r}")


# -- blending and ensembles ---------------------------------------------------------------


def blend_weights(size: int) -> np.ndarray:
    """Separable tent, 1 at the centre and floored at 1/size at the edges."""
    if size < 2:
        raise ValueError("patch size must be at least 2")
    x = np.arange(size, dtype=np.float64)
    eps = 1.0 / size
    w = np.maximum(eps, 1.0 - np.abs(2.0 * x / (size - 1) - 1.0))
    return np.outer(w, w)


def _checked(probs, size: int, n_classes: int) -> np.ndarray:
    probs = np.asarray(probs, dtype=np.float32)
    if probs.shape != (size, size, n_classes):
        raise DataError(f"predictor returned shape {probs.shape}, expected {(size, size, n_classes)}")
    return probs


def rotation_ensemble(predictor, chip: np.ndarray, ctx: Optional[TileContext] = None) -> np.ndarray:
    """Mean of predictions on the chip at 0, 90, 180 and 270 degrees, each counter-rotated."""
    if chip.shape[0] != chip.shape[1]:
        raise DataError(f"rotation ensemble needs a square chip, got {chip.shape[:2]}")
    size = chip.shape[0]
    ctx = ctx or TileContext(0, 0, size)
    total = np.zeros((size, size, predictor.n_classes), dtype=np.float64)
    for k in range(4):
        out = predictor(np.ascontiguousarray(np.rot90(chip, k)), replace(ctx, rotation=k))
        total += np.rot90(_checked(out, size, predictor.n_classes), -k)
    return (total / 4.0).astype(np.float32)


def _chip(pixels: np.ndarray, r: int, c: int, size: int) -> np.ndarray:
    block = read_window(pixels, Window(c, r, size, size), pad="reflect")
    return np.ascontiguousarray(block.transpose(1, 2, 0), dtype=np.float32)


def _run_tiles(pixels, predictor, size, origins, ensemble):
    """Yield (r, c, probs[C, P, P]) in ``origins`` order regardless of thread count."""
    if not getattr(predictor, "thread_safe", False):
        predictor = SerializedPredictor(predictor)

    def one(rc):
        r, c = rc
        chip = _chip(pixels, r, c, size)
        ctx = TileContext(r, c, size)
        out = rotation_ensemble(predictor, chip, ctx) if ensemble else _checked(predictor(chip, ctx), size, predictor.n_classes)
        return r, c, np.ascontiguousarray(out.transpose(2, 0, 1))

    workers = worker_count()
    if workers == 1:
        for rc in origins:
            yield one(rc)
        return
    step = workers * 2
    with ThreadPoolExecutor(workers) as pool:
        for s in range(0, len(origins), step):
            yield from pool.map(one, origins[s:s + step])


def _origins(height: int, width: int, size: int, offset: int = 0) -> list:
    return [(r, c) for r in range(-offset, height, size) for c in range(-offset, width, size)]


def _probability_raster(image: Raster, probs: np.ndarray, class_names=None) -> Raster:
    return Raster(probs.astype(np.float32), image.geotransform, band_names=class_names, class_names=class_names)


def predict_single_pass(image: Raster, predictor, patch_size: int, class_names=None) -> Raster:
    """Non-overlapping grid from the origin; edges reflect-padded then cropped."""
    _, h, w = image.pixels.shape
    out = np.zeros((predictor.n_classes, h, w), dtype=np.float32)
    for r, c, probs in _run_tiles(image.pixels, predictor, patch_size, _origins(h, w, patch_size), False):
        rb, cb = min(r + patch_size, h), min(c + patch_size, w)
        out[:, r:rb, c:cb] = probs[:, : rb - r, : cb - c]
    return _probability_raster(image, out, class_names)


def predict_multi_pass(image: Raster, predictor, patch_size: int, class_names=None) -> Raster:
    """Rotation ensemble on the origin grid and on a grid offset by half a patch
    in both axes, blended per pixel with centre-weighted tent weights.

    Every pixel gets exactly one contribution from each pass; tiles are merged
    in a fixed order so results do not depend on the thread count.
    """
    _, h, w = image.pixels.shape
    weights = blend_weights(patch_size).astype(np.float32)
    num = np.zeros((predictor.n_classes, h, w), dtype=np.float32)
    den = np.zeros((h, w), dtype=np.float32)
    for offset in (0, patch_size // 2):
        origins = _origins(h, w, patch_size, offset)
        for r, c, probs in _run_tiles(image.pixels, predictor, patch_size, origins, True):
            kernels.accumulate_tile(num, den, probs, weights, r, c)
    num /= den
    return _probability_raster(image, num, class_names)


def predict_image(image: Raster, predictor, patch_size: int, mode: str = "multi", class_names=None) -> Raster:
    if mode == "single":
        return predict_single_pass(image, predictor, patch_size, class_names)
    if mode == "multi":
        return predict_multi_pass(image, predictor, patch_size, class_names)
    raise ValueError(f"unknown prediction mode {mode!r}")


def flatten_argmax(probs: Raster, catalog: Optional[ClassCatalog] = None) -> Raster:
    """Single-band class map; ties go to the lowest band index."""
    if catalog is not None and probs.bands != catalog.n_classes:
        raise DataError(f"{probs.bands} probability bands for {catalog.n_classes} classes")
    idx = np.argmax(probs.pixels, axis=0).astype(np.uint8)
    names = catalog.band_order if catalog is not None else probs.class_names
    return Raster(idx, probs.geotransform, band_names=("class",), class_names=names)
