"""Seeded, label-consistent chip augmentation.

Every plan holds one photometric, one noise and one geometric transform, and
with probability one half an atmospheric one (blur or fog, equally likely).
Parameter ranges are configuration defaults in :class:`AugConfig`; they are
tunable stand-ins, not measured values.

Image values are assumed to lie in [0, 255]. Geometric transforms move the
image with bilinear interpolation and the labels with nearest neighbour, so
labels stay one-hot; everything else touches the image only.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter

from . import kernels
from ._accel import worker_count
from .patchgen import Batch, ChipPair
from .seeding import derive_seed, rng_for
from .vector import onehot

PHOTOMETRIC = ("gamma", "sigmoid_contrast", "linear_contrast", "multiply", "histogram_equalization")
NOISE = (
    "salt_and_pepper",
    "elementwise_multiply",
    "additive_gaussian",
    "additive_poisson",
    "per_channel_multiply",
)
GEOMETRIC = ("affine", "elastic", "flip")
ATMOSPHERIC = ("blur", "fog")

FOG_BRIGHTNESS = 235.0


@dataclass(frozen=True)
class AugConfig:
    gamma: tuple = (0.5, 2.0)
    sigmoid_gain: tuple = (5.0, 15.0)
    sigmoid_cutoff: tuple = (0.35, 0.65)
    linear_alpha: tuple = (0.6, 1.4)
    multiply: tuple = (0.6, 1.4)
    salt_pepper_p: tuple = (0.0, 0.02)
    gaussian_sigma: tuple = (0.0, 12.75)
    poisson_lambda: tuple = (0.0, 8.0)
    elementwise_multiply: tuple = (0.9, 1.1)
    rotation_deg: tuple = (-25.0, 25.0)
    scale: tuple = (0.8, 1.2)
    translate_frac: tuple = (-0.1, 0.1)
    shear_deg: tuple = (-8.0, 8.0)
    elastic_alpha: tuple = (10.0, 30.0)
    elastic_sigma: tuple = (4.0, 8.0)
    flip_p: float = 0.5
    atmospheric_p: float = 0.5
    blur_sigma: tuple = (0.5, 2.0)
    fog_strength: tuple = (0.1, 0.5)

    @classmethod
    def with_overrides(cls, overrides: Optional[dict] = None) -> "AugConfig":
        overrides = dict(overrides or {})
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(overrides) - known)
        if unknown:
            raise ValueError(f"unknown augmentation parameters: {unknown}")
        fixed = {k: tuple(v) if isinstance(v, list) else v for k, v in overrides.items()}
        return replace(cls(), **fixed)


DEFAULT_CONFIG = AugConfig()


@dataclass(frozen=True)
class Transform:
    name: str
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AugPlan:
    photometric: Transform
    noise: Transform
    geometric: Transform
    atmospheric: Optional[Transform]
    seed: int = 0

    @classmethod
    def identity(cls) -> "AugPlan":
        return cls(
            Transform("gamma", {"gamma": 1.0}),
            Transform("additive_gaussian", {"sigma": 0.0}),
            Transform("affine", {"rotation": 0.0, "scale": 1.0, "tx": 0.0, "ty": 0.0, "shear": 0.0}),
            None,
            0,
        )

    def to_json(self) -> dict:
        return asdict(self)


def _u(rng, bounds) -> float:
    return float(rng.uniform(bounds[0], bounds[1]))


def sample_plan(seed: int, config: AugConfig = DEFAULT_CONFIG) -> AugPlan:
    """Deterministic plan for ``seed``; choices are uniform within each category."""
    rng = np.random.default_rng(seed)
    name = PHOTOMETRIC[rng.integers(len(PHOTOMETRIC))]
    params = {
        "gamma": lambda: {"gamma": _u(rng, config.gamma)},
        "sigmoid_contrast": lambda: {
            "gain": _u(rng, config.sigmoid_gain),
            "cutoff": _u(rng, config.sigmoid_cutoff),
        },
        "linear_contrast": lambda: {"alpha": _u(rng, config.linear_alpha)},
        "multiply": lambda: {"factor": _u(rng, config.multiply)},
        "histogram_equalization": dict,
    }[name]()
    photometric = Transform(name, params)

    name = NOISE[rng.integers(len(NOISE))]
    params = {
        "salt_and_pepper": lambda: {"p": _u(rng, config.salt_pepper_p)},
        "elementwise_multiply": lambda: {
            "low": config.elementwise_multiply[0],
            "high": config.elementwise_multiply[1],
        },
        "additive_gaussian": lambda: {"sigma": _u(rng, config.gaussian_sigma)},
        "additive_poisson": lambda: {"lam": _u(rng, config.poisson_lambda)},
        "per_channel_multiply": lambda: {"low": config.multiply[0], "high": config.multiply[1]},
    }[name]()
    noise = Transform(name, params)

    name = GEOMETRIC[rng.integers(len(GEOMETRIC))]
    params = {
        "affine": lambda: {
            "rotation": _u(rng, config.rotation_deg),
            "scale": _u(rng, config.scale),
            "tx": _u(rng, config.translate_frac),
            "ty": _u(rng, config.translate_frac),
            "shear": _u(rng, config.shear_deg),
        },
        "elastic": lambda: {"alpha": _u(rng, config.elastic_alpha), "sigma": _u(rng, config.elastic_sigma)},
        "flip": lambda: {
            "horizontal": bool(rng.random() < config.flip_p),
            "vertical": bool(rng.random() < config.flip_p),
        },
    }[name]()
    geometric = Transform(name, params)

    atmospheric = None
    if rng.random() < config.atmospheric_p:
        if rng.random() < 0.5:
            atmospheric = Transform("blur", {"sigma": _u(rng, config.blur_sigma)})
        else:
            atmospheric = Transform("fog", {"strength": _u(rng, config.fog_strength)})

    return AugPlan(photometric, noise, geometric, atmospheric, int(rng.integers(2**63 - 1)))


# -- image-only transforms -------------------------------------------------------


def _equalize(channel: np.ndarray) -> np.ndarray:
    q = np.clip(np.round(channel), 0, 255).astype(np.int64)
    hist = np.bincount(q.ravel(), minlength=256)
    cdf = np.cumsum(hist)
    cdf_min = cdf[hist > 0][0]
    n = q.size
    if n == cdf_min:
        return channel
    lut = np.round((cdf - cdf_min) / (n - cdf_min) * 255.0)
    return lut[q]


def photometric(img: np.ndarray, t: Transform) -> np.ndarray:
    p = t.params
    if t.name == "gamma":
        return 255.0 * (img / 255.0) ** p["gamma"]
    if t.name == "sigmoid_contrast":
        return 255.0 / (1.0 + np.exp(p["gain"] * (p["cutoff"] - img / 255.0)))
    if t.name == "linear_contrast":
        return 127.5 + p["alpha"] * (img - 127.5)
    if t.name == "multiply":
        return img * p["factor"]
    if t.name == "histogram_equalization":
        return np.stack([_equalize(img[..., b]) for b in range(img.shape[-1])], axis=-1)
    raise ValueError(f"unknown photometric transform {t.name!r}")


def noise(img: np.ndarray, t: Transform, rng: np.random.Generator) -> np.ndarray:
    p = t.params
    if t.name == "salt_and_pepper":
        hit = rng.random(img.shape) < p["p"]
        salt = rng.random(img.shape) < 0.5
        return np.where(hit, np.where(salt, 255.0, 0.0), img)
    if t.name == "elementwise_multiply":
        return img * rng.uniform(p["low"], p["high"], img.shape)
    if t.name == "additive_gaussian":
        return img + rng.normal(0.0, 1.0, img.shape) * p["sigma"]
    if t.name == "additive_poisson":
        # centred so the mean brightness is unchanged
        return img + rng.poisson(p["lam"], img.shape) - p["lam"]
    if t.name == "per_channel_multiply":
        return img * rng.uniform(p["low"], p["high"], img.shape[-1])
    raise ValueError(f"unknown noise transform {t.name!r}")


def value_noise(size: int, rng: np.random.Generator, octaves: int = 4) -> np.ndarray:
    """Multi-octave value noise on a size x size grid, normalised to [0, 1]."""
    out = np.zeros((size, size))
    amp = 1.0
    for o in range(octaves):
        cells = 2 ** (o + 2)
        lattice = rng.random((cells + 1, cells + 1, 1))
        pos = np.arange(size) * (cells / max(size - 1, 1))
        rr, cc = np.meshgrid(pos, pos, indexing="ij")
        out += amp * kernels.remap_bilinear(lattice, rr, cc, 0.0)[..., 0]
        amp *= 0.5
    lo, hi = out.min(), out.max()
    return (out - lo) / (hi - lo) if hi > lo else np.zeros_like(out)


def atmospheric(img: np.ndarray, t: Optional[Transform], rng: np.random.Generator) -> np.ndarray:
    if t is None:
        return img
    if t.name == "blur":
        return gaussian_filter(img, sigma=(t.params["sigma"], t.params["sigma"], 0.0), mode="reflect")
    if t.name == "fog":
        alpha = t.params["strength"] * value_noise(img.shape[0], rng)[..., None]
        return img * (1.0 - alpha) + FOG_BRIGHTNESS * alpha
    raise ValueError(f"unknown atmospheric transform {t.name!r}")


# -- geometric ------------------------------------------------------------------


def affine_source_coords(shape, rotation, scale, tx, ty, shear):
    """Source (row, col) for every output pixel of an affine warp about the chip centre.

    Angles in degrees; translations as fractions of the chip side.
    """
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    th, sh = math.radians(rotation), math.radians(shear)
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    forward = rot @ np.array([[1.0, math.tan(sh)], [0.0, 1.0]]) @ np.diag([scale, scale])
    inv = np.linalg.inv(forward)
    rr, cc = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    x = cc - cx - tx * w
    y = rr - cy - ty * h
    src_x = inv[0, 0] * x + inv[0, 1] * y + cx
    src_y = inv[1, 0] * x + inv[1, 1] * y + cy
    return src_y, src_x


def elastic_source_coords(shape, alpha, sigma, rng):
    h, w = shape
    dx = gaussian_filter(rng.uniform(-1.0, 1.0, shape), sigma, mode="constant") * alpha
    dy = gaussian_filter(rng.uniform(-1.0, 1.0, shape), sigma, mode="constant") * alpha
    rr, cc = np.meshgrid(np.arange(h, dtype=float), np.arange(w, dtype=float), indexing="ij")
    return rr + dy, cc + dx


def geometric(img, idx, t: Transform, rng, background_index: int):
    """Warp image (bilinear, fill 0) and class-index map (nearest, fill background)."""
    if t.name == "flip":
        if t.params.get("horizontal"):
            img, idx = img[:, ::-1], idx[:, ::-1]
        if t.params.get("vertical"):
            img, idx = img[::-1], idx[::-1]
        return np.ascontiguousarray(img), np.ascontiguousarray(idx)
    if t.name == "affine":
        src_r, src_c = affine_source_coords(idx.shape, **t.params)
    elif t.name == "elastic":
        src_r, src_c = elastic_source_coords(idx.shape, t.params["alpha"], t.params["sigma"], rng)
    else:
        raise ValueError(f"unknown geometric transform {t.name!r}")
    warped = kernels.remap_bilinear(np.ascontiguousarray(img), src_r, src_c, 0.0)
    labels = kernels.remap_nearest(np.ascontiguousarray(idx, dtype=np.int64), src_r, src_c, background_index)
    return warped, labels


def apply(plan: AugPlan, chip: ChipPair, *, background_index: int) -> ChipPair:
    """Apply ``plan`` to a chip; image stays in [0, 255], labels stay one-hot."""
    n_classes = chip.label.shape[-1]
    img = np.asarray(chip.image, dtype=np.float64)
    img = np.clip(photometric(img, plan.photometric), 0.0, 255.0)
    img = np.clip(noise(img, plan.noise, rng_for(plan.seed, 1)), 0.0, 255.0)
    img = np.clip(atmospheric(img, plan.atmospheric, rng_for(plan.seed, 2)), 0.0, 255.0)
    idx = np.argmax(chip.label, axis=-1)
    img, idx = geometric(img, idx, plan.geometric, rng_for(plan.seed, 3), background_index)
    img = np.nan_to_num(np.clip(img, 0.0, 255.0), nan=0.0)
    label = np.moveaxis(onehot(idx, n_classes, dtype=chip.label.dtype), 0, -1)
    return ChipPair(chip.patch_id, img.astype(np.float32), label, chip.seed)


def chip_plan_seed(global_seed: int, patch_id: int, epoch: int) -> int:
    return derive_seed(global_seed, patch_id, epoch)


def augment_batch(
    batch: Batch,
    global_seed: int,
    epoch: int = 0,
    *,
    background_index: int,
    config: AugConfig = DEFAULT_CONFIG,
) -> Batch:
    """Augment every chip with a plan keyed by (global_seed, patch_id, epoch)."""

    def one(chip: ChipPair) -> ChipPair:
        plan = sample_plan(chip_plan_seed(global_seed, chip.patch_id, epoch), config)
        return apply(plan, chip, background_index=background_index)

    chips = batch.chips()
    workers = worker_count()
    if workers > 1 and len(chips) > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(one, chips))
    else:
        out = [one(c) for c in chips]
    return Batch.from_chips(out)
