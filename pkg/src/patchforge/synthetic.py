"""Synthetic landscapes with a controllable class-imbalance profile.

The background class is laid out as a grid of block polygons; every other
feature is a rectangle punched out of one block as a hole, so the features
partition the domain exactly and class areas are known in closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .raster import GeoTransform, Raster, Window
from .vector import ClassCatalog, Feature, FeatureSet, rasterize_classes

HECTARE = 10_000.0

# (name, feature count, area in hectares); band order is alphabetical.
REGION_CLASSES = (
    ("Banana Plantations", 243, 1_860.0),
    ("Berry Crops", 69, 92.0),
    ("Plantation Forestry", 118, 981.0),
    ("Sugarcane Crops", 515, 7_621.0),
    ("Tea Tree", 42, 188.0),
    ("Tree Crops - Mature", 2_289, 6_249.0),
    ("Tree Crops - Young", 280, 988.0),
    ("Vineyards", 33, 146.0),
    ("Other", 323, 281_344.0),
)
REGION_BACKGROUND = "Other"

PALETTE = np.array(
    [
        [60, 140, 60],
        [170, 60, 120],
        [200, 190, 160],
        [25, 90, 40],
        [140, 200, 80],
        [110, 150, 110],
        [40, 110, 70],
        [120, 170, 60],
        [150, 110, 80],
        [90, 90, 200],
    ],
    dtype=float,
)


@dataclass(frozen=True, eq=False)
class Landscape:
    features: FeatureSet
    catalog: ClassCatalog
    side: float  # domain is [0, side] x [0, side] in map units

    def geotransform(self, pixel_size: float) -> GeoTransform:
        return GeoTransform(0.0, pixel_size, 0.0, self.side, 0.0, -pixel_size)

    def window(self, pixel_size: float) -> Window:
        n = int(math.ceil(self.side / pixel_size - 1e-9))
        return Window(0, 0, n, n)


def _rect(x0, y0, w, h) -> np.ndarray:
    return np.array([[x0, y0], [x0 + w, y0], [x0 + w, y0 + h], [x0, y0 + h]], dtype=float)


def _feature_areas(total, count, cap, rng) -> np.ndarray:
    weights = rng.lognormal(0.0, 0.4, size=count)
    areas = total * weights / weights.sum()
    for _ in range(50):
        over = areas > cap
        if not over.any():
            break
        excess = (areas[over] - cap).sum()
        areas[over] = cap
        free = ~over & (areas < cap)
        if not free.any():
            raise ValueError("class area does not fit in the available slots")
        areas[free] += excess * areas[free] / areas[free].sum()
    if (areas > cap * (1 + 1e-9)).any():
        raise ValueError("class area does not fit in the available slots")
    return areas


def make_landscape(
    classes=REGION_CLASSES,
    background: str = REGION_BACKGROUND,
    blocks: tuple = (17, 19),
    slots: tuple = (4, 3),
    area_unit: float = HECTARE,
    seed: int = 0,
) -> Landscape:
    """Build a landscape whose per-class feature counts and areas match ``classes``.

    ``classes`` holds (name, count, area) with areas in ``area_unit`` map
    units squared. The background count must equal ``blocks[0] * blocks[1]``.
    """
    rng = np.random.default_rng(seed)
    specs = {name: (int(count), float(area) * area_unit) for name, count, area in classes}
    nbx, nby = blocks
    if specs[background][0] != nbx * nby:
        raise ValueError("background feature count must equal the number of blocks")
    side = math.sqrt(sum(a for _, a in specs.values()))
    bw, bh = side / nbx, side / nby
    sw, sh = bw / slots[0], bh / slots[1]
    fg = [(n, c, a) for n, (c, a) in specs.items() if n != background]
    n_fg = sum(c for _, c, _ in fg)
    n_slots = nbx * nby * slots[0] * slots[1]
    if n_fg > n_slots:
        raise ValueError(f"{n_fg} features do not fit in {n_slots} slots")
    order = rng.permutation(n_slots)[:n_fg]
    cap = 0.6 * sw * sh

    holes: dict = {}
    fg_features = []
    next_id = nbx * nby
    k = 0
    for name, count, area in fg:
        for a in _feature_areas(area, count, cap, rng):
            slot = int(order[k])
            k += 1
            block, local = divmod(slot, slots[0] * slots[1])
            bx, by = block % nbx, block // nbx
            sx, sy = local % slots[0], local // slots[0]
            aspect = rng.uniform(0.7, 1.4)
            w = min(math.sqrt(a * aspect), 0.9 * sw)
            h = a / w
            if h > 0.9 * sh:
                h = 0.9 * sh
                w = a / h
            x0 = bx * bw + sx * sw + rng.uniform(0.05 * sw, sw - w - 0.05 * sw)
            y0 = by * bh + sy * sh + rng.uniform(0.05 * sh, sh - h - 0.05 * sh)
            ring = _rect(x0, y0, w, h)
            holes.setdefault(block, []).append(ring)
            fg_features.append(Feature(next_id, name, [[ring]]))
            next_id += 1

    bg_features = []
    for block in range(nbx * nby):
        bx, by = block % nbx, block // nbx
        outer = _rect(bx * bw, by * bh, bw, bh)
        bg_features.append(Feature(block, background, [[outer, *holes.get(block, [])]]))

    catalog = ClassCatalog(tuple((n, n == background) for n in specs))
    return Landscape(FeatureSet(tuple(bg_features + fg_features)), catalog, side)


def region_landscape(seed: int = 0) -> Landscape:
    """3,912 features over ~299,471 ha; one class holds ~94% of the area, the smallest ~0.03%."""
    return make_landscape(seed=seed)


TOY_CLASSES = (
    ("Banana Plantations", 14, 1.30),
    ("Berry Crops", 8, 0.35),
    ("Plantation Forestry", 10, 1.00),
    ("Sugarcane Crops", 16, 2.40),
    ("Tea Tree", 8, 0.45),
    ("Tree Crops - Mature", 24, 2.10),
    ("Tree Crops - Young", 12, 0.90),
    ("Vineyards", 8, 0.40),
    ("Other", 16, 95.05),
)


@dataclass(frozen=True, eq=False)
class Scene:
    image: Raster
    labels: Raster  # one band of class indices (band order)
    landscape: Landscape

    @property
    def features(self) -> FeatureSet:
        return self.landscape.features

    @property
    def catalog(self) -> ClassCatalog:
        return self.landscape.catalog


def render_image(labels: np.ndarray, seed: int = 0, noise: float = 10.0) -> np.ndarray:
    """Three-band uint8 image: a colour per class plus smooth and pixel noise."""
    from scipy.ndimage import gaussian_filter

    rng = np.random.default_rng(seed)
    base = PALETTE[labels % len(PALETTE)]
    texture = gaussian_filter(rng.normal(0.0, 1.0, labels.shape), 3.0)
    texture *= noise * 2.0 / max(texture.std(), 1e-12)
    img = base + texture[..., None] + rng.normal(0.0, noise / 2.0, base.shape)
    return np.clip(np.round(img), 0, 255).astype(np.uint8).transpose(2, 0, 1)


def make_scene(size: int = 512, pixel_size: float = 0.5, seed: int = 0, classes=TOY_CLASSES) -> Scene:
    """A ``size`` x ``size`` three-band scene with nine classes and matching labels."""
    side = size * pixel_size
    total = sum(a for _, _, a in classes)
    scaled = tuple((n, c, a * side * side / total) for n, c, a in classes)
    land = make_landscape(scaled, background="Other", blocks=(4, 4), slots=(4, 4), area_unit=1.0, seed=seed)
    gt = land.geotransform(pixel_size)
    window = Window(0, 0, size, size)
    idx = rasterize_classes(land.features, land.catalog, window, gt)
    names = land.catalog.band_order
    image = Raster(render_image(idx, seed=seed), gt, band_names=("red", "green", "blue"))
    labels = Raster(idx, gt, band_names=("class",), class_names=names)
    return Scene(image, labels, land)
