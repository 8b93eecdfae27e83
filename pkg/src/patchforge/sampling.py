"""Training-patch extents: systematic grid cells and area-log stratified random sampling.

Stratified allocation, per class ``c`` and feature ``f`` of that class::

    N_cp = ceil(N_p * log(a_c) / sum_c log(a_c))
    N_fp = ceil(N_cp * a_f / a_c)

The log base cancels in the ratio; base 10 is used throughout.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ._accel import worker_count
from .errors import GeometryError, SamplingError
from .raster import GeoTransform, Window
from .seeding import derive_seed, rng_for
from .vector import ClassCatalog, Feature, FeatureSet, rasterize_classes

MAX_REJECTIONS = 10_000
_INT_SNAP = 1e-12


@dataclass(frozen=True)
class PatchExtent:
    patch_id: int
    window: Window
    origin_class: Optional[str] = None
    source_feature: Optional[int] = None
    seed: int = 0
    # Sampled point in map units (stratified extents only; not persisted).
    centroid: Optional[tuple] = field(default=None, compare=False)

    def __post_init__(self):
        if self.window.width != self.window.height:
            raise SamplingError(f"patch {self.patch_id} window is not square")

    @property
    def size(self) -> int:
        return self.window.width

    def to_json(self) -> dict:
        return {
            "patch_id": self.patch_id,
            "col_off": self.window.col_off,
            "row_off": self.window.row_off,
            "size": self.size,
            "origin_class": self.origin_class,
            "source_feature": self.source_feature,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, rec: Mapping) -> "PatchExtent":
        size = int(rec["size"])
        return cls(
            patch_id=int(rec["patch_id"]),
            window=Window(int(rec["col_off"]), int(rec["row_off"]), size, size),
            origin_class=rec.get("origin_class"),
            source_feature=rec.get("source_feature"),
            seed=int(rec.get("seed", 0)),
        )


def dumps_extents(extents: Sequence[PatchExtent], provenance: Optional[Mapping] = None) -> str:
    """One record per line. With ``provenance`` the list is wrapped as
    ``{...provenance, "extents": [...]}``."""
    body = "[]" if not extents else "[\n" + ",\n".join(json.dumps(e.to_json()) for e in extents) + "\n]"
    if provenance is None:
        return body + "\n"
    head = json.dumps(dict(provenance), sort_keys=True)[1:-1]
    return "{" + head + (", " if head else "") + '"extents": ' + body + "}\n"


def save_extents(extents: Sequence[PatchExtent], path, provenance: Optional[Mapping] = None) -> None:
    Path(path).write_text(dumps_extents(extents, provenance))


def load_extents(path) -> list:
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict):
        obj = obj["extents"]
    return [PatchExtent.from_json(r) for r in obj]


# -- grid strategy ----------------------------------------------------------------


def grid_sample(
    image_window: Window,
    features: FeatureSet,
    catalog: ClassCatalog,
    cell_size: int,
    geotransform: GeoTransform,
    seed: int = 0,
) -> list:
    """Origin-anchored ``cell_size`` grid over the image, keeping cells that
    touch at least one non-background class. Trailing partial cells are dropped.
    """
    if cell_size <= 0:
        raise SamplingError("cell size must be positive")
    if cell_size > image_window.width or cell_size > image_window.height:
        raise SamplingError(
            f"cell size {cell_size} exceeds image {image_window.width}x{image_window.height}"
        )
    classes = rasterize_classes(features, catalog, image_window, geotransform)
    informative = classes != catalog.background_index
    nx = image_window.width // cell_size
    ny = image_window.height // cell_size
    cells = informative[: ny * cell_size, : nx * cell_size].reshape(ny, cell_size, nx, cell_size)
    keep = cells.any(axis=(1, 3))
    out = []
    for gy, gx in zip(*np.nonzero(keep)):
        pid = len(out)
        window = Window(
            image_window.col_off + int(gx) * cell_size,
            image_window.row_off + int(gy) * cell_size,
            cell_size,
            cell_size,
        )
        out.append(PatchExtent(pid, window, seed=derive_seed(seed, pid)))
    return out


def subdivide(extents: Sequence[PatchExtent], factor: int = 2) -> list:
    """Split every extent into ``factor**2`` children that tile it exactly (row-major).

    Children are renumbered sequentially; provenance fields are inherited.
    """
    out = []
    for ext in extents:
        size = ext.size
        if size % factor:
            raise SamplingError(f"patch {ext.patch_id}: side {size} not divisible by {factor}")
        child = size // factor
        for k in range(factor * factor):
            dy, dx = divmod(k, factor)
            window = Window(ext.window.col_off + dx * child, ext.window.row_off + dy * child, child, child)
            out.append(
                PatchExtent(
                    len(out),
                    window,
                    origin_class=ext.origin_class,
                    source_feature=ext.source_feature,
                    seed=derive_seed(ext.seed, k),
                )
            )
    return out


# -- stratified allocation -----------------------------------------------------------


def snapped_ceil(q: float) -> int:
    """Ceiling that treats values within 1e-12 (relative) of an integer as that integer.

    Keeps log-ratio allocations independent of the log base, where the same
    exact quotient can land a few ulps either side of an integer.
    """
    r = round(q)
    if abs(q - r) <= _INT_SNAP * max(1.0, abs(q)):
        return int(r)
    return int(math.ceil(q))


def class_patch_counts(
    class_areas: Mapping[str, float], n_patches: int, log: Callable[[float], float] = math.log10
) -> dict:
    """Patches per class, proportional to the log of class area (rounded up)."""
    if not class_areas:
        raise SamplingError("no classes to allocate")
    bad = {c: a for c, a in class_areas.items() if not a > 1.0}
    if bad:
        raise SamplingError(f"class areas must exceed 1 map unit squared (log > 0): {bad}")
    if n_patches < len(class_areas):
        raise SamplingError(f"N_p={n_patches} is smaller than the class count {len(class_areas)}")
    logs = {c: log(a) for c, a in class_areas.items()}
    total = math.fsum(logs.values())
    return {c: snapped_ceil(n_patches * v / total) for c, v in logs.items()}


def feature_patch_counts(n_class_patches: int, feature_areas: Mapping[int, float]) -> dict:
    """Patches per feature, proportional to feature area (rounded up, at least one)."""
    if not feature_areas:
        raise SamplingError("class has no features")
    if any(not a > 0 for a in feature_areas.values()):
        raise SamplingError("feature areas must be positive")
    quota = _exact_quotas(n_class_patches, feature_areas)
    return {fid: max(1, math.ceil(q)) for fid, q in quota.items()}


def _exact_quotas(n: int, feature_areas: Mapping[int, float]) -> dict:
    # Area ratios are exact rationals of the float inputs, so ceilings need no snapping.
    exact = {f: Fraction(a) for f, a in feature_areas.items()}
    total = sum(exact.values())
    return {f: n * a / total for f, a in exact.items()}


def budgeted_apportion(n_class_patches: int, feature_areas: Mapping[int, float]) -> dict:
    """Largest-remainder apportionment with a floor of one patch per feature.

    The counts sum to ``n_class_patches`` exactly. Ties go to the lower feature id.
    """
    if not feature_areas:
        raise SamplingError("class has no features")
    if n_class_patches < len(feature_areas):
        raise SamplingError(
            f"budget {n_class_patches} cannot give each of {len(feature_areas)} features a patch"
        )
    ids = sorted(feature_areas)
    quota = _exact_quotas(n_class_patches, feature_areas)
    seats = {f: max(1, math.floor(quota[f])) for f in ids}
    spare = n_class_patches - sum(seats.values())
    if spare > 0:
        ranked = sorted(ids, key=lambda f: (-(quota[f] - seats[f]), f))
        for f in ranked[:spare]:
            seats[f] += 1
    while spare < 0:
        # Take back from the feature whose last seat is least supported by its quota.
        donors = [f for f in ids if seats[f] > 1]
        f = min(donors, key=lambda f: (quota[f] - seats[f], -f))
        seats[f] -= 1
        spare += 1
    return seats


@dataclass(frozen=True)
class SamplingPlan:
    n_patches: int
    per_class: dict
    per_feature: dict
    class_areas: dict
    feature_areas: dict
    mode: str = "literal"

    @property
    def total(self) -> int:
        return sum(self.per_feature.values())


APPORTION_MODES = ("literal", "budget")


def plan_stratified(
    features: FeatureSet,
    catalog: ClassCatalog,
    n_patches: int,
    mode: str = "literal",
    area_scale: float = 1.0,
) -> SamplingPlan:
    """Compute class and feature patch counts.

    ``area_scale`` converts map units squared into the unit the log is taken
    in (e.g. 1e-4 for square metres to hectares). In ``"budget"`` mode a class
    budget smaller than its feature count is raised to that count so every
    feature is still sampled.
    """
    if mode not in APPORTION_MODES:
        raise SamplingError(f"unknown apportionment mode {mode!r}")
    features.validate(catalog)
    groups = features.by_class()
    missing = [c for c in catalog.band_order if c != catalog.background and c not in groups]
    if missing:
        raise SamplingError(f"classes without features: {missing}")
    class_areas = {c: sum(f.area for f in groups[c]) * area_scale for c in catalog.band_order if c in groups}
    per_class = class_patch_counts(class_areas, n_patches)
    per_feature: dict = {}
    feature_areas: dict = {}
    for c in class_areas:
        areas = {f.feature_id: f.area * area_scale for f in groups[c]}
        feature_areas.update(areas)
        if mode == "literal":
            per_feature.update(feature_patch_counts(per_class[c], areas))
        else:
            per_feature.update(budgeted_apportion(max(per_class[c], len(areas)), areas))
    return SamplingPlan(n_patches, per_class, per_feature, class_areas, feature_areas, mode)


# -- point sampling --------------------------------------------------------------


def random_points_in_feature(
    feature: Feature, n: int, rng: np.random.Generator, max_attempts: int = MAX_REJECTIONS
):
    """``n`` points uniform over the feature, by rejection on its bounding box.

    Raises :class:`GeometryError` when ``max_attempts`` consecutive candidates
    are rejected (a sliver geometry).
    """
    xmin, ymin, xmax, ymax = feature.bounds
    if not (xmax > xmin and ymax > ymin and feature.area > 0):
        raise GeometryError(f"feature {feature.feature_id} is degenerate")
    accept = min(1.0, feature.area / ((xmax - xmin) * (ymax - ymin)))
    xs, ys = [], []
    got = 0
    misses = 0
    while got < n:
        need = n - got
        m = int(min(max(need / accept * 1.25 + 8, 16), 65_536))
        x = rng.uniform(xmin, xmax, m)
        y = rng.uniform(ymin, ymax, m)
        hits = np.flatnonzero(feature.contains(x, y))
        if hits.size == 0:
            misses += m
            if misses >= max_attempts:
                raise GeometryError(
                    f"feature {feature.feature_id}: {misses} consecutive rejections (sliver geometry?)"
                )
            continue
        if misses + hits[0] >= max_attempts:
            raise GeometryError(
                f"feature {feature.feature_id}: {misses + hits[0]} consecutive rejections"
            )
        take = hits[:need]
        gaps = np.diff(take)
        if gaps.size and gaps.max() - 1 >= max_attempts:
            raise GeometryError(f"feature {feature.feature_id}: rejection budget exceeded")
        xs.append(x[take])
        ys.append(y[take])
        got += take.size
        misses = m - 1 - int(hits[-1]) if take.size == hits.size else 0
    return np.concatenate(xs) if xs else np.empty(0), np.concatenate(ys) if ys else np.empty(0)


def random_point_in_polygon(geometry, rng: np.random.Generator, max_attempts: int = MAX_REJECTIONS):
    """One uniform point inside ``geometry`` (a :class:`Feature` or raw polygon coordinates)."""
    feature = geometry if isinstance(geometry, Feature) else Feature(-1, "", geometry)
    x, y = random_points_in_feature(feature, 1, rng, max_attempts)
    return float(x[0]), float(y[0])


def _centred_window(col: float, row: float, size: int, image_window: Window) -> Window:
    """Square window centred on a pixel position, shifted inward to fit the image."""
    if size > image_window.width or size > image_window.height:
        raise SamplingError(
            f"patch size {size} does not fit image {image_window.width}x{image_window.height}"
        )
    c = int(math.floor(col - size / 2 + 0.5))
    r = int(math.floor(row - size / 2 + 0.5))
    c = min(max(c, image_window.col_off), image_window.col_end - size)
    r = min(max(r, image_window.row_off), image_window.row_end - size)
    return Window(c, r, size, size)


def stratified_sample(
    features: FeatureSet,
    catalog: ClassCatalog,
    n_patches: int,
    patch_size: int,
    image_window: Window,
    geotransform: GeoTransform,
    seed: int,
    mode: str = "literal",
    area_scale: float = 1.0,
    plan: Optional[SamplingPlan] = None,
) -> list:
    """Area-log stratified random extents, each centred on a point drawn inside a feature.

    Each feature draws from its own stream keyed by (seed, feature_id), so the
    result does not depend on thread scheduling.
    """
    if patch_size > image_window.width or patch_size > image_window.height:
        raise SamplingError(f"patch size {patch_size} does not fit the image window")
    if plan is None:
        plan = plan_stratified(features, catalog, n_patches, mode, area_scale)
    groups = features.by_class()
    jobs = [f for c in plan.class_areas for f in groups[c]]

    def draw(feat: Feature):
        return random_points_in_feature(feat, plan.per_feature[feat.feature_id], rng_for(seed, feat.feature_id))

    workers = worker_count()
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            points = list(pool.map(draw, jobs))
    else:
        points = [draw(f) for f in jobs]

    out = []
    for feat, (xs, ys) in zip(jobs, points):
        cols, rows = geotransform.to_pixel(xs, ys)
        for j, (x, y, col, row) in enumerate(zip(xs, ys, cols, rows)):
            out.append(
                PatchExtent(
                    patch_id=len(out),
                    window=_centred_window(float(col), float(row), patch_size, image_window),
                    origin_class=feat.class_name,
                    source_feature=feat.feature_id,
                    seed=derive_seed(seed, feat.feature_id, j),
                    centroid=(float(x), float(y)),
                )
            )
    return out


def grid_patches(
    image_window: Window,
    features: FeatureSet,
    catalog: ClassCatalog,
    patch_size: int,
    geotransform: GeoTransform,
    cell_size: Optional[int] = None,
    seed: int = 0,
) -> list:
    """Grid at ``cell_size`` (default ``patch_size``) subdivided down to ``patch_size``."""
    cell_size = cell_size or patch_size
    extents = grid_sample(image_window, features, catalog, cell_size, geotransform, seed)
    size = cell_size
    while size > patch_size:
        if size % 2:
            raise SamplingError(f"cannot halve cell size {size} down to {patch_size}")
        extents = subdivide(extents, 2)
        size //= 2
    if size != patch_size:
        raise SamplingError(f"cell size {cell_size} is not patch size {patch_size} times a power of two")
    return extents
