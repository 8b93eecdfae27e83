"""Labelled polygon features, the class catalog, and rasterisation to one-hot labels."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from . import kernels
from .errors import DataError, GeometryError
from .raster import GeoTransform, Raster, Window

AREA_RTOL = 1e-6


def ring_area(ring: np.ndarray) -> float:
    """Unsigned shoelace area of a ring (closing vertex optional)."""
    x, y = ring[:, 0], ring[:, 1]
    return abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0


def _as_ring(coords) -> np.ndarray:
    ring = np.asarray(coords, dtype=float)
    if ring.ndim != 2 or ring.shape[1] < 2:
        raise GeometryError(f"ring must be a sequence of (x, y) pairs, got shape {ring.shape}")
    ring = ring[:, :2]
    if len(ring) > 1 and np.array_equal(ring[0], ring[-1]):
        ring = ring[:-1]
    if len(ring) < 3:
        raise GeometryError("ring needs at least three distinct vertices")
    return ring


def normalize_geometry(geometry) -> tuple:
    """Coerce to a tuple of polygons, each a tuple of (N, 2) rings (exterior first).

    Accepts a single ring, a polygon (list of rings) or a multipolygon.
    """
    depth = 0
    probe = geometry
    while isinstance(probe, (list, tuple, np.ndarray)) and len(probe):
        probe = probe[0]
        depth += 1
    if depth == 2:
        geometry = [[geometry]]
    elif depth == 3:
        geometry = [geometry]
    elif depth != 4:
        raise GeometryError("geometry must be a ring, polygon or multipolygon")
    return tuple(tuple(_as_ring(r) for r in poly) for poly in geometry)


def geometry_area(polygons) -> float:
    total = 0.0
    for poly in polygons:
        total += ring_area(poly[0]) - sum(ring_area(h) for h in poly[1:])
    return total


def geometry_edges(polygons):
    """All ring edges concatenated as (x0, y0, x1, y1)."""
    rings = [r for poly in polygons for r in poly]
    start = np.concatenate(rings)
    end = np.concatenate([np.roll(r, -1, axis=0) for r in rings])
    return (
        np.ascontiguousarray(start[:, 0]),
        np.ascontiguousarray(start[:, 1]),
        np.ascontiguousarray(end[:, 0]),
        np.ascontiguousarray(end[:, 1]),
    )


@dataclass(frozen=True, eq=False)
class Feature:
    feature_id: int
    class_name: str
    geometry: tuple
    area: float = field(default=float("nan"))

    def __post_init__(self):
        geom = normalize_geometry(self.geometry)
        object.__setattr__(self, "geometry", geom)
        measured = geometry_area(geom)
        if math.isnan(self.area):
            object.__setattr__(self, "area", measured)
        elif abs(self.area - measured) > AREA_RTOL * max(abs(measured), 1e-300):
            raise GeometryError(
                f"feature {self.feature_id}: stated area {self.area} != geometry area {measured}"
            )
        if not self.area > 0:
            raise GeometryError(f"feature {self.feature_id} has non-positive area")

    @cached_property
    def edges(self):
        return geometry_edges(self.geometry)

    @cached_property
    def bounds(self) -> tuple:
        pts = np.concatenate([poly[0] for poly in self.geometry])
        return (
            float(pts[:, 0].min()),
            float(pts[:, 1].min()),
            float(pts[:, 0].max()),
            float(pts[:, 1].max()),
        )

    def contains(self, x, y) -> np.ndarray:
        x = np.ascontiguousarray(np.atleast_1d(x), dtype=float)
        y = np.ascontiguousarray(np.atleast_1d(y), dtype=float)
        return kernels.points_in_edges(x, y, *self.edges)


@dataclass(frozen=True)
class ClassCatalog:
    """Named classes; exactly one is the background ("other") class.

    Band order is the lexicographic sort of class names.
    """

    classes: tuple

    def __post_init__(self):
        classes = tuple((str(n), bool(bg)) for n, bg in self.classes)
        names = [n for n, _ in classes]
        if not names:
            raise DataError("catalog is empty")
        if len(set(names)) != len(names):
            raise DataError("catalog class names must be unique")
        if sum(bg for _, bg in classes) != 1:
            raise DataError("catalog needs exactly one background class")
        object.__setattr__(self, "classes", classes)

    @classmethod
    def from_names(cls, names: Iterable[str], background: str = "Other") -> "ClassCatalog":
        names = list(dict.fromkeys(names))
        if background not in names:
            names.append(background)
        return cls(tuple((n, n == background) for n in names))

    @property
    def band_order(self) -> tuple:
        return tuple(sorted(n for n, _ in self.classes))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    @property
    def background(self) -> str:
        return next(n for n, bg in self.classes if bg)

    @property
    def background_index(self) -> int:
        return self.index(self.background)

    def index(self, name: str) -> int:
        try:
            return self.band_order.index(name)
        except ValueError:
            raise DataError(f"class {name!r} is not in the catalog") from None

    def to_json(self) -> dict:
        return {"classes": [{"name": n, "background": bg} for n, bg in self.classes]}

    @classmethod
    def from_json(cls, obj: dict) -> "ClassCatalog":
        return cls(tuple((c["name"], c.get("background", False)) for c in obj["classes"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ClassCatalog":
        return cls.from_json(json.loads(Path(path).read_text()))


@dataclass(frozen=True, eq=False)
class FeatureSet:
    features: tuple = ()

    def __post_init__(self):
        feats = tuple(self.features)
        ids = [f.feature_id for f in feats]
        if len(set(ids)) != len(ids):
            raise DataError("feature ids must be unique")
        object.__setattr__(self, "features", feats)

    def __len__(self) -> int:
        return len(self.features)

    def __iter__(self):
        return iter(self.features)

    @cached_property
    def by_id(self) -> dict:
        return {f.feature_id: f for f in self.features}

    def by_class(self) -> dict:
        groups: dict = {}
        for f in self.features:
            groups.setdefault(f.class_name, []).append(f)
        return groups

    def class_areas(self) -> dict:
        areas: dict = {}
        for f in self.features:
            areas[f.class_name] = areas.get(f.class_name, 0.0) + f.area
        return areas

    def validate(self, catalog: ClassCatalog) -> None:
        known = set(catalog.band_order)
        missing = sorted({f.class_name for f in self.features} - known)
        if missing:
            raise DataError(f"feature classes not in catalog: {missing}")


# -- GeoJSON ------------------------------------------------------------------


def _feature_id(raw, fallback: int) -> int:
    for candidate in (raw.get("id"), (raw.get("properties") or {}).get("feature_id")):
        if isinstance(candidate, bool):
            continue
        if isinstance(candidate, int):
            return candidate
        if isinstance(candidate, str) and candidate.lstrip("-").isdigit():
            return int(candidate)
    return fallback


def features_from_geojson(obj: dict) -> FeatureSet:
    if obj.get("type") != "FeatureCollection":
        raise DataError("expected a GeoJSON FeatureCollection")
    out = []
    for i, raw in enumerate(obj.get("features", [])):
        props = raw.get("properties") or {}
        if "class_name" not in props:
            raise DataError(f"feature #{i} has no 'class_name' property")
        geom = raw.get("geometry") or {}
        kind = geom.get("type")
        if kind == "Polygon":
            polys = [geom["coordinates"]]
        elif kind == "MultiPolygon":
            polys = geom["coordinates"]
        else:
            raise DataError(f"feature #{i}: unsupported geometry type {kind!r}")
        out.append(
            Feature(
                feature_id=_feature_id(raw, i),
                class_name=str(props["class_name"]),
                geometry=polys,
                area=float(props["area"]) if "area" in props else float("nan"),
            )
        )
    return FeatureSet(tuple(out))


def features_to_geojson(features: FeatureSet) -> dict:
    items = []
    for f in features:
        coords = [[np.vstack([r, r[:1]]).tolist() for r in poly] for poly in f.geometry]
        items.append(
            {
                "type": "Feature",
                "id": f.feature_id,
                "properties": {"class_name": f.class_name, "area": f.area},
                "geometry": {"type": "MultiPolygon", "coordinates": coords},
            }
        )
    return {"type": "FeatureCollection", "features": items}


def load_features(path) -> FeatureSet:
    return features_from_geojson(json.loads(Path(path).read_text()))


def save_features(features: FeatureSet, path) -> None:
    Path(path).write_text(json.dumps(features_to_geojson(features)))


# -- rasterisation --------------------------------------------------------------


def _pixel_edges(feature: Feature, gt: GeoTransform, window: Window):
    x0, y0, x1, y1 = feature.edges
    c0, r0 = gt.to_pixel(x0, y0)
    c1, r1 = gt.to_pixel(x1, y1)
    return c0 - window.col_off, r0 - window.row_off, c1 - window.col_off, r1 - window.row_off


def rasterize_classes(
    features: FeatureSet, catalog: ClassCatalog, window: Window, geotransform: GeoTransform
) -> np.ndarray:
    """Class-index map (band order) for ``window``; pixel-centre rule, last feature wins."""
    geotransform.require_north_up()
    out = np.full((window.height, window.width), catalog.background_index, dtype=np.uint8)
    for feat in features:
        cls = catalog.index(feat.class_name)
        ex0, ey0, ex1, ey1 = _pixel_edges(feat, geotransform, window)
        cols = np.concatenate([ex0, ex1])
        rows = np.concatenate([ey0, ey1])
        ca = max(int(math.floor(cols.min())) - 1, 0)
        cb = min(int(math.ceil(cols.max())) + 1, window.width)
        ra = max(int(math.floor(rows.min())) - 1, 0)
        rb = min(int(math.ceil(rows.max())) + 1, window.height)
        if ca >= cb or ra >= rb:
            continue
        mask = kernels.even_odd_mask(ex0 - ca, ey0 - ra, ex1 - ca, ey1 - ra, rb - ra, cb - ca)
        out[ra:rb, ca:cb][mask] = cls
    return out


def onehot(indices: np.ndarray, n_classes: int, dtype=np.uint8) -> np.ndarray:
    """(H, W) class indices -> (C, H, W) one-hot."""
    return (indices[None, ...] == np.arange(n_classes).reshape(-1, *([1] * indices.ndim))).astype(dtype)


def rasterize_onehot(
    features: FeatureSet, catalog: ClassCatalog, window: Window, geotransform: GeoTransform
) -> Raster:
    idx = rasterize_classes(features, catalog, window, geotransform)
    return Raster(
        pixels=onehot(idx, catalog.n_classes),
        geotransform=geotransform.for_window(window),
        band_names=catalog.band_order,
        class_names=catalog.band_order,
    )


def classify_points(features: FeatureSet, catalog: ClassCatalog, x, y) -> np.ndarray:
    """Class index of the feature containing each point (last feature wins)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    out = np.full(x.shape, catalog.background_index, dtype=np.int64)
    for feat in features:
        xmin, ymin, xmax, ymax = feat.bounds
        cand = np.flatnonzero((x >= xmin) & (x <= xmax) & (y >= ymin) & (y <= ymax))
        if cand.size == 0:
            continue
        hit = feat.contains(x[cand], y[cand])
        out[cand[hit]] = catalog.index(feat.class_name)
    return out


def classify_pixel_centres(
    features: FeatureSet, catalog: ClassCatalog, geotransform: GeoTransform, x, y
) -> np.ndarray:
    """Class of the pixel containing each point, as :func:`rasterize_classes` would assign it."""
    col, row = geotransform.to_pixel(x, y)
    cx, cy = geotransform.to_map(np.floor(col) + 0.5, np.floor(row) + 0.5)
    return classify_points(features, catalog, cx, cy)
