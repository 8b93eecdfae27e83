"""Chip extraction, dataset manifests, shuffled batches and per-batch scaling.

A dataset directory holds one ``.rstr`` file per chip (image bands followed
by one-hot label bands) and a ``manifest.json`` written last, atomically::

    {
      "format": "patchforge-dataset", "version": 1,
      "patch_size": P, "bands": B, "dtype": "u8",
      "class_order": [...alphabetical...], "background": "Other",
      "creation": {"strategy": ..., "n_patches": ..., "seed": ..., ...},
      "records": [{"patch_id", "path", "col_off", "row_off",
                   "origin_class", "source_feature", "seed"}, ...]
    }
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Optional, Sequence

import numpy as np

from ._accel import worker_count
from .errors import DataError, WindowError
from .raster import DTYPE_NAMES, Raster, load_raster, read_window, write_raster
from .sampling import PatchExtent
from .vector import ClassCatalog, FeatureSet, rasterize_onehot

MANIFEST_NAME = "manifest.json"
FORMAT_NAME = "patchforge-dataset"


@dataclass(frozen=True, eq=False)
class ChipPair:
    """Image chip (P, P, B) and one-hot label chip (P, P, C)."""

    patch_id: int
    image: np.ndarray
    label: np.ndarray
    seed: int = 0

    def __post_init__(self):
        if self.image.shape[:2] != self.label.shape[:2]:
            raise DataError(f"chip {self.patch_id}: image and label sizes differ")


@dataclass(frozen=True)
class ChipRecord:
    patch_id: int
    path: str
    col_off: int
    row_off: int
    origin_class: Optional[str] = None
    source_feature: Optional[int] = None
    seed: int = 0

    def to_json(self) -> dict:
        return {
            "patch_id": self.patch_id,
            "path": self.path,
            "col_off": self.col_off,
            "row_off": self.row_off,
            "origin_class": self.origin_class,
            "source_feature": self.source_feature,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    patch_size: int
    bands: int
    dtype: str
    class_order: tuple
    background: str
    records: tuple
    creation: dict = field(default_factory=dict)

    @property
    def n_classes(self) -> int:
        return len(self.class_order)

    def __len__(self) -> int:
        return len(self.records)

    def to_json(self) -> dict:
        return {
            "format": FORMAT_NAME,
            "version": 1,
            "patch_size": self.patch_size,
            "bands": self.bands,
            "dtype": self.dtype,
            "class_order": list(self.class_order),
            "background": self.background,
            "creation": self.creation,
            "records": [r.to_json() for r in self.records],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=1, sort_keys=True) + "\n"

    def save(self) -> Path:
        """Write the manifest atomically (temp file, then rename)."""
        path = Path(self.root) / MANIFEST_NAME
        tmp = path.with_name(MANIFEST_NAME + ".tmp")
        tmp.write_text(self.dumps())
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, root) -> "DatasetManifest":
        root = Path(root)
        path = root / MANIFEST_NAME if root.is_dir() else root
        obj = json.loads(path.read_text())
        if obj.get("format") != FORMAT_NAME:
            raise DataError(f"{path} is not a dataset manifest")
        return cls(
            root=path.parent,
            patch_size=int(obj["patch_size"]),
            bands=int(obj["bands"]),
            dtype=obj["dtype"],
            class_order=tuple(obj["class_order"]),
            background=obj["background"],
            records=tuple(ChipRecord(**r) for r in obj["records"]),
            creation=obj.get("creation", {}),
        )

    def check(self) -> None:
        """Record count must match chips on disk; class order must be alphabetical."""
        if list(self.class_order) != sorted(self.class_order):
            raise DataError("class order is not alphabetical")
        on_disk = {p.name for p in Path(self.root).glob("*.rstr")}
        listed = {Path(r.path).name for r in self.records}
        if on_disk != listed:
            raise DataError(
                f"manifest lists {len(listed)} chips but {len(on_disk)} are on disk"
            )


def chip_name(patch_id: int) -> str:
    return f"chip_{patch_id:07d}.rstr"


def extract_chip(image: Raster, features: FeatureSet, catalog: ClassCatalog, extent: PatchExtent) -> Raster:
    """Image bands followed by one-hot label bands over the extent window."""
    if not image.window.contains(extent.window):
        raise WindowError(f"patch {extent.patch_id} extends outside the image")
    pixels = read_window(image, extent.window)
    label = rasterize_onehot(features, catalog, extent.window, image.geotransform)
    stacked = np.concatenate([pixels, label.pixels.astype(image.dtype)], axis=0)
    return Raster(stacked, image.geotransform.for_window(extent.window))


def extract_dataset(
    image: Raster,
    features: FeatureSet,
    catalog: ClassCatalog,
    extents: Sequence[PatchExtent],
    out_dir,
    creation: Optional[dict] = None,
) -> DatasetManifest:
    """Write one chip file per extent, then the manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    features.validate(catalog)
    if not extents:
        raise DataError("no extents to extract")
    sizes = {e.size for e in extents}
    if len(sizes) != 1:
        raise DataError(f"extents have mixed sizes {sorted(sizes)}")
    for e in extents:
        if not image.window.contains(e.window):
            raise WindowError(f"patch {e.patch_id} extends outside the image")
    stale = out_dir / MANIFEST_NAME
    if stale.exists():
        stale.unlink()

    def work(extent: PatchExtent) -> ChipRecord:
        name = chip_name(extent.patch_id)
        write_raster(extract_chip(image, features, catalog, extent), out_dir / name)
        return ChipRecord(
            extent.patch_id,
            name,
            extent.window.col_off,
            extent.window.row_off,
            extent.origin_class,
            extent.source_feature,
            extent.seed,
        )

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(work, extents))
    else:
        records = [work(e) for e in extents]

    manifest = DatasetManifest(
        root=out_dir,
        patch_size=sizes.pop(),
        bands=image.bands,
        dtype=DTYPE_NAMES[image.dtype_code],
        class_order=catalog.band_order,
        background=catalog.background,
        records=tuple(records),
        creation=dict(creation or {}),
    )
    manifest.save()
    return manifest


def load_chip(manifest: DatasetManifest, record: ChipRecord) -> ChipPair:
    raster = load_raster(Path(manifest.root) / record.path)
    px = raster.pixels
    if px.shape[0] != manifest.bands + manifest.n_classes:
        raise DataError(f"chip {record.patch_id} has {px.shape[0]} bands")
    image = px[: manifest.bands].transpose(1, 2, 0).astype(np.float32)
    label = px[manifest.bands:].transpose(1, 2, 0).astype(np.uint8)
    return ChipPair(record.patch_id, image, label, record.seed)


# -- batches ---------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Batch:
    """``images`` (n, P, P, B) float32, ``labels`` (n, P, P, C) uint8."""

    images: np.ndarray
    labels: np.ndarray
    patch_ids: tuple
    seeds: tuple = ()

    @property
    def n(self) -> int:
        return len(self.patch_ids)

    def chips(self) -> list:
        seeds = self.seeds or (0,) * self.n
        return [ChipPair(p, self.images[i], self.labels[i], seeds[i]) for i, p in enumerate(self.patch_ids)]

    @classmethod
    def from_chips(cls, chips: Sequence[ChipPair]) -> "Batch":
        return cls(
            images=np.stack([c.image for c in chips]).astype(np.float32),
            labels=np.stack([c.label for c in chips]),
            patch_ids=tuple(c.patch_id for c in chips),
            seeds=tuple(c.seed for c in chips),
        )


def batches_per_epoch(n_chips: int, batch_size: int) -> int:
    """Batches the iterator yields per epoch (every chip visited once)."""
    return math.ceil(n_chips / batch_size)


def reported_batches_per_epoch(n_chips: int, batch_size: int) -> int:
    """``n_chips / batch_size`` rounded half-up to the nearest whole number."""
    return int(math.floor(n_chips / batch_size + 0.5))


def epoch_order(n: int, epoch_seed: int) -> np.ndarray:
    return np.random.default_rng(epoch_seed).permutation(n)


def batch_iter(manifest: DatasetManifest, batch_size: int, epoch_seed: int) -> Iterator[Batch]:
    """Seeded permutation of all chips, in batches of ``batch_size`` (last may be short)."""
    if batch_size < 1:
        raise ValueError("batch size must be at least 1")
    if not manifest.records:
        raise DataError("dataset is empty")
    order = epoch_order(len(manifest.records), epoch_seed)
    for start in range(0, len(order), batch_size):
        chips = [load_chip(manifest, manifest.records[i]) for i in order[start:start + batch_size]]
        yield Batch.from_chips(chips)


def scale_batch(batch: Batch) -> Batch:
    """Per band, map the batch-wide [min, max] linearly onto [0, 255].

    Constant bands become 0. Labels are untouched.
    """
    imgs = batch.images.astype(np.float64)
    lo = imgs.min(axis=(0, 1, 2))
    hi = imgs.max(axis=(0, 1, 2))
    span = hi - lo
    safe = np.where(span > 0, span, 1.0)
    scaled = (imgs - lo) * 255.0 / safe
    scaled[..., span == 0] = 0.0
    return replace(batch, images=scaled.astype(np.float32))
