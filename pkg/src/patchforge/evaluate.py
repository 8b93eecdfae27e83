"""Accuracy assessment: validation points, confusion matrices, agreement
metrics, bootstrap intervals and trial ranking."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import DataError
from .raster import GeoTransform, Raster, Window
from .sampling import snapped_ceil
from .seeding import rng_for
from .vector import ClassCatalog, FeatureSet, classify_pixel_centres

CORNER_LABEL = "True \\ Predict"
TIME_STEP_HOURS = 0.25


# -- validation points ---------------------------------------------------------------


@dataclass(frozen=True)
class ValidationPoint:
    x: float
    y: float
    truth: Optional[str] = None


def generate_validation_points(window: Window, geotransform: GeoTransform, n: int, seed: int) -> list:
    """``n`` points uniform over the window's map extent, without truth labels."""
    if n < 1:
        raise ValueError("need at least one point")
    geotransform.require_north_up()
    rng = rng_for(seed, 0x5EED)
    col = window.col_off + rng.random(n) * window.width
    row = window.row_off + rng.random(n) * window.height
    x, y = geotransform.to_map(col, row)
    return [ValidationPoint(float(a), float(b)) for a, b in zip(x, y)]


def _coords(points) -> tuple:
    x = np.array([p.x for p in points], dtype=float)
    y = np.array([p.y for p in points], dtype=float)
    return x, y


def sample_raster(raster: Raster, points, band: int = 0) -> np.ndarray:
    """Value of the pixel containing each point; points outside raise."""
    if not points:
        return np.zeros(0, dtype=raster.dtype)
    col, row = raster.geotransform.to_pixel(*_coords(points))
    c = np.floor(col).astype(np.int64)
    r = np.floor(row).astype(np.int64)
    outside = (c < 0) | (r < 0) | (c >= raster.width) | (r >= raster.height)
    if outside.any():
        i = int(np.flatnonzero(outside)[0])
        raise DataError(f"point ({points[i].x}, {points[i].y}) lies outside the raster")
    return raster.pixels[band, r, c]


def label_points_from_raster(points, labels: Raster, catalog: ClassCatalog) -> list:
    names = labels.class_names or catalog.band_order
    idx = sample_raster(labels, points)
    return [ValidationPoint(p.x, p.y, names[int(i)]) for p, i in zip(points, idx)]


def label_points_from_features(
    points, features: FeatureSet, catalog: ClassCatalog, geotransform: GeoTransform
) -> list:
    """Truth from the features, taken at the centre of the pixel holding each point
    so it agrees with the rasterized labels."""
    if not points:
        return []
    idx = classify_pixel_centres(features, catalog, geotransform, *_coords(points))
    names = catalog.band_order
    return [ValidationPoint(p.x, p.y, names[int(i)]) for p, i in zip(points, idx)]


def save_points(points, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "truth"])
        for p in points:
            w.writerow([repr(p.x), repr(p.y), "" if p.truth is None else p.truth])


def load_points(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if rows and not {"x", "y", "truth"} <= set(rows[0]):
        raise DataError(f"{path}: points CSV needs x, y and truth columns")
    return [ValidationPoint(float(r["x"]), float(r["y"]), r["truth"] or None) for r in rows]


# -- confusion matrix ------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    """Counts with rows = truth and columns = prediction."""

    counts: np.ndarray
    class_names: tuple

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        n = len(self.class_names)
        if counts.shape != (n, n):
            raise DataError(f"matrix shape {counts.shape} does not match {n} classes")
        if (counts < 0).any():
            raise DataError("negative counts")
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "class_names", tuple(self.class_names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def correct(self) -> int:
        return int(np.trace(self.counts))

    @property
    def overall_accuracy(self) -> float:
        if self.total == 0:
            raise DataError("empty confusion matrix")
        return self.correct / self.total

    def __eq__(self, other):
        return (
            isinstance(other, ConfusionMatrix)
            and self.class_names == other.class_names
            and np.array_equal(self.counts, other.counts)
        )

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([CORNER_LABEL, *self.class_names])
        for name, row in zip(self.class_names, self.counts):
            w.writerow([name, *(int(v) for v in row)])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ConfusionMatrix":
        """Accepts comma- or tab-separated text with class names on the
        header row and first column (they must agree)."""
        lines = [ln for ln in text.splitlines() if ln.strip()]
        if not lines:
            raise DataError("empty confusion matrix CSV")
        delim = "\t" if "\t" in lines[0] else ","
        rows = list(csv.reader(lines, delimiter=delim))
        cols = [c.strip() for c in rows[0][1:]]
        names = [r[0].strip() for r in rows[1:]]
        if cols != names:
            raise DataError("row and column class names differ")
        try:
            counts = [[int(v) for v in r[1:]] for r in rows[1:]]
        except ValueError as exc:
            raise DataError(f"non-integer count: {exc}") from None
        return cls(np.array(counts, dtype=np.int64).reshape(len(names), len(names)), tuple(names))

    def save(self, path) -> None:
        Path(path).write_text(self.to_csv())

    @classmethod
    def load(cls, path) -> "ConfusionMatrix":
        return cls.from_csv(Path(path).read_text())


def confusion_from_indices(truth, predicted, class_names) -> ConfusionMatrix:
    n = len(class_names)
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    counts = np.bincount(t * n + p, minlength=n * n).reshape(n, n)
    return ConfusionMatrix(counts, tuple(class_names))


def _truth_indices(points, catalog: ClassCatalog) -> np.ndarray:
    if any(p.truth is None for p in points):
        raise DataError("validation point without a truth label")
    try:
        return np.array([catalog.index(p.truth) for p in points], dtype=np.int64)
    except KeyError as exc:
        raise DataError(f"unknown truth class {exc}") from None


def point_indices(points, classmap: Raster, catalog: ClassCatalog) -> tuple:
    """(truth, predicted) class indices for each point."""
    if not points:
        return np.zeros(0, np.int64), np.zeros(0, np.int64)
    return _truth_indices(points, catalog), sample_raster(classmap, points).astype(np.int64)


def confusion_matrix(points, classmap: Raster, catalog: ClassCatalog) -> ConfusionMatrix:
    truth, pred = point_indices(points, classmap, catalog)
    if pred.size and pred.max() >= catalog.n_classes:
        raise DataError(f"class map holds index {int(pred.max())} beyond {catalog.n_classes} classes")
    return confusion_from_indices(truth, pred, catalog.band_order)


# -- metrics ---------------------------------------------------------------------------------


def kappa(m: ConfusionMatrix) -> float:
    """Cohen's kappa. A perfect single-class matrix (p_e = 1) scores 1; any
    other p_e = 1 case is undefined (NaN)."""
    n = m.total
    if n == 0:
        raise DataError("empty confusion matrix")
    c = m.counts.astype(np.float64)
    p_o = np.trace(c) / n
    p_e = float((c.sum(axis=1) * c.sum(axis=0)).sum()) / (n * n)
    if p_e == 1.0:
        return 1.0 if p_o == 1.0 else math.nan
    return (p_o - p_e) / (1.0 - p_e)


def f1(user: float, producer: float) -> float:
    if math.isnan(user) or math.isnan(producer):
        return math.nan
    if user + producer == 0:
        return 0.0
    return 2.0 * user * producer / (user + producer)


@dataclass(frozen=True)
class ClassMetrics:
    name: str
    user: float
    producer: float
    f1: float
    support: int


@dataclass(frozen=True)
class AccuracyReport:
    classes: tuple
    user: float
    producer: float
    f1: float
    overall: float
    kappa: float
    n: int

    def __getitem__(self, name: str) -> ClassMetrics:
        for c in self.classes:
            if c.name == name:
                return c
        raise KeyError(name)

    def to_json(self) -> dict:
        return _clean(
            {
                "n": self.n,
                "overall_accuracy": self.overall,
                "kappa": self.kappa,
                "macro": {"user": self.user, "producer": self.producer, "f1": self.f1},
                "classes": [asdict(c) for c in self.classes],
            }
        )


def _clean(obj):
    if isinstance(obj, float):
        return None if math.isnan(obj) else obj
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def _nanmean(values) -> float:
    vals = [v for v in values if not math.isnan(v)]
    return sum(vals) / len(vals) if vals else math.nan


def per_class_metrics(m: ConfusionMatrix) -> AccuracyReport:
    """User's (column-wise) and producer's (row-wise) accuracy and F1 per class.

    Macro values are plain means of the per-class values; classes with an
    empty row or column are NaN and left out of those means.
    """
    if m.total == 0:
        raise DataError("empty confusion matrix")
    c = m.counts
    rows, cols = c.sum(axis=1), c.sum(axis=0)
    out = []
    for i, name in enumerate(m.class_names):
        u = c[i, i] / cols[i] if cols[i] else math.nan
        p = c[i, i] / rows[i] if rows[i] else math.nan
        out.append(ClassMetrics(name, float(u), float(p), f1(float(u), float(p)), int(rows[i])))
    return AccuracyReport(
        classes=tuple(out),
        user=_nanmean(x.user for x in out),
        producer=_nanmean(x.producer for x in out),
        f1=_nanmean(x.f1 for x in out),
        overall=m.overall_accuracy,
        kappa=kappa(m),
        n=m.total,
    )


METRICS: dict = {
    "kappa": kappa,
    "overall": lambda m: m.overall_accuracy,
    "user": lambda m: per_class_metrics(m).user,
    "producer": lambda m: per_class_metrics(m).producer,
    "f1": lambda m: per_class_metrics(m).f1,
}


def bootstrap_ci(
    truth,
    predicted,
    class_names,
    metric: Callable = kappa,
    n_boot: int = 1000,
    seed: int = 0,
    level: float = 0.95,
) -> tuple:
    """Percentile bootstrap interval of ``metric`` over point resamples.

    Replicate ``b`` draws from its own stream, so results do not depend on
    evaluation order. Undefined replicates (NaN) are ignored.
    """
    t = np.asarray(truth, dtype=np.int64)
    p = np.asarray(predicted, dtype=np.int64)
    if t.size < 2:
        raise DataError("bootstrap needs at least two points")
    if isinstance(metric, str):
        metric = METRICS[metric]
    n = len(class_names)
    cells = t * n + p
    stats = np.empty(n_boot)
    for b in range(n_boot):
        pick = rng_for(seed, b).integers(0, t.size, t.size)
        counts = np.bincount(cells[pick], minlength=n * n).reshape(n, n)
        stats[b] = metric(ConfusionMatrix(counts, tuple(class_names)))
    if np.isnan(stats).all():
        return math.nan, math.nan
    alpha = (1.0 - level) / 2.0
    lo, hi = np.nanpercentile(stats, [100 * alpha, 100 * (1 - alpha)])
    return float(lo), float(hi)


def format_table(headers, rows) -> str:
    """Aligned plain-text table."""

    def cell(v):
        if isinstance(v, float):
            return "-" if math.isnan(v) else f"{v:.4f}"
        return str(v)

    text = [[cell(v) for v in r] for r in rows]
    widths = [max(len(str(h)), *(len(r[i]) for r in text)) if text else len(str(h)) for i, h in enumerate(headers)]
    line = lambda vals: "  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(vals, widths)))
    return "\n".join([line([str(h) for h in headers])] + [line(r) for r in text]) + "\n"


def report_table(report: AccuracyReport) -> str:
    rows = [(c.name, c.f1, c.user, c.producer, c.support) for c in report.classes]
    rows.append(("Total", report.f1, report.user, report.producer, report.n))
    body = format_table(["Class", "F1", "User", "Producer", "Points"], rows)
    return body + f"Overall accuracy {report.overall:.4f}\nKappa {report.kappa:.4f}\n"


# -- runs and trials --------------------------------------------------------------------------------


@dataclass(frozen=True)
class TrialResult:
    trial_id: str
    user_accuracy: float
    producer_accuracy: float
    kappa: float
    f1: float
    training_time: float  # hours

    def __post_init__(self):
        for name in ("user_accuracy", "producer_accuracy", "f1"):
            v = getattr(self, name)
            if not (math.isnan(v) or 0.0 <= v <= 1.0):
                raise ValueError(f"{name} {v} outside [0, 1]")
        if not (math.isnan(self.kappa) or -1.0 <= self.kappa <= 1.0):
            raise ValueError(f"kappa {self.kappa} outside [-1, 1]")
        if self.training_time < 0:
            raise ValueError("negative training time")


RUN_METRICS = ("user_accuracy", "producer_accuracy", "kappa", "f1", "training_time")


def aggregate_runs(results: Sequence[TrialResult]) -> dict:
    """Mean and (min, max) across repeated runs for each metric."""
    if not results:
        raise ValueError("no runs to aggregate")
    out = {}
    for name in RUN_METRICS:
        vals = [getattr(r, name) for r in results]
        out[name] = {"mean": sum(vals) / len(vals), "min": min(vals), "max": max(vals)}
    return out


def round_up_time(hours: float, step: float = TIME_STEP_HOURS) -> float:
    return snapped_ceil(hours / step) * step


@dataclass(frozen=True)
class RankedTrial:
    trial_id: str
    rank: int
    score: float
    rank_user: float
    rank_producer: float
    rank_time: Optional[float]
    rounded_time: float
    kappa: float


def rank_trials(results: Sequence[TrialResult]) -> list:
    """Rank trials by user's + producer's accuracy ranks + twice the time rank.

    Each factor is ranked 1..T with the larger rank better (higher accuracy,
    shorter time); ties share the average rank. Times are first rounded up to
    a quarter hour, and time only counts when the rounded times differ by more
    than a quarter hour. The highest score gets final rank 1; equal scores go
    to the higher kappa, then the smaller trial id.
    """
    if len(results) < 2:
        raise ValueError("ranking needs at least two trials")
    ids = [r.trial_id for r in results]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate trial ids")
    ru = rankdata([r.user_accuracy for r in results], method="average")
    rp = rankdata([r.producer_accuracy for r in results], method="average")
    times = [round_up_time(r.training_time) for r in results]
    use_time = max(times) - min(times) > TIME_STEP_HOURS
    rt = rankdata([-t for t in times], method="average") if use_time else None
    scores = [float(ru[i] + rp[i] + (2 * rt[i] if use_time else 0.0)) for i in range(len(results))]

    def key(i):
        k = results[i].kappa
        return (-scores[i], math.inf if math.isnan(k) else -k, str(results[i].trial_id))

    order = sorted(range(len(results)), key=key)
    return [
        RankedTrial(
            trial_id=results[i].trial_id,
            rank=pos + 1,
            score=scores[i],
            rank_user=float(ru[i]),
            rank_producer=float(rp[i]),
            rank_time=float(rt[i]) if use_time else None,
            rounded_time=times[i],
            kappa=results[i].kappa,
        )
        for pos, i in enumerate(order)
    ]


def ranking_table(ranked: Sequence[RankedTrial]) -> str:
    rows = [
        (r.trial_id, r.rank, r.score, r.rank_user, r.rank_producer, "-" if r.rank_time is None else r.rank_time, r.rounded_time)
        for r in ranked
    ]
    return format_table(["Trial", "Rank", "Score", "User rank", "Producer rank", "Time rank", "Hours"], rows)
