"""End-to-end runs and trial matrices driven by a :class:`RunConfig`.

Every JSON artifact carries the config hash and the seeds that produced it;
``run_manifest.json`` additionally lists a SHA-256 for every file written.
Nothing time- or host-dependent is recorded, so identical configs give
byte-identical outputs.
"""

from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .augment import AugConfig, augment_batch
from .config import RunConfig, get_path, set_path
from .errors import DataError, PatchforgeError
from .evaluate import (
    TrialResult,
    aggregate_runs,
    bootstrap_ci,
    confusion_from_indices,
    format_table,
    generate_validation_points,
    label_points_from_features,
    label_points_from_raster,
    load_points,
    per_class_metrics,
    point_indices,
    rank_trials,
    ranking_table,
    report_table,
    save_points,
)
from .patchgen import batch_iter, extract_dataset, reported_batches_per_epoch, scale_batch
from .predict import flatten_argmax, predict_image, predictor_from_spec
from .raster import Raster, load_raster, write_raster
from .sampling import grid_patches, save_extents, stratified_sample
from .seeding import derive_seed
from .vector import ClassCatalog, FeatureSet, load_features

log = logging.getLogger("patchforge")


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def load_catalog(path, features: FeatureSet, background: str = "Other") -> ClassCatalog:
    if path is not None:
        return ClassCatalog.load(path)
    return ClassCatalog.from_names({f.class_name for f in features} | {background}, background)


def _nan_to_none(obj):
    if isinstance(obj, float) and math.isnan(obj):
        return None
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    return obj


@dataclass(frozen=True)
class RunResult:
    output_dir: Path
    config_hash: str
    seeds: dict
    artifacts: dict
    metrics: Optional[dict] = None


def sample_extents(cfg: RunConfig, image: Raster, features: FeatureSet, catalog: ClassCatalog) -> list:
    s = cfg["sampling"]
    gt = image.geotransform
    if s["strategy"] == "grid":
        return grid_patches(image.window, features, catalog, s["patch_size"], gt, s["cell_size"], s["seed"])
    return stratified_sample(
        features,
        catalog,
        s["n_patches"],
        s["patch_size"],
        image.window,
        gt,
        s["seed"],
        mode=s["mode"],
        area_scale=s["area_scale"],
    )


def batch_stage(cfg: RunConfig, manifest, catalog: ClassCatalog, provenance: dict) -> dict:
    """Walk every epoch's batches through augmentation and scaling, recording
    the chip order and the per-band value range each batch ends with."""
    b, aug = cfg["batching"], cfg["augmentation"]
    aug_config = AugConfig.with_overrides(aug["overrides"]) if aug["enabled"] else None
    epochs = []
    for epoch in range(b["epochs"]):
        batches = []
        for batch in batch_iter(manifest, b["batch_size"], derive_seed(b["seed"], epoch)):
            if aug_config is not None:
                batch = augment_batch(
                    batch, aug["seed"], epoch, background_index=catalog.background_index, config=aug_config
                )
            if cfg["scaling"]["enabled"]:
                batch = scale_batch(batch)
            batches.append(
                {
                    "patch_ids": list(batch.patch_ids),
                    "band_min": [float(v) for v in batch.images.min(axis=(0, 1, 2))],
                    "band_max": [float(v) for v in batch.images.max(axis=(0, 1, 2))],
                }
            )
        epochs.append({"epoch": epoch, "batches": batches})
    return {
        **provenance,
        "n_chips": len(manifest),
        "batch_size": b["batch_size"],
        "batches_per_epoch": reported_batches_per_epoch(len(manifest), b["batch_size"]),
        "augmentation": aug["enabled"],
        "scaling": cfg["scaling"]["enabled"],
        "epochs": epochs,
    }


def truth_points(cfg: RunConfig, image: Raster, features, catalog, labels: Optional[Raster]) -> list:
    ev = cfg["evaluation"]
    if ev["truth"] == "points":
        return load_points(cfg.path("evaluation.points"))
    pts = generate_validation_points(image.window, image.geotransform, ev["n"], ev["seed"])
    if ev["truth"] == "labels":
        return label_points_from_raster(pts, labels, catalog)
    return label_points_from_features(pts, features, catalog, image.geotransform)


def run_pipeline(cfg: RunConfig) -> RunResult:
    """sample -> extract -> batches (augment, scale) -> predict -> evaluate."""
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    provenance = {"config_hash": cfg.hash, "seeds": cfg.seeds}
    artifacts = []

    image = load_raster(cfg.path("paths.image"))
    features = load_features(cfg.path("paths.features"))
    catalog = load_catalog(cfg.path("paths.catalog"), features)
    features.validate(catalog)
    labels = load_raster(cfg.path("paths.labels")) if cfg.get("paths.labels") else None

    t0 = time.perf_counter()
    extents = sample_extents(cfg, image, features, catalog)
    if not extents:
        raise DataError("sampling produced no patches")
    save_extents(extents, out / "extents.json", provenance)
    artifacts.append("extents.json")
    log.info("sampled", extra={"fields": {"stage": "sample", "patches": len(extents), "seconds": round(time.perf_counter() - t0, 3)}})

    t0 = time.perf_counter()
    creation = {**provenance, **{k: cfg.get("sampling." + k) for k in ("strategy", "patch_size", "n_patches", "mode")}}
    manifest = extract_dataset(image, features, catalog, extents, out / "dataset", creation)
    artifacts.append("dataset/manifest.json")
    artifacts.extend(f"dataset/{r.path}" for r in manifest.records)
    log.info("extracted", extra={"fields": {"stage": "extract", "chips": len(manifest), "seconds": round(time.perf_counter() - t0, 3)}})

    if cfg.get("batching.epochs"):
        t0 = time.perf_counter()
        dump_json(batch_stage(cfg, manifest, catalog, provenance), out / "batches.json")
        artifacts.append("batches.json")
        log.info("batched", extra={"fields": {"stage": "batch", "seconds": round(time.perf_counter() - t0, 3)}})

    metrics = None
    if cfg.get("prediction.enabled"):
        t0 = time.perf_counter()
        p = cfg["prediction"]
        predictor = predictor_from_spec(p["predictor"], catalog.n_classes, cfg.base_dir, catalog.band_order)
        if predictor.n_classes != catalog.n_classes:
            raise DataError(f"predictor has {predictor.n_classes} classes, catalog {catalog.n_classes}")
        try:
            probs = predict_image(image, predictor, p["patch_size"] or cfg.get("sampling.patch_size"), p["mode"], catalog.band_order)
        finally:
            close = getattr(predictor, "close", None)
            if close is not None:
                close()
        classmap = flatten_argmax(probs, catalog)
        write_raster(probs, out / "probs.rstr")
        write_raster(classmap, out / "classmap.rstr")
        artifacts += ["probs.rstr", "probs.rstr.json", "classmap.rstr", "classmap.rstr.json"]
        log.info("predicted", extra={"fields": {"stage": "predict", "mode": p["mode"], "seconds": round(time.perf_counter() - t0, 3)}})

        if cfg.get("evaluation.enabled"):
            t0 = time.perf_counter()
            ev = cfg["evaluation"]
            points = truth_points(cfg, image, features, catalog, labels)
            truth, pred = point_indices(points, classmap, catalog)
            matrix = confusion_from_indices(truth, pred, catalog.band_order)
            report = per_class_metrics(matrix)
            metrics = {**provenance, **report.to_json()}
            if ev["bootstrap"] and len(points) >= 2:
                lo, hi = bootstrap_ci(truth, pred, catalog.band_order, "kappa", ev["bootstrap"], ev["seed"])
                metrics["kappa_ci95"] = [lo, hi]
            metrics = _nan_to_none(metrics)
            save_points(points, out / "points.csv")
            matrix.save(out / "confusion.csv")
            dump_json(metrics, out / "metrics.json")
            (out / "metrics.txt").write_text(report_table(report))
            artifacts += ["points.csv", "confusion.csv", "metrics.json", "metrics.txt"]
            log.info("evaluated", extra={"fields": {"stage": "evaluate", "kappa": metrics["kappa"], "seconds": round(time.perf_counter() - t0, 3)}})

    config_record = copy.deepcopy(cfg.data)
    config_record["paths"].pop("output_dir", None)
    hashes = {a: sha256_file(out / a) for a in sorted(artifacts) if (out / a).exists()}
    dump_json({**provenance, "config": config_record, "artifacts": hashes}, out / "run_manifest.json")
    return RunResult(out, cfg.hash, cfg.seeds, hashes, metrics)


# -- trial matrices -----------------------------------------------------------------------------


def _run_cell(cfg: RunConfig) -> dict:
    try:
        res = run_pipeline(cfg)
    except PatchforgeError as exc:
        return {"seed": cfg.get("seed"), "error": f"{type(exc).__name__}: {exc}"}
    m = res.metrics or {}
    macro = m.get("macro", {})
    return {
        "seed": cfg.get("seed"),
        "config_hash": res.config_hash,
        "user_accuracy": macro.get("user"),
        "producer_accuracy": macro.get("producer"),
        "f1": macro.get("f1"),
        "kappa": m.get("kappa"),
    }


def _as_float(v) -> float:
    return math.nan if v is None else float(v)


def trial_matrix(
    base: RunConfig,
    variations: Sequence[dict],
    repeats: int = 5,
    output_dir=None,
    parallel: bool = False,
) -> dict:
    """Run each variation ``repeats`` times and rank the variations.

    A variation is ``{"name": str, "set": {dotted.key: value}, "training_time": hours}``.
    Repeat ``r`` of every variation uses top-level seed ``derive_seed(base_seed, r)``,
    so variations see the same seeds. Failed runs are recorded and skipped
    when aggregating; variations with no successful run are left unranked.
    """
    if not variations:
        raise ValueError("trial matrix needs at least one variation")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    names = [v["name"] for v in variations]
    if len(set(names)) != len(names):
        raise ValueError("variation names must be unique")
    root = Path(output_dir) if output_dir is not None else base.output_dir
    root.mkdir(parents=True, exist_ok=True)
    seeds = [derive_seed(base.get("seed"), r) for r in range(repeats)]

    cells = []
    for v in variations:
        for r, seed in enumerate(seeds):
            over = {**v.get("set", {}), "seed": seed, "paths.output_dir": str((root / "trials" / v["name"] / f"run_{r}").resolve())}
            for dotted in ("sampling.seed", "batching.seed", "augmentation.seed", "evaluation.seed"):
                over.setdefault(dotted, None)
            cells.append(base.with_overrides(over))

    if parallel:
        with ThreadPoolExecutor() as pool:
            runs = list(pool.map(_run_cell, cells))
    else:
        runs = [_run_cell(c) for c in cells]

    trials, summaries = [], []
    for i, v in enumerate(variations):
        mine = runs[i * repeats:(i + 1) * repeats]
        hours = float(v.get("training_time", 0.0))
        ok = [
            TrialResult(
                v["name"],
                _as_float(r["user_accuracy"]),
                _as_float(r["producer_accuracy"]),
                _as_float(r["kappa"]),
                _as_float(r["f1"]),
                hours,
            )
            for r in mine
            if "error" not in r
        ]
        agg = aggregate_runs(ok) if ok else None
        trials.append(
            {
                "trial_id": v["name"],
                "parameters": v.get("set", {}),
                "seeds": seeds,
                "runs": mine,
                "failures": sum("error" in r for r in mine),
                "aggregate": agg,
            }
        )
        if agg is not None:
            summaries.append(
                TrialResult(
                    v["name"],
                    agg["user_accuracy"]["mean"],
                    agg["producer_accuracy"]["mean"],
                    agg["kappa"]["mean"],
                    agg["f1"]["mean"],
                    agg["training_time"]["mean"],
                )
            )
    ranking = [asdict(r) for r in rank_trials(summaries)] if len(summaries) >= 2 else [
        {"trial_id": s.trial_id, "rank": 1} for s in summaries
    ]
    ranks = {r["trial_id"]: r["rank"] for r in ranking}
    for t in trials:
        t["ranking"] = ranks.get(t["trial_id"])
    result = _nan_to_none({"config_hash": base.hash, "repeats": repeats, "trials": trials, "ranking": ranking})
    dump_json(result, root / "results.json")
    (root / "results.txt").write_text(results_table(result))
    return result


def _fmt_interval(agg: Optional[dict], key: str) -> str:
    if not agg or agg[key]["mean"] is None:
        return "-"
    a = agg[key]
    return f"{a['mean']:.2f} ({a['min']:.2f} - {a['max']:.2f})"


def results_table(result: dict) -> str:
    rows = [
        (
            t["trial_id"],
            "-" if not t["aggregate"] else f"{t['aggregate']['training_time']['mean']:.1f}",
            _fmt_interval(t["aggregate"], "kappa"),
            _fmt_interval(t["aggregate"], "f1"),
            _fmt_interval(t["aggregate"], "user_accuracy"),
            _fmt_interval(t["aggregate"], "producer_accuracy"),
            "-" if t["ranking"] is None else t["ranking"],
        )
        for t in result["trials"]
    ]
    return format_table(["Trial", "Hours", "Kappa", "F1", "User", "Producer", "Ranking"], rows)


def rank_results_file(path) -> list:
    """Rank a results file: a trial-matrix ``results.json`` or a plain list of
    trial records with user/producer accuracy, kappa, f1 and training_time."""
    obj = json.loads(Path(path).read_text())
    if isinstance(obj, dict) and "trials" in obj:
        records = [
            {
                "trial_id": t["trial_id"],
                **{k: t["aggregate"][k]["mean"] for k in ("user_accuracy", "producer_accuracy", "kappa", "f1", "training_time")},
            }
            for t in obj["trials"]
            if t.get("aggregate")
        ]
    elif isinstance(obj, list):
        records = obj
    else:
        raise DataError(f"{path}: expected a results object or a list of trials")
    try:
        results = [
            TrialResult(
                str(r["trial_id"]),
                _as_float(r["user_accuracy"]),
                _as_float(r["producer_accuracy"]),
                _as_float(r.get("kappa")),
                _as_float(r.get("f1")),
                float(r.get("training_time", 0.0)),
            )
            for r in records
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: bad trial record ({exc})") from None
    return rank_trials(results)
