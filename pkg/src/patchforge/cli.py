"""Command-line entry point.

Exit codes: 0 success, 2 configuration or usage error, 3 data error,
4 any other runtime failure. Logs go to stderr as one JSON object per line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4

log = logging.getLogger("patchforge")


class JsonFormatter(logging.Formatter):
    def format(self, record):
        out = {"level": record.levelname.lower(), "event": record.getMessage()}
        out.update(getattr(record, "fields", {}))
        return json.dumps(out, sort_keys=True, default=str)


def setup_logging(level: str) -> None:
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter())
    log.handlers[:] = [handler]
    log.setLevel(level.upper())
    log.propagate = False


def _require(*paths) -> None:
    missing = [f"{name}: {p} does not exist" for name, p in paths if p is not None and not Path(p).exists()]
    if missing:
        raise ConfigError(missing)


def _inputs(args):
    from .pipeline import load_catalog
    from .raster import load_raster
    from .vector import load_features

    _require(("--image", args.image), ("--features", args.features), ("--catalog", args.catalog))
    image = load_raster(args.image)
    features = load_features(args.features)
    catalog = load_catalog(args.catalog, features, args.background)
    features.validate(catalog)
    return image, features, catalog


# -- subcommands ----------------------------------------------------------------------------


def cmd_sample(args) -> int:
    from .sampling import grid_patches, save_extents, stratified_sample

    image, features, catalog = _inputs(args)
    if args.strategy == "grid":
        extents = grid_patches(image.window, features, catalog, args.patch_size, image.geotransform, args.cell_size, args.seed)
    else:
        if args.n_patches is None:
            raise ConfigError(["--n-patches: required for the stratified strategy"])
        extents = stratified_sample(
            features, catalog, args.n_patches, args.patch_size, image.window, image.geotransform,
            args.seed, mode=args.mode, area_scale=args.area_scale,
        )
    save_extents(extents, args.out, {"seed": args.seed, "strategy": args.strategy})
    log.info("sampled", extra={"fields": {"patches": len(extents), "out": str(args.out)}})
    return EXIT_OK


def cmd_extract(args) -> int:
    from .patchgen import extract_dataset
    from .sampling import load_extents

    _require(("--extents", args.extents))
    image, features, catalog = _inputs(args)
    extents = load_extents(args.extents)
    manifest = extract_dataset(image, features, catalog, extents, args.out, {"extents": str(args.extents)})
    log.info("extracted", extra={"fields": {"chips": len(manifest), "out": str(args.out)}})
    return EXIT_OK


def cmd_augment(args) -> int:
    from .augment import AugConfig, apply, chip_plan_seed, sample_plan
    from .patchgen import DatasetManifest, load_chip
    from .raster import GeoTransform, Raster, write_raster
    from .vector import ClassCatalog

    _require(("--dataset", args.dataset))
    manifest = DatasetManifest.load(args.dataset)
    manifest.check()
    catalog = ClassCatalog.from_names(manifest.class_order, manifest.background)
    config = AugConfig.with_overrides(json.loads(Path(args.overrides).read_text()) if args.overrides else None)
    out = Path(args.out) if args.out else Path(args.dataset) / "previews"
    out.mkdir(parents=True, exist_ok=True)
    plans = []
    for record in manifest.records[: args.preview]:
        chip = load_chip(manifest, record)
        seed = chip_plan_seed(args.seed, record.patch_id, args.epoch)
        plan = sample_plan(seed, config)
        aug = apply(plan, chip, background_index=catalog.background_index)
        pixels = np.concatenate([aug.image.transpose(2, 0, 1), aug.label.transpose(2, 0, 1).astype(np.float32)])
        gt = GeoTransform(float(record.col_off), 1.0, 0.0, float(-record.row_off), 0.0, -1.0)
        write_raster(Raster(pixels.astype(np.float32), gt), out / f"preview_{record.patch_id:07d}.rstr")
        plans.append({"patch_id": record.patch_id, "plan": plan.to_json()})
    (out / "plans.json").write_text(json.dumps({"seed": args.seed, "epoch": args.epoch, "plans": plans}, indent=1, sort_keys=True) + "\n")
    log.info("augmented", extra={"fields": {"previews": len(plans), "out": str(out)}})
    return EXIT_OK


def cmd_predict(args) -> int:
    from .predict import flatten_argmax, predict_image, predictor_from_spec
    from .raster import load_raster, write_raster
    from .vector import ClassCatalog

    _require(("--image", args.image), ("--catalog", args.catalog))
    image = load_raster(args.image)
    catalog = ClassCatalog.load(args.catalog) if args.catalog else None
    n = catalog.n_classes if catalog else args.n_classes
    order = catalog.band_order if catalog else None
    predictor = predictor_from_spec(args.predictor, n, ".", order)
    try:
        probs = predict_image(image, predictor, args.patch_size, args.mode, order)
    finally:
        if hasattr(predictor, "close"):
            predictor.close()
    write_raster(probs, args.out)
    if args.classmap:
        write_raster(flatten_argmax(probs, catalog), args.classmap)
    log.info("predicted", extra={"fields": {"mode": args.mode, "out": str(args.out)}})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluate import (
        bootstrap_ci,
        confusion_from_indices,
        generate_validation_points,
        label_points_from_features,
        label_points_from_raster,
        load_points,
        per_class_metrics,
        point_indices,
        report_table,
        save_points,
    )
    from .pipeline import dump_json, load_catalog, _nan_to_none
    from .raster import load_raster
    from .vector import ClassCatalog, load_features

    _require(("--classmap", args.classmap), ("--labels", args.labels), ("--features", args.features),
             ("--points", args.points), ("--catalog", args.catalog))
    classmap = load_raster(args.classmap)
    features = load_features(args.features) if args.features else None
    if args.catalog:
        catalog = ClassCatalog.load(args.catalog)
    elif features is not None:
        catalog = load_catalog(None, features, args.background)
    elif classmap.class_names:
        catalog = ClassCatalog.from_names(classmap.class_names, args.background)
    else:
        raise ConfigError(["--catalog: needed when neither features nor class names are available"])
    if args.points:
        points = load_points(args.points)
    else:
        points = generate_validation_points(classmap.window, classmap.geotransform, args.n, args.seed)
        if args.labels:
            points = label_points_from_raster(points, load_raster(args.labels), catalog)
        elif features is not None:
            points = label_points_from_features(points, features, catalog, classmap.geotransform)
        else:
            raise ConfigError(["truth source: give --points, --labels or --features"])
    truth, pred = point_indices(points, classmap, catalog)
    matrix = confusion_from_indices(truth, pred, catalog.band_order)
    report = per_class_metrics(matrix)
    metrics = report.to_json()
    if args.bootstrap and len(points) >= 2:
        metrics["kappa_ci95"] = list(bootstrap_ci(truth, pred, catalog.band_order, "kappa", args.bootstrap, args.seed))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not args.points:
        save_points(points, out / "points.csv")
    matrix.save(out / "confusion.csv")
    dump_json(_nan_to_none(metrics), out / "metrics.json")
    text = report_table(report)
    (out / "metrics.txt").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_rank(args) -> int:
    from .evaluate import ranking_table
    from .pipeline import dump_json, rank_results_file

    _require(("--results", args.results))
    ranked = rank_results_file(args.results)
    sys.stdout.write(ranking_table(ranked))
    if args.out:
        dump_json([asdict(r) for r in ranked], args.out)
    return EXIT_OK


def _overrides(args) -> dict:
    from .config import parse_override

    over = dict(parse_override(s) for s in args.set or ())
    if getattr(args, "output_dir", None):
        over["paths.output_dir"] = str(Path(args.output_dir).resolve())
    if getattr(args, "seed", None) is not None:
        over["seed"] = args.seed
    return over


def cmd_run(args) -> int:
    from .config import load_config
    from .pipeline import run_pipeline

    cfg = load_config(args.config, _overrides(args))
    log.info("config", extra={"fields": {"config_hash": cfg.hash, "seeds": cfg.seeds}})
    res = run_pipeline(cfg)
    summary = {"output_dir": str(res.output_dir), "config_hash": res.config_hash, "seeds": res.seeds}
    if res.metrics:
        summary["kappa"] = res.metrics.get("kappa")
    sys.stdout.write(json.dumps(summary, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_matrix(args) -> int:
    from .config import load_config
    from .pipeline import results_table, trial_matrix

    _require(("--variations", args.variations))
    cfg = load_config(args.config, _overrides(args))
    spec = json.loads(Path(args.variations).read_text())
    variations = spec["variations"] if isinstance(spec, dict) else spec
    repeats = args.repeats if args.repeats is not None else (spec.get("repeats", 5) if isinstance(spec, dict) else 5)
    if not variations:
        raise ConfigError(["variations: at least one variation is required"])
    result = trial_matrix(cfg, variations, repeats, parallel=args.parallel)
    sys.stdout.write(results_table(result))
    return EXIT_OK


def cmd_synth(args) -> int:
    from .pipeline import dump_json
    from .raster import write_raster
    from .synthetic import PALETTE, make_scene
    from .vector import save_features

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    scene = make_scene(args.size, args.pixel_size, args.seed)
    write_raster(scene.image, out / "image.rstr")
    write_raster(scene.labels, out / "labels.rstr")
    save_features(scene.features, out / "features.geojson")
    scene.catalog.save(out / "catalog.json")
    names = scene.catalog.band_order
    dump_json({"class_colors": {n: PALETTE[i % len(PALETTE)].tolist() for i, n in enumerate(names)}}, out / "colors.json")
    patch = min(512, args.size // 4)
    config = {
        "seed": args.seed,
        "paths": {
            "image": "image.rstr",
            "features": "features.geojson",
            "catalog": "catalog.json",
            "labels": "labels.rstr",
            "output_dir": "run",
        },
        "sampling": {"strategy": "grid", "patch_size": patch},
        "prediction": {"predictor": "oracle:labels.rstr,0", "mode": "multi"},
        "evaluation": {"n": 1000, "bootstrap": 200},
    }
    dump_json(config, out / "config.json")
    log.info("synthesized", extra={"fields": {"size": args.size, "out": str(out)}})
    return EXIT_OK


def cmd_resample(args) -> int:
    from .raster import load_raster, resample_cubic, write_raster

    _require(("--image", args.image))
    write_raster(resample_cubic(load_raster(args.image), args.pixel_size, edge=args.edge), args.out)
    return EXIT_OK


# -- parser -----------------------------------------------------------------------------------


def _inputs_args(p, image=True):
    if image:
        p.add_argument("--image", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--catalog", help="class catalog JSON (default: classes found in the features)")
    p.add_argument("--background", default="Other")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="patchforge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"patchforge {__version__}")
    parser.add_argument("--log-level", default="info", choices=["debug", "info", "warning", "error"])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sample", help="choose patch extents")
    _inputs_args(p)
    p.add_argument("--strategy", choices=["grid", "stratified"], default="stratified")
    p.add_argument("--patch-size", type=int, required=True)
    p.add_argument("--cell-size", type=int)
    p.add_argument("--n-patches", type=int)
    p.add_argument("--mode", choices=["literal", "budget"], default="literal")
    p.add_argument("--area-scale", type=float, default=1.0)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("extract", help="write image/label chips and a manifest")
    _inputs_args(p)
    p.add_argument("--extents", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("augment", help="write augmented chip previews")
    p.add_argument("--dataset", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epoch", type=int, default=0)
    p.add_argument("--preview", type=int, default=8)
    p.add_argument("--overrides", help="JSON file of augmentation parameter overrides")
    p.add_argument("--out")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("predict", help="tiled prediction and class map")
    p.add_argument("--image", required=True)
    p.add_argument("--predictor", required=True, help="constant:k | color-rule:cfg.json | oracle:labels.rstr,eps | exec:cmd")
    p.add_argument("--patch-size", type=int, required=True)
    p.add_argument("--mode", choices=["single", "multi"], default="single")
    p.add_argument("--catalog")
    p.add_argument("--n-classes", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--classmap")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="accuracy assessment of a class map")
    p.add_argument("--classmap", required=True)
    p.add_argument("--labels")
    p.add_argument("--features")
    p.add_argument("--points", help="CSV with x,y,truth")
    p.add_argument("--catalog")
    p.add_argument("--background", default="Other")
    p.add_argument("--n", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--bootstrap", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("rank", help="rank trials")
    p.add_argument("--results", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)

    for name, func, helptext in (("run", cmd_run, "run the full pipeline"), ("matrix", cmd_matrix, "run a trial matrix")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True)
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (JSON value)")
        p.add_argument("--output-dir")
        p.add_argument("--seed", type=int)
        p.set_defaults(func=func)
        if name == "matrix":
            p.add_argument("--variations", required=True)
            p.add_argument("--repeats", type=int)
            p.add_argument("--parallel", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic scene and example config")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--pixel-size", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("resample", help="cubic convolution resampling")
    p.add_argument("--image", required=True)
    p.add_argument("--pixel-size", type=float, required=True)
    p.add_argument("--edge", choices=["linear", "reflect"], default="linear")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_resample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    setup_logging(args.log_level)
    try:
        return args.func(args)
    except ConfigError as exc:
        for problem in exc.problems:
            log.error("config error", extra={"fields": {"problem": problem}})
        return EXIT_CONFIG
    except (DataError, OSError, json.JSONDecodeError) as exc:
        log.error("data error", extra={"fields": {"error": f"{type(exc).__name__}: {exc}"}})
        return EXIT_DATA
    except Exception as exc:  # noqa: BLE001 - last-resort exit code
        log.error("runtime failure", extra={"fields": {"error": f"{type(exc).__name__}: {exc}"}})
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
