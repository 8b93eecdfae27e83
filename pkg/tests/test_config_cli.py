import json
import os
import subprocess
import sys
from pathlib import Path

import pytest

from patchforge.cli import main
from patchforge.config import build_config, config_hash, load_config, parse_override
from patchforge.errors import ConfigError
from patchforge.pipeline import rank_results_file, run_pipeline, trial_matrix


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["--log-level", "error", "synth", "--size", "128", "--seed", "4", "--out", str(out)]) == 0
    return out


def test_synth_writes_inputs(synth):
    for name in ("image.rstr", "labels.rstr", "features.geojson", "catalog.json", "colors.json", "config.json"):
        assert (synth / name).exists()


def test_config_defaults_and_seeds(synth):
    cfg = load_config(synth / "config.json")
    assert cfg.get("batching.batch_size") == 16
    assert all(isinstance(v, int) for v in cfg.seeds.values())
    again = load_config(synth / "config.json")
    assert again.seeds == cfg.seeds and again.hash == cfg.hash


def test_random_top_seed_is_recorded(synth):
    raw = json.loads((synth / "config.json").read_text())
    del raw["seed"]
    cfg = build_config(raw, synth)
    assert isinstance(cfg.get("seed"), int)
    assert cfg.seeds == build_config({**raw, "seed": cfg.get("seed")}, synth).seeds


def test_hash_ignores_output_dir(synth):
    cfg = load_config(synth / "config.json")
    moved = cfg.with_overrides({"paths.output_dir": "/elsewhere"})
    assert moved.hash == cfg.hash
    assert cfg.with_overrides({"sampling.patch_size": 16}).hash != cfg.hash
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})


def test_all_problems_listed(synth):
    raw = json.loads((synth / "config.json").read_text())
    raw["sampling"]["patch_size"] = 1
    raw["batching"] = {"batch_size": 0}
    raw["bogus"] = True
    with pytest.raises(ConfigError) as err:
        build_config(raw, synth)
    text = "\n".join(err.value.problems)
    assert "sampling.patch_size" in text and "batching.batch_size" in text and "bogus" in text


def test_cross_field_checks(synth):
    raw = json.loads((synth / "config.json").read_text())
    raw["prediction"] = {"enabled": True, "predictor": None}
    raw["paths"]["labels"] = None
    with pytest.raises(ConfigError) as err:
        build_config(raw, synth)
    assert len(err.value.problems) == 2


def test_parse_override():
    assert parse_override("sampling.patch_size=64") == ("sampling.patch_size", 64)
    assert parse_override("prediction.mode=multi") == ("prediction.mode", "multi")
    with pytest.raises(ConfigError):
        parse_override("nothing")


def test_missing_image_exit_code(synth, tmp_path, capfd):
    raw = json.loads((synth / "config.json").read_text())
    raw["paths"]["image"] = str(tmp_path / "gone.rstr")
    for k in ("features", "catalog", "labels"):
        raw["paths"][k] = str(synth / raw["paths"][k])
    (tmp_path / "c.json").write_text(json.dumps(raw))
    assert main(["run", "--config", str(tmp_path / "c.json")]) == 2
    lines = [json.loads(l) for l in capfd.readouterr().err.splitlines()]
    assert any("paths.image" in l.get("problem", "") for l in lines)


def test_usage_error_exit_code():
    assert main(["run"]) == 2
    assert main(["no-such-command"]) == 2


def test_data_error_exit_code(tmp_path):
    bad = tmp_path / "bad.rstr"
    bad.write_bytes(b"JUNKJUNKJUNK")
    assert main(["resample", "--image", str(bad), "--pixel-size", "2", "--out", str(tmp_path / "o.rstr")]) == 3


def test_run_and_replay(synth, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["--log-level", "error", "run", "--config", str(synth / "config.json"), "--output-dir", str(a)]) == 0
    assert main(["--log-level", "error", "run", "--config", str(synth / "config.json"), "--output-dir", str(b)]) == 0
    metrics = json.loads((a / "metrics.json").read_text())
    assert metrics["kappa"] == 1.0
    for name in ("extents.json", "metrics.json", "batches.json", "classmap.rstr", "dataset/manifest.json"):
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    ext = json.loads((a / "extents.json").read_text())
    cfg = load_config(synth / "config.json")
    assert ext["config_hash"] == cfg.hash and ext["seeds"] == cfg.seeds
    manifest = json.loads((a / "run_manifest.json").read_text())
    assert "output_dir" not in manifest["config"]["paths"]
    # replaying the recorded config reproduces the run
    replay = dict(manifest["config"])
    replay["paths"] = {**replay["paths"], "output_dir": str(tmp_path / "c")}
    (synth / "replay.json").write_text(json.dumps(replay))
    run_pipeline(load_config(synth / "replay.json"))
    assert (tmp_path / "c" / "metrics.json").read_bytes() == (a / "metrics.json").read_bytes()


def test_stage_subcommands(synth, tmp_path):
    common = ["--image", str(synth / "image.rstr"), "--features", str(synth / "features.geojson"), "--catalog", str(synth / "catalog.json")]
    q = ["--log-level", "error"]
    assert main(q + ["sample", *common, "--strategy", "stratified", "--patch-size", "16", "--n-patches", "40", "--seed", "1", "--out", str(tmp_path / "e.json")]) == 0
    assert main(q + ["extract", *common, "--extents", str(tmp_path / "e.json"), "--out", str(tmp_path / "ds")]) == 0
    assert main(q + ["augment", "--dataset", str(tmp_path / "ds"), "--seed", "3", "--preview", "2", "--out", str(tmp_path / "aug")]) == 0
    assert len(list((tmp_path / "aug").glob("*.rstr"))) == 2
    assert main(q + ["predict", "--image", str(synth / "image.rstr"), "--predictor", f"oracle:{synth / 'labels.rstr'},0",
                     "--patch-size", "32", "--mode", "multi", "--catalog", str(synth / "catalog.json"),
                     "--out", str(tmp_path / "p.rstr"), "--classmap", str(tmp_path / "cm.rstr")]) == 0
    assert main(q + ["evaluate", "--classmap", str(tmp_path / "cm.rstr"), "--labels", str(synth / "labels.rstr"),
                     "--catalog", str(synth / "catalog.json"), "--n", "300", "--bootstrap", "50", "--out", str(tmp_path / "ev")]) == 0
    assert json.loads((tmp_path / "ev" / "metrics.json").read_text())["kappa"] == 1.0


@pytest.fixture(scope="module")
def matrix(synth, tmp_path_factory):
    root = tmp_path_factory.mktemp("matrix")
    cfg = load_config(synth / "config.json", {"evaluation.bootstrap": 20, "evaluation.n": 400})
    variations = [
        {"name": "noisy", "set": {"prediction.predictor": "oracle:labels.rstr,0.3,1"}, "training_time": 1.0},
        {"name": "clean", "set": {"prediction.predictor": "oracle:labels.rstr,0"}, "training_time": 1.0},
    ]
    return trial_matrix(cfg, variations, repeats=5, output_dir=root), root


def test_matrix_ranks_clean_first(matrix):
    result, root = matrix
    assert result["ranking"][0]["trial_id"] == "clean"
    ranked = rank_results_file(root / "results.json")
    assert ranked[0].trial_id == "clean" and ranked[0].rank == 1


def test_matrix_records_seeds(matrix):
    result, root = matrix
    for t in result["trials"]:
        assert len(t["seeds"]) == 5 and len(set(t["seeds"])) == 5 and t["failures"] == 0
        assert len(t["runs"]) == 5
    assert result["trials"][0]["seeds"] == result["trials"][1]["seeds"]
    assert (root / "results.txt").read_text().startswith("Trial")


def test_matrix_rejects_empty(synth):
    with pytest.raises(ValueError):
        trial_matrix(load_config(synth / "config.json"), [], 1)


def test_matrix_cli_empty(synth, tmp_path):
    (tmp_path / "v.json").write_text('{"variations": []}')
    assert main(["matrix", "--config", str(synth / "config.json"), "--variations", str(tmp_path / "v.json")]) == 2


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "patchforge.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and "patchforge" in out.stdout
