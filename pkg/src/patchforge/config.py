"""Run configuration: defaults, schema validation, seed resolution and hashing."""

from __future__ import annotations

import copy
import hashlib
import json
import secrets
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ConfigError
from .seeding import derive_seed

DEFAULTS = {
    "seed": None,
    "paths": {"catalog": None, "labels": None},
    "sampling": {
        "strategy": "stratified",
        "patch_size": 512,
        "cell_size": None,
        "n_patches": 22_830,
        "mode": "literal",
        "area_scale": 1.0,
        "seed": None,
    },
    "batching": {"batch_size": 16, "epochs": 1, "seed": None},
    "augmentation": {"enabled": False, "seed": None, "overrides": {}},
    "scaling": {"enabled": False},
    "prediction": {"enabled": True, "mode": "single", "predictor": None, "patch_size": None},
    "evaluation": {
        "enabled": True,
        "truth": "labels",
        "points": None,
        "n": 10_000,
        "seed": None,
        "bootstrap": 1000,
    },
}

SEED_FIELDS = ("sampling.seed", "batching.seed", "augmentation.seed", "evaluation.seed")
PATH_FIELDS = ("paths.image", "paths.features", "paths.catalog", "paths.labels", "evaluation.points")
HASH_EXCLUDE = ("paths.output_dir",)


def schema() -> dict:
    text = resources.files("patchforge").joinpath("schemas/config.schema.json").read_text()
    return json.loads(text)


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "overrides":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def get_path(cfg: dict, dotted: str):
    node = cfg
    for part in dotted.split("."):
        if not isinstance(node, dict) or part not in node:
            return None
        node = node[part]
    return node


def set_path(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigError([f"{dotted}: {part} is not a section"])
    node[parts[-1]] = value


def parse_override(text: str) -> tuple:
    """``key.path=value``; the value is read as JSON, falling back to a string."""
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError([f"override {text!r} is not key=value"])
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def config_hash(cfg: dict) -> str:
    """SHA-256 of the canonical config with machine-local fields removed."""
    clean = copy.deepcopy(cfg)
    for dotted in HASH_EXCLUDE:
        parent, _, leaf = dotted.rpartition(".")
        node = get_path(clean, parent) if parent else clean
        if isinstance(node, dict):
            node.pop(leaf, None)
    blob = json.dumps(clean, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass(frozen=True)
class RunConfig:
    """A validated configuration with every seed resolved.

    ``data`` is the full config as it would be replayed; ``base_dir`` anchors
    relative paths.
    """

    data: dict
    base_dir: Path
    raw: dict = field(default_factory=dict, compare=False)

    def __getitem__(self, section: str):
        return self.data[section]

    def get(self, dotted: str):
        return get_path(self.data, dotted)

    def path(self, dotted: str) -> Optional[Path]:
        value = get_path(self.data, dotted)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("paths.output_dir")

    @property
    def hash(self) -> str:
        return config_hash(self.data)

    @property
    def seeds(self) -> dict:
        return {k: get_path(self.data, k) for k in ("seed",) + SEED_FIELDS}

    def with_overrides(self, overrides: dict) -> "RunConfig":
        """Re-resolve from the raw config, so derived seeds follow a new top-level seed."""
        data = copy.deepcopy(self.raw or self.data)
        for k, v in overrides.items():
            set_path(data, k, v)
        return build_config(data, self.base_dir)

    def dumps(self) -> str:
        return json.dumps(self.data, indent=1, sort_keys=True) + "\n"


def _problems(data: dict, base_dir: Path) -> list:
    problems = []
    for err in sorted(jsonschema.Draft202012Validator(schema()).iter_errors(data), key=lambda e: list(e.path)):
        where = ".".join(str(p) for p in err.path) or "(root)"
        problems.append(f"{where}: {err.message}")
    for dotted in PATH_FIELDS:
        value = get_path(data, dotted)
        if isinstance(value, str):
            p = Path(value) if Path(value).is_absolute() else base_dir / value
            if not p.exists():
                problems.append(f"{dotted}: {value} does not exist")
    pred = get_path(data, "prediction")
    if isinstance(pred, dict) and pred.get("enabled") and not pred.get("predictor"):
        problems.append("prediction.predictor: required when prediction is enabled")
    ev = get_path(data, "evaluation")
    if isinstance(ev, dict) and ev.get("enabled"):
        if ev.get("truth") == "labels" and not get_path(data, "paths.labels"):
            problems.append("paths.labels: required when evaluation.truth is 'labels'")
        if ev.get("truth") == "points" and not ev.get("points"):
            problems.append("evaluation.points: required when evaluation.truth is 'points'")
        if not (isinstance(pred, dict) and pred.get("enabled")):
            problems.append("evaluation.enabled: evaluation needs prediction to be enabled")
    return problems


def build_config(raw: dict, base_dir=".") -> RunConfig:
    """Merge defaults, fill missing seeds, then validate.

    Unset seeds are derived from the top-level ``seed``, which itself
    defaults to a fresh random draw; all of them end up recorded in the
    config. Raises :class:`ConfigError` listing every problem found.
    """
    if not isinstance(raw, dict):
        raise ConfigError(["(root): config must be a JSON object"])
    raw = copy.deepcopy(raw)
    data = _merge(DEFAULTS, raw)
    base_dir = Path(base_dir)
    if data.get("seed") is None:
        data["seed"] = secrets.randbits(63)
    if isinstance(data["seed"], int):
        for i, dotted in enumerate(SEED_FIELDS):
            if get_path(data, dotted) is None:
                set_path(data, dotted, derive_seed(data["seed"], i))
    problems = _problems(data, base_dir)
    if problems:
        raise ConfigError(problems)
    return RunConfig(data, base_dir, raw)


def load_config(path, overrides: Optional[dict] = None) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError([f"config: {path} does not exist"]) from None
    except json.JSONDecodeError as exc:
        raise ConfigError([f"config: invalid JSON ({exc})"]) from None
    for k, v in (overrides or {}).items():
        set_path(raw, k, v)
    return build_config(raw, path.parent)
