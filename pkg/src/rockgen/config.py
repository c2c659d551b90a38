"""Experiment configuration: YAML schema, validation, and canned templates.

A config fully determines an experiment: data source (synthetic generator
settings or a raw volume), conditioning schema, train plan, evaluation
selection, output directory, and seed.  The validated config is persisted
verbatim into every artifact directory, so a run can be re-derived from
its outputs alone.
"""

from __future__ import annotations

import copy

import yaml

from .errors import ConfigError

CORR_MODES = ("off", "isotropic", "anisotropic")
PRESETS = ("desk", "full")

DEFAULTS = {
    "name": "experiment",
    "seed": 0,
    "out": "runs/experiment",
    "data": {},
    "schema": {"rock_types": 0, "porosity": False, "corr_length": "off"},
    "train": {"preset": "desk"},
    "evaluate": {"sizes": [], "cohort": 200, "metrics": ["phi"], "targets": {}},
}


def _fail(path: str, message: str):
    raise ConfigError(f"{path}: {message}")


def _check_type(value, types, path):
    if not isinstance(value, types):
        names = types.__name__ if isinstance(types, type) else "/".join(t.__name__ for t in types)
        _fail(path, f"expected {names}, got {type(value).__name__}")
    return value


def validate_config(raw: dict) -> dict:
    """Validate and normalize a config dict; raises ConfigError on problems."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        _fail("config", f"unknown keys {sorted(unknown)}")
    cfg = copy.deepcopy(DEFAULTS)
    for key, val in raw.items():
        if isinstance(cfg[key], dict) and isinstance(val, dict):
            cfg[key].update(copy.deepcopy(val))
        else:
            cfg[key] = copy.deepcopy(val)

    _check_type(cfg["seed"], int, "seed")
    _check_type(cfg["name"], str, "name")
    _check_type(cfg["out"], str, "out")

    data = _check_type(cfg["data"], dict, "data")
    has_synth = "synthetic" in data
    has_source = "source" in data
    if has_synth == has_source:
        _fail("data", "exactly one of 'synthetic' or 'source' is required")
    if has_synth:
        syn = _check_type(data["synthetic"], dict, "data.synthetic")
        syn.setdefault("count", 512)
        syn.setdefault("edge", 32)
        syn.setdefault("porosity", [0.15, 0.35])
        syn.setdefault("corr_length", 3.0)
        syn.setdefault("anisotropic", False)
        syn.setdefault("types", None)
        _check_type(syn["count"], int, "data.synthetic.count")
        _check_type(syn["edge"], int, "data.synthetic.edge")
        if syn["count"] < 1:
            _fail("data.synthetic.count", "must be >= 1")
    else:
        src = _check_type(data["source"], dict, "data.source")
        if "path" not in src:
            _fail("data.source", "missing 'path'")
        src.setdefault("resample_to", None)
        src.setdefault("edge", 64)
        src.setdefault("stride", 12)
        src.setdefault("rotations", 2)
        if src["rotations"] not in (0, 2):
            _fail("data.source.rotations", "must be 0 (none) or 2 (90 and 180 deg)")
    data.setdefault("select_anisotropic", None)
    data.setdefault("rotations", 0)
    if data["rotations"] not in (0, 2):
        _fail("data.rotations", "must be 0 (none) or 2 (90 and 180 deg)")

    schema = _check_type(cfg["schema"], dict, "schema")
    schema.setdefault("rock_types", 0)
    schema.setdefault("porosity", False)
    schema.setdefault("corr_length", "off")
    schema.setdefault("normalize", False)
    _check_type(schema["normalize"], bool, "schema.normalize")
    _check_type(schema["rock_types"], int, "schema.rock_types")
    _check_type(schema["porosity"], bool, "schema.porosity")
    if schema["corr_length"] not in CORR_MODES:
        _fail("schema.corr_length", f"must be one of {CORR_MODES}")
    if data.get("select_anisotropic") and schema["corr_length"] != "anisotropic":
        _fail("data.select_anisotropic", "requires schema.corr_length = anisotropic")

    train = _check_type(cfg["train"], dict, "train")
    train.setdefault("preset", "desk")
    if train["preset"] not in PRESETS:
        _fail("train.preset", f"must be one of {PRESETS}")
    for opt in ("widths", "iterations"):
        if opt in train and train[opt] is not None:
            seq = _check_type(train[opt], (list, tuple), f"train.{opt}")
            if not all(isinstance(x, int) and x > 0 for x in seq):
                _fail(f"train.{opt}", "must be positive integers")
    if "batch_size" in train:
        _check_type(train["batch_size"], int, "train.batch_size")
    train.setdefault("checkpoint_every", 0)
    train.setdefault("eval_every", 0)

    ev = _check_type(cfg["evaluate"], dict, "evaluate")
    ev.setdefault("sizes", [])
    ev.setdefault("cohort", 200)
    ev.setdefault("metrics", ["phi"])
    ev.setdefault("targets", {})
    known_metrics = {"phi", "lambda", "sa", "swd", "perm"}
    bad = set(ev["metrics"]) - known_metrics
    if bad:
        _fail("evaluate.metrics", f"unknown metrics {sorted(bad)}")

    # cross checks: schema fields must be measurable from the data settings
    if has_synth and schema["corr_length"] == "anisotropic":
        if not data["synthetic"]["anisotropic"]:
            _fail("schema.corr_length", "anisotropic schema needs anisotropic synthetic data")
    return cfg


def load_config(path: str) -> dict:
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    if raw is None:
        raw = {}
    return validate_config(raw)


def save_config(cfg: dict, path: str) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(cfg, fh, sort_keys=True)


# ---------------------------------------------------------------------------
# canned experiment templates (desk-scale synthetic stand-ins for the three
# conditioning studies; training sizes are config-overridable)

TEMPLATES = {
    # five one-hot categories: generator input channels = 1 + 5 = 6
    "type-conditioning": {
        "name": "type-conditioning",
        "data": {
            "synthetic": {
                "count": 1000,
                "edge": 32,
                "porosity": [0.2, 0.3],
                "types": [
                    {"name": "berea", "corr_length": 2.4},
                    {"name": "doddington", "corr_length": 4.0},
                    {"name": "estaillade", "corr_length": 5.0},
                    {"name": "ketton", "corr_length": 7.0},
                    {"name": "sandy", "corr_length": 3.5},
                ],
            }
        },
        "schema": {"rock_types": 5, "porosity": False, "corr_length": "off"},
        "train": {"preset": "desk"},
        "evaluate": {"sizes": [32], "cohort": 200, "metrics": ["phi", "swd"]},
    },
    "porosity-conditioning": {
        "name": "porosity-conditioning",
        "data": {
            "synthetic": {
                "count": 1000,
                "edge": 32,
                "porosity": [0.15, 0.35],
                "corr_length": 3.0,
            }
        },
        "schema": {"rock_types": 0, "porosity": True, "corr_length": "off"},
        "train": {"preset": "desk"},
        "evaluate": {
            "sizes": [32],
            "cohort": 200,
            "metrics": ["phi"],
            "targets": {"phi": [0.10, 0.15, 0.20, 0.25, 0.30]},
        },
    },
    "correlation-conditioning": {
        "name": "correlation-conditioning",
        "data": {
            "synthetic": {
                "count": 1000,
                "edge": 32,
                "porosity": [0.24, 0.26],
                "corr_length": [2.0, 6.0],
            }
        },
        "schema": {"rock_types": 0, "porosity": False, "corr_length": "isotropic"},
        "train": {"preset": "desk"},
        "evaluate": {
            "sizes": [32],
            "cohort": 200,
            "metrics": ["lambda"],
            "targets": {"lam": [2.4, 3.5, 7.0]},
        },
    },
    # anisotropic sweep: vary lam_x over five steps at fixed lam_y, lam_z
    "anisotropic-lambda": {
        "name": "anisotropic-lambda",
        "data": {
            "synthetic": {
                "count": 4096,
                "edge": 32,
                "porosity": [0.24, 0.26],
                "corr_length": [2.0, 6.0],
                "anisotropic": True,
            },
            "select_anisotropic": 2500,
            "rotations": 2,
        },
        "schema": {"rock_types": 0, "porosity": False, "corr_length": "anisotropic"},
        "train": {"preset": "desk"},
        "evaluate": {
            "sizes": [32],
            "cohort": 200,
            "metrics": ["lambda"],
            "targets": {
                "lam_x": [3.50, 4.13, 4.75, 5.38, 6.00],
                "lam_y": [3.5],
                "lam_z": [3.8],
            },
        },
    },
}


def template(name: str) -> dict:
    if name not in TEMPLATES:
        raise ConfigError(
            f"unknown template {name!r}; available: {sorted(TEMPLATES)}"
        )
    return validate_config(copy.deepcopy(TEMPLATES[name]))
