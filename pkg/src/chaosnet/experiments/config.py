"""Experiment configuration, its JSON schema, run profiles and built-in presets."""

from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field

import jsonschema

from ..models import BUILDERS
from ..training import TrainConfig


class ConfigError(ValueError):
    pass


FAMILIES = sorted(BUILDERS)

AXIS_SCHEMA = {
    "type": "object",
    "required": ["name", "values"],
    "properties": {
        "name": {"type": "string"},
        "values": {"type": "array", "minItems": 1, "items": {"type": "number"}},
    },
    "additionalProperties": False,
}

CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "chaosnet experiment",
    "type": "object",
    "required": ["family"],
    "properties": {
        "family": {"enum": FAMILIES},
        "model": {"type": "object"},
        "axis1": {"anyOf": [AXIS_SCHEMA, {"type": "null"}]},
        "axis2": {"anyOf": [AXIS_SCHEMA, {"type": "null"}]},
        "trials": {"type": "integer", "minimum": 1},
        "train": {
            "type": "object",
            "properties": {
                "lr": {"type": "number", "minimum": 0},
                "momentum": {"type": "number", "minimum": 0, "maximum": 1},
                "batch_size": {"type": "integer", "minimum": 1},
                "epochs": {"type": "integer", "minimum": 1},
                "seed": {"type": "integer"},
                "eval_every": {"type": "integer", "minimum": 1},
                "tol": {"type": "number", "minimum": 0},
                "loss": {"enum": ["ce", "mse"]},
                "frozen": {"type": "array", "items": {"type": "string"}},
            },
            "additionalProperties": False,
        },
        "dataset": {
            "type": "object",
            "required": ["name"],
            "properties": {
                "name": {"enum": ["mnist", "synth2d"]},
                "n_train": {"type": ["integer", "null"], "minimum": 1},
                "n_test": {"type": ["integer", "null"], "minimum": 1},
                "kind": {"enum": ["clusters", "rings", "moons"]},
                "data_dir": {"type": ["string", "null"]},
                "seed": {"type": "integer"},
            },
            "additionalProperties": False,
        },
        "out_dir": {"type": "string"},
        "seed": {"type": "integer"},
        "ftmle_samples": {"type": "integer", "minimum": 0},
        "ftmle_layer": {"type": ["string", "null"]},
        "tol": {"type": "number", "minimum": 0},
        "profile": {"enum": ["desk", "paper"]},
    },
    "additionalProperties": False,
}

PROFILES = {
    # coarse grids, MNIST 10k/2k, 15 epochs, one trial per cell
    "desk": {"n_train": 10000, "n_test": 2000, "epochs": 15, "trials": 1},
    # full MNIST, 60 epochs, five trials
    "paper": {"n_train": None, "n_test": None, "epochs": 60, "trials": 5},
}


@dataclass
class ExperimentConfig:
    family: str
    model: dict = field(default_factory=dict)
    axis1: dict | None = None
    axis2: dict | None = None
    trials: int = 1
    train: dict = field(default_factory=dict)
    dataset: dict = field(default_factory=lambda: {"name": "mnist", "n_train": 10000, "n_test": 2000})
    out_dir: str = "runs/experiment"
    seed: int = 0
    ftmle_samples: int = 200
    ftmle_layer: str | None = None
    tol: float = 5e-4
    profile: str = "desk"

    def __post_init__(self):
        validate(self.to_dict())

    def to_dict(self):
        return copy.deepcopy(asdict(self))

    @classmethod
    def from_dict(cls, d):
        validate(d)
        return cls(**copy.deepcopy(d))

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    def train_config(self):
        return TrainConfig(**{**self.train, "frozen": tuple(self.train.get("frozen", ()))})

    def axes(self):
        a1 = self.axis1 or {"name": "_", "values": [0.0]}
        a2 = self.axis2 or {"name": "_", "values": [0.0]}
        return a1, a2

    def with_profile(self, profile):
        if profile not in PROFILES:
            raise ConfigError(f"unknown profile {profile!r}")
        p = PROFILES[profile]
        d = self.to_dict()
        d["profile"] = profile
        d["trials"] = p["trials"]
        d["train"] = {**d["train"], "epochs": p["epochs"]}
        if d["dataset"]["name"] == "mnist":
            d["dataset"] = {**d["dataset"], "n_train": p["n_train"], "n_test": p["n_test"]}
        return ExperimentConfig.from_dict(d)


def validate(d):
    try:
        jsonschema.validate(d, CONFIG_SCHEMA)
    except jsonschema.ValidationError as err:
        path = "/".join(str(p) for p in err.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {path}: {err.message}") from None


def load_config(path):
    try:
        with open(path) as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return ExperimentConfig.from_dict(d)


def _grid(name, desk, paper):
    return {"desk": {"name": name, "values": desk}, "paper": {"name": name, "values": paper}}


_PRESET_AXES = {
    "ffesn": (
        _grid("rho", [0.3, 0.6, 1.0, 1.4, 1.8], [round(0.1 * k, 1) for k in range(1, 21)]),
        _grid("T", [1, 5, 10, 15, 20], list(range(1, 31))),
        {"n": 500, "density": 0.5},
        {"lr": 5e-3, "momentum": 0.9, "batch_size": 64},
        5e-4,
    ),
    "lorenz": (
        _grid("F", [0.5, 2.0, 5.0], [0.25 * k for k in range(1, 25)]),
        _grid("T", [0.2, 0.4, 0.8], [0.1 * k for k in range(1, 21)]),
        {"n": 500, "dt": 0.01},
        {"lr": 5e-3, "momentum": 0.9, "batch_size": 64},
        5e-5,
    ),
    "csto": (
        _grid("A_cp", [0.1, 10.0, 17.8], [0.1, 1.0, 3.0, 10.0, 17.8, 30.0, 100.0]),
        _grid("T", [0.1, 0.3], [0.05, 0.1, 0.2, 0.3, 0.5]),
        {"n_osc": 50, "dt": 0.005},
        {"lr": 5e-3, "momentum": 0.9, "batch_size": 64},
        5e-4,
    ),
}

PRESETS = sorted(_PRESET_AXES)


def preset(name, profile="desk", out_dir=None, seed=0):
    if name not in _PRESET_AXES:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    a1, a2, model, train, tol = _PRESET_AXES[name]
    model = dict(model)
    if name == "csto" and profile == "paper":
        model.update(n_osc=200, dt=0.001)
    cfg = ExperimentConfig(family=name, model=model, axis1=a1[profile], axis2=a2[profile], train=dict(train),
                           out_dir=out_dir or f"runs/{name}-{profile}", seed=seed, tol=tol)
    return cfg.with_profile(profile)
