"""Experiment configuration: typed schema, INI files, presets, overrides.

A config is a two-level mapping ``section -> key -> value``.  Every key
has a default in :data:`SCHEMA`; files, presets and ``section.key=value``
overrides may only name keys that exist there.  Precedence, lowest first:
schema defaults, preset, config file, command-line overrides.
"""
from __future__ import annotations

import configparser
import copy
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .nets import MlpSpec
from .optim import OptimizerSpec, Schedule
from .priorkern import PriorSpec
from .trainer import Likelihood, Measurement, TrainConfig

KINDS = ("regress1d", "uci", "classify-synth", "bandit", "kernel-check")
METHODS = ("degp", "de", "rde", "rms", "nngp", "uniform", "oracle")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Field:
    default: Any
    kind: str          # str | int | float | bool | ints | floats | strs
    doc: str = ""


def _f(default, kind, doc=""):
    return Field(default, kind, doc)


SCHEMA: dict[str, dict[str, Field]] = {
    "experiment": {
        "kind": _f("regress1d", "str", "one of " + ", ".join(KINDS)),
        "methods": _f(("degp",), "strs", "subset of " + ", ".join(METHODS)),
        "seeds": _f((0,), "ints", "one run per seed"),
    },
    "model": {
        "hidden": _f((64,), "ints", "hidden widths; empty means a linear model"),
        "members": _f(10, "int", "ensemble size M"),
        "shared_trunk": _f(False, "bool", "one trunk and M linear heads"),
    },
    "train": {
        "alpha": _f(1.0, "float", "KL coefficient"),
        "beta": _f(0.0, "float", "weight-penalty coefficient (function-space trainer)"),
        "lambda_fraction": _f(0.05, "float", "jitter as a fraction of the mean eigenvalue"),
        "samples": _f(256, "int", "U, function draws for the expected log-likelihood"),
        "epochs": _f(100, "int", ""),
        "batch_size": _f(256, "int", ""),
        "single_batch_epochs": _f(False, "bool", "an epoch is one mini-batch step"),
        "clip_norm": _f(100.0, "float", "gradient-norm cap; 0 disables"),
        "optimizer": _f("adam", "str", "sgd | adam"),
        "lr": _f(0.01, "float", ""),
        "momentum": _f(0.9, "float", "sgd only"),
        "schedule": _f("constant", "str", "constant | cosine | step"),
        "gamma": _f(0.99, "float", "step-schedule decay factor"),
        "every": _f(5, "int", "step-schedule period in epochs"),
        "milestones": _f((), "ints", "step-schedule epochs (overrides every)"),
        "weight_decay": _f(0.1, "float", "rDE decay and RMS anchor strength"),
    },
    "likelihood": {
        "noise_var": _f(0.1, "float", "Gaussian observation variance"),
        "temperature": _f(1.0, "float", "initial softmax temperature"),
        "train_temperature": _f(True, "bool", ""),
        "temperature_lr": _f(1e-3, "float", ""),
    },
    "measurement": {
        "points": _f(0, "int", "extra uniform points per step"),
        "low": _f((), "floats", "box lower corner; empty means the data minimum"),
        "high": _f((), "floats", "box upper corner; empty means the data maximum"),
    },
    "prior": {
        "hidden": _f((64,), "ints", "feature projector widths"),
        "weight_var": _f(2.0, "float", "readout weight variance"),
        "bias_var": _f(0.01, "float", "readout bias variance"),
        "layer_weight_var": _f(2.0, "float", "projector weight variance times fan_in"),
        "layer_bias_var": _f(0.01, "float", "projector bias variance"),
        "samples": _f(10, "int", "S, frozen projector draws"),
    },
    "data": {
        "path": _f("", "str", "CSV file (uci, bandit mushroom)"),
        "names": _f(("diabetes", "statecrime"), "strs", "bundled uci sets used when path is empty"),
        "noise_vars": _f((), "floats", "uci noise variance per entry of names; empty means likelihood.noise_var"),
        "n": _f(8, "int", "regress1d points / classify-synth training size"),
        "noise_var": _f(0.1, "float", "regress1d generator noise"),
        "low": _f(-1.5, "float", "regress1d input range"),
        "high": _f(1.5, "float", ""),
        "outlier_shift": _f(-1.2, "float", "added to the rightmost regress1d target"),
        "folds": _f(5, "int", "uci cross-validation folds"),
        "classes": _f(3, "int", "classify-synth classes"),
        "n_test": _f(600, "int", "classify-synth in-distribution test size"),
        "n_ood": _f(200, "int", "classify-synth out-of-distribution points"),
    },
    "eval": {
        "samples": _f(1000, "int", "q-draws for the function-space predictive"),
        "grid_points": _f(201, "int", "regress1d grid size"),
        "grid_low": _f(-2.0, "float", ""),
        "grid_high": _f(2.0, "float", ""),
        "far": _f(1.8, "float", "regress1d |x| threshold for the far region"),
        "nll_margin": _f(0.05, "float", "uci soft-check margin"),
    },
    "bandit": {
        "env": _f("wheel", "str", "wheel | mushroom"),
        "rounds": _f(2000, "int", ""),
        "delta": _f(0.95, "float", "wheel exploration radius"),
        "cadence": _f(50, "int", "rounds between retrains"),
        "reward_scale": _f(10.0, "float", "centered rewards are divided by this"),
        "min_ratio": _f(1.2, "float", "required ratio of function-space agent to uniform"),
    },
    "kernel": {
        "instances": _f(200, "int", "random KL instances"),
        "logdet_instances": _f(100, "int", ""),
        "timing_d": _f(2560, "int", ""),
        "timing_m": _f(10, "int", ""),
        "mc_samples": _f(2000, "int", "S for the MC-vs-analytic kernel check"),
        "pairs": _f(50, "int", ""),
        "seed": _f(0, "int", ""),
    },
}


# Named recipes.  Desk-scale variants shrink widths and epochs only.
PRESETS: dict[str, dict[str, dict[str, Any]]] = {
    "toy1d": {
        "experiment": {"kind": "regress1d", "methods": ("degp", "de", "rde", "rms", "nngp")},
        "model": {"hidden": (), "members": 50},
        "train": {"optimizer": "sgd", "lr": 0.001, "momentum": 0.9, "schedule": "cosine",
                  "epochs": 1000, "batch_size": 8, "lambda_fraction": 1e-4},
        "measurement": {"points": 8, "low": (-2.0,), "high": (2.0,)},
        "likelihood": {"noise_var": 0.1},
    },
    "uci": {
        "experiment": {"kind": "uci", "methods": ("degp", "de")},
        "model": {"hidden": (50,), "members": 10},
        "train": {"optimizer": "adam", "lr": 0.01, "schedule": "step", "gamma": 0.99, "every": 5,
                  "epochs": 100, "batch_size": 256, "samples": 64},
        "measurement": {"points": 16},
        "data": {"noise_vars": (0.5, 0.3)},
    },
    "uci-full": {
        "experiment": {"kind": "uci", "methods": ("degp", "de", "rde", "rms", "nngp")},
        "model": {"hidden": (256, 256), "members": 10},
        "train": {"optimizer": "adam", "lr": 0.01, "schedule": "step", "gamma": 0.99, "every": 5,
                  "epochs": 1000, "batch_size": 256},
        "measurement": {"points": 16},
        "data": {"noise_vars": (0.5, 0.3)},
    },
    "classify": {
        "experiment": {"kind": "classify-synth", "methods": ("degp", "de", "rde", "rms")},
        "model": {"hidden": (64,), "members": 10},
        "train": {"optimizer": "sgd", "lr": 0.1, "momentum": 0.9, "schedule": "cosine", "epochs": 24,
                  "batch_size": 64, "alpha": 0.1, "weight_decay": 0.1, "samples": 64},
        "data": {"n": 600},
    },
    "bandit": {
        "experiment": {"kind": "bandit", "methods": ("degp", "de", "uniform")},
        "model": {"hidden": (64, 64), "members": 10},
        "train": {"optimizer": "adam", "lr": 0.01, "epochs": 50, "batch_size": 256,
                  "single_batch_epochs": True, "samples": 64},
        "likelihood": {"noise_var": 0.1},
    },
    "bandit-full": {
        "experiment": {"kind": "bandit", "methods": ("degp", "de", "rde", "rms", "uniform")},
        "model": {"hidden": (256, 256), "members": 10},
        "train": {"optimizer": "adam", "lr": 0.01, "epochs": 100, "batch_size": 512,
                  "single_batch_epochs": True},
        "likelihood": {"noise_var": 0.1},
    },
    "kernel-check": {
        "experiment": {"kind": "kernel-check", "methods": ()},
    },
}
for _h, _name in (((64,), "toy1d-h1"), ((128, 128), "toy1d-h2"), ((256, 256, 256), "toy1d-h3")):
    PRESETS[_name] = copy.deepcopy(PRESETS["toy1d"])
    PRESETS[_name]["model"]["hidden"] = _h


def _parse(text: str, field: Field, where: str):
    text = text.strip()
    try:
        if field.kind == "str":
            return text
        if field.kind == "int":
            return int(text)
        if field.kind == "float":
            return float(text)
        if field.kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        items = [t.strip() for t in text.split(",") if t.strip()]
        conv = {"ints": int, "floats": float, "strs": str}[field.kind]
        return tuple(conv(t) for t in items)
    except ValueError:
        raise ConfigError(f"{where}: cannot read {text!r} as {field.kind}") from None


def _coerce(value, field: Field, where: str):
    if isinstance(value, str) and field.kind != "str":
        return _parse(value, field, where)
    if field.kind == "str":
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected text, got {value!r}")
        return value
    conv = {"int": int, "float": float, "bool": bool, "ints": int, "floats": float, "strs": str}[field.kind]
    try:
        if field.kind in ("ints", "floats", "strs"):
            return tuple(conv(v) for v in value)
        if field.kind == "bool" and not isinstance(value, bool):
            raise TypeError
        return conv(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: {value!r} is not a valid {field.kind}") from None


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value).lower() if isinstance(value, bool) else str(value)


class ExperimentConfig:
    """Resolved configuration with every key present."""

    def __init__(self, values: dict[str, dict[str, Any]] | None = None):
        self.values = {s: {k: f.default for k, f in keys.items()} for s, keys in SCHEMA.items()}
        if values:
            self.update(values, "values")

    def update(self, values: dict, where: str) -> "ExperimentConfig":
        for section, keys in values.items():
            if section not in SCHEMA:
                raise ConfigError(f"{where}: unknown section [{section}]")
            for key, v in keys.items():
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{where}: unknown key {section}.{key}")
                self.values[section][key] = _coerce(v, SCHEMA[section][key], f"{where}: {section}.{key}")
        return self

    def __getitem__(self, section: str) -> dict[str, Any]:
        return self.values[section]

    def copy(self) -> "ExperimentConfig":
        return ExperimentConfig(copy.deepcopy(self.values))

    def validate(self) -> "ExperimentConfig":
        e = self["experiment"]
        if e["kind"] not in KINDS:
            raise ConfigError(f"unknown experiment kind {e['kind']!r}")
        bad = [m for m in e["methods"] if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}")
        if not e["seeds"]:
            raise ConfigError("at least one seed is required")
        if self["model"]["members"] < 1:
            raise ConfigError("model.members must be >= 1")
        self.train_config(1)  # surfaces optimizer/likelihood errors early
        return self

    # -- conversion to library objects ------------------------------------

    def mlp_spec(self, input_dim: int, output_dim: int) -> MlpSpec:
        return MlpSpec(input_dim, tuple(self["model"]["hidden"]), output_dim)

    def prior_spec(self, input_dim: int, seed: int) -> PriorSpec:
        p = self["prior"]
        return PriorSpec(input_dim, tuple(p["hidden"]), p["weight_var"], p["bias_var"], p["layer_weight_var"],
                         p["layer_bias_var"], p["samples"], seed)

    def train_config(self, seed: int, kind: str = "gaussian", low=None, high=None) -> TrainConfig:
        t, lk, ms = self["train"], self["likelihood"], self["measurement"]
        sched = Schedule(t["schedule"], t["gamma"], t["every"], tuple(t["milestones"]))
        opt = OptimizerSpec(t["optimizer"], t["lr"], t["momentum"], schedule=sched)
        lik = Likelihood(kind, lk["noise_var"], lk["temperature"], lk["train_temperature"], lk["temperature_lr"])
        low = tuple(ms["low"]) if ms["low"] else tuple(low if low is not None else (-1.0,))
        high = tuple(ms["high"]) if ms["high"] else tuple(high if high is not None else (1.0,))
        return TrainConfig(alpha=t["alpha"], beta=t["beta"], lambda_fraction=t["lambda_fraction"],
                           samples=t["samples"], measurement=Measurement(low, high, ms["points"]),
                           likelihood=lik, optimizer=opt, epochs=t["epochs"], batch_size=t["batch_size"],
                           seed=seed, clip_norm=t["clip_norm"] or None,
                           single_batch_epochs=t["single_batch_epochs"])

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {s: {k: list(v) if isinstance(v, tuple) else v for k, v in keys.items()}
                for s, keys in self.values.items()}

    def to_ini(self) -> str:
        lines = []
        for section, keys in self.values.items():
            lines.append(f"[{section}]")
            lines += [f"{k} = {_format(v)}" for k, v in keys.items()]
            lines.append("")
        return "\n".join(lines)


def read_ini(path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser.read(path)
    return {s: dict(parser[s]) for s in parser.sections()}


def parse_overrides(items) -> dict[str, dict[str, str]]:
    out: dict[str, dict[str, str]] = {}
    for item in items or ():
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError(f"override must look like section.key=value, got {item!r}")
        lhs, value = item.split("=", 1)
        section, key = lhs.strip().split(".", 1)
        out.setdefault(section, {})[key] = value
    return out


def resolve(preset: str | None = None, path=None, overrides: dict | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if preset:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r}; known: {', '.join(sorted(PRESETS))}")
        cfg.update(PRESETS[preset], f"preset {preset}")
    if path:
        cfg.update(read_ini(path), str(path))
    if overrides:
        cfg.update(overrides, "override")
    return cfg


def describe_schema() -> str:
    """Every key with its default, for ``--help``-style listings."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for k, f in keys.items():
            doc = f"  # {f.doc}" if f.doc else ""
            lines.append(f"{k} = {_format(f.default)}{doc}")
        lines.append("")
    return "\n".join(lines)
