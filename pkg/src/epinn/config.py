"""Run configuration: nested defaults, YAML/JSON files and dotted overrides."""
from __future__ import annotations

import copy
import os
from pathlib import Path

import yaml

from .fields import InductorLayout, MagneticGridSpec, MaterialMap
from .geometry import PlateDomain
from .neural import MlpSpec, OutputTransform

CONFIG_ENV = "EPINN_CONFIG"


class ConfigError(ValueError):
    pass


DEFAULTS: dict = {
    "output_dir": "runs",
    "seed": 0,
    "threads": 1,
    "domain": {"half_width": 0.120, "thickness": 0.014},
    "materials": {"rho_graphite": 7.76e-6, "rho_copper": 2e-8, "mu_r": 1.0, "conductivity": 60.0},
    "thermal": {"h": 50.0, "T0": 50.0, "nx": 241, "ny": 29},
    "excitation": {"frequency": 4250.0, "current_rms": 488.0},
    "inductor": {"centers": [0.030, 0.060, 0.090, 0.120], "width": 0.010, "height": 0.010},
    "magnetic_grid": {"box": [-0.72, 0.72, -0.36, 0.72], "dx": 0.0025, "dy": 0.001, "growth": 1.2},
    "transform": {"a": 900.0, "b": 300.0},
    "design": {"T_goal": 1130.0, "tol": 10.0, "T_max": 1140.0, "n_points": 200, "bounds": [5.0, 15.0]},
    "dataset": {"levels": 6, "n_test": 30},
    "mnn": {"layers": [6, 128, 128, 128, 1], "activation": "cubic-relu", "epochs": 40, "batch_size": 1024, "lr": 2e-3,
            "lr_final": 2e-5},
    "tepinn": {
        "layers": [2, 64, 64, 1],
        "activation": "tanh",
        "mesh": [100, 100],
        "epochs": 5000,
        "lr": 1e-3,
        "eta2": 1000.0,
        "checkpoint_every": 100,
        "xi": [14.8, 15.0, 15.0, 15.0],
    },
    "thnn": {
        "target_layers": [2, 24, 24, 1],
        "hidden": [128, 128],
        "n_xi": 8,
        "epochs": 10000,
        "lr": 3e-3,
        "lr_final": 1e-4,
        "scale": 0.1,
        "mesh": [20, 20],
        "n_validation": 10,
    },
    "snn": {"n_train": 400, "hidden": [64, 64], "epochs": 2000, "lr": 1e-3},
    "optimizer": {
        "de": {"pop": 50, "generations": 50, "F": 0.8, "CR": 0.9},
        "nsga2": {"pop": 50, "generations": 100},
        "gradient": {"tau": 0.1, "max_calls": 200, "start": [10.0, 10.0, 10.0, 10.0]},
        "random_cloud": 2500,
    },
}


def deep_merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def _check_keys(cfg: dict, ref: dict, prefix: str = ""):
    for k, v in cfg.items():
        if k not in ref:
            raise ConfigError(f"unknown config key {prefix}{k}")
        if isinstance(ref[k], dict):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {prefix}{k} must be a section")
            _check_keys(v, ref[k], f"{prefix}{k}.")


def parse_override(text: str) -> dict:
    """``a.b.c=value`` into a nested dict; the value is parsed as YAML."""
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not of the form key=value")
    key, raw = text.split("=", 1)
    value = yaml.safe_load(raw)
    out: dict = {}
    cur = out
    parts = key.strip().split(".")
    for p in parts[:-1]:
        cur = cur.setdefault(p, {})
    cur[parts[-1]] = value
    return out


def load_config(path=None, overrides=()) -> dict:
    """Defaults, then the file (argument or ``$EPINN_CONFIG``), then overrides."""
    cfg = copy.deepcopy(DEFAULTS)
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file {p} not found")
        try:
            data = yaml.safe_load(p.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse {p}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{p} must hold a mapping")
        _check_keys(data, DEFAULTS)
        cfg = deep_merge(cfg, data)
    for o in overrides:
        ov = parse_override(o)
        _check_keys(ov, DEFAULTS)
        cfg = deep_merge(cfg, ov)
    validate(cfg)
    return cfg


def validate(cfg: dict):
    try:
        domain(cfg)
        materials(cfg)
        layout(cfg)
        transform(cfg)
        lo, hi = cfg["design"]["bounds"]
        if not lo < hi:
            raise ConfigError("design bounds must satisfy lower < upper")
        if cfg["thermal"]["h"] < 0:
            raise ConfigError("thermal.h must be non-negative")
        MlpSpec(tuple(cfg["mnn"]["layers"]), cfg["mnn"]["activation"])
        MlpSpec(tuple(cfg["tepinn"]["layers"]), cfg["tepinn"]["activation"])
    except (TypeError, ValueError, KeyError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def dump_config(cfg: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg, sort_keys=True))
    return path


# typed views


def domain(cfg) -> PlateDomain:
    d = cfg["domain"]
    return PlateDomain(float(d["half_width"]), float(d["thickness"]))


def materials(cfg) -> MaterialMap:
    m = cfg["materials"]
    return MaterialMap(float(m["rho_graphite"]), float(m["rho_copper"]), float(m["mu_r"]), float(m["conductivity"]))


def layout(cfg) -> InductorLayout:
    ind, ex = cfg["inductor"], cfg["excitation"]
    return InductorLayout(tuple(float(c) for c in ind["centers"]), float(ind["width"]), float(ind["height"]),
                          float(ex["current_rms"]), float(ex["frequency"]))


def magnetic_grid(cfg) -> MagneticGridSpec:
    g = cfg["magnetic_grid"]
    return MagneticGridSpec(box=tuple(float(v) for v in g["box"]), dx=float(g["dx"]), dy=float(g["dy"]),
                            growth=float(g["growth"]))


def transform(cfg) -> OutputTransform:
    return OutputTransform(float(cfg["transform"]["a"]), float(cfg["transform"]["b"]))
