"""Experiment configuration: INI file <-> ExperimentConfig, hashing, workspace location."""
from __future__ import annotations

import configparser
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from ..policy import VARIANTS
from ..world import CATEGORIES

EXPERIMENTS = ("bc_vs_dagger", "data_scale", "binocular_ablation", "illumination", "embodiment_swap")
WORKSPACE_ENV = "TOPONAV_WORKSPACE"


class ConfigError(ValueError):
    pass


def workspace_dir(override=None) -> Path:
    p = Path(override or os.environ.get(WORKSPACE_ENV) or Path.cwd() / "toponav_workspace")
    p.mkdir(parents=True, exist_ok=True)
    return p


# INI section of every field; order here is the order written out
_SECTIONS = {
    "experiment": ("experiment", "seeds"),
    "scenes": ("scene_size", "train_scenes_per_category", "categories"),
    "training": ("variant", "encoder_mode", "rounds", "beta", "samples_per_round", "epochs_per_round",
                 "batch_size", "lr", "weight_decay", "max_traj_steps", "budget_fraction", "variants"),
    "evaluation": ("eval_routes", "in_distribution_routes", "max_steps", "success_radius", "node_spacing",
                   "eval_parallel"),
    "perturbation": ("light_levels", "map_light_levels", "swap_v_max", "swap_omega_scale", "swap_category"),
}


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "bc_vs_dagger"
    seeds: tuple = (0, 1, 2)
    scene_size: int = 48
    train_scenes_per_category: int = 80
    categories: tuple = CATEGORIES
    variant: str = "CrossBlock"
    encoder_mode: str = "frozen_robust"
    rounds: int = 10
    beta: float = 0.8
    samples_per_round: int = 8000
    epochs_per_round: int = 2
    batch_size: int = 64
    lr: float = 1e-3
    weight_decay: float = 0.01
    max_traj_steps: int = 150
    budget_fraction: float = 0.1
    variants: tuple = ("CrossBlock", "EarlyConv", "LateConv", "CatBlock", "NoBlock")
    eval_routes: int = 100
    in_distribution_routes: int = 100
    max_steps: int = 500
    success_radius: float = 0.4
    node_spacing: float = 1.5
    eval_parallel: int = 50
    light_levels: tuple = (1.0, 0.6, 0.3, 0.15)
    map_light_levels: tuple = (1.0, 0.15)
    swap_v_max: float = 0.4
    swap_omega_scale: float = 4.0 / 3.0
    swap_category: str = "open_space"

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; expected one of {EXPERIMENTS}")
        if len(self.seeds) < 1:
            raise ConfigError("need at least one seed")
        if self.eval_routes < 1:
            raise ConfigError("need at least one evaluation route")
        bad = [c for c in self.categories if c not in CATEGORIES]
        if bad:
            raise ConfigError(f"unknown scene categories {bad}")
        bad = [v for v in (self.variant, *self.variants) if v not in VARIANTS]
        if bad:
            raise ConfigError(f"unknown policy variants {bad}")
        if not (0.0 < self.beta <= 1.0):
            raise ConfigError("beta must be in (0, 1]")
        if not (0.0 < self.budget_fraction <= 1.0):
            raise ConfigError("budget_fraction must be in (0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:12]

    def with_(self, **kw) -> "ExperimentConfig":
        return replace(self, **kw)

    # ---------------------------------------------------------- INI

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        d = asdict(self)
        for sec, keys in _SECTIONS.items():
            cp[sec] = {k: _fmt(d[k]) for k in keys}
        lines = []
        for sec in cp.sections():
            lines.append(f"[{sec}]")
            lines += [f"{k} = {v}" for k, v in cp[sec].items()]
            lines.append("")
        return "\n".join(lines)

    def save(self, path):
        Path(path).write_text(self.to_ini())

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from e
        types = {f.name: f for f in fields(cls)}
        kw = {}
        for sec in cp.sections():
            if sec not in _SECTIONS:
                raise ConfigError(f"unknown config section [{sec}]")
            for k, v in cp[sec].items():
                if k not in _SECTIONS[sec]:
                    raise ConfigError(f"unknown key {k!r} in section [{sec}]")
                kw[k] = _parse(v, types[k])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_ini(text)


def _fmt(v) -> str:
    if isinstance(v, (tuple, list)):
        return " ".join(_fmt(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _parse(text: str, f):
    default = f.default
    try:
        if isinstance(default, tuple):
            items = text.split()
            kind = type(default[0]) if default else str
            return tuple(kind(x) for x in items)
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        return type(default)(text.strip())
    except ValueError as e:
        raise ConfigError(f"bad value {text!r} for {f.name}: {e}") from e
