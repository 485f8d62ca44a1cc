"""Experiment configuration: nested dataclasses, strict YAML parsing, canonical echo.

Unknown keys are rejected at every nesting level with the list of valid keys,
since a silently ignored typo would corrupt an experiment.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .data import Augmentation, GaussianMixtureSpec, make_grid, make_ring
from .losses import LossWeights, ObjectiveSwitches


class ConfigError(ValueError):
    """Invalid or unparseable experiment configuration."""


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "ring"
    k: int = 8
    radius: float = 2.0
    rows: int = 5
    cols: int = 5
    spacing: float = 2.0
    sigma: float = 0.02

    def __post_init__(self):
        if self.kind not in ("ring", "grid"):
            raise ValueError(f"dataset.kind must be ring or grid, got {self.kind!r}")
        if not self.sigma > 0:
            raise ValueError(f"dataset.sigma must be positive, got {self.sigma}")

    def build(self) -> GaussianMixtureSpec:
        if self.kind == "ring":
            return make_ring(self.k, self.radius, self.sigma)
        return make_grid(self.rows, self.cols, self.spacing, self.sigma)


@dataclass(frozen=True)
class ModelConfig:
    z_dim: int = 8
    m: int = 8
    gen_hidden: tuple[int, ...] = (128, 128)
    disc_hidden: tuple[int, ...] = (128, 128)
    hidden_activation: str = "relu"

    def __post_init__(self):
        object.__setattr__(self, "gen_hidden", tuple(self.gen_hidden))
        object.__setattr__(self, "disc_hidden", tuple(self.disc_hidden))
        if self.z_dim < 1 or self.m < 1:
            raise ValueError("model.z_dim and model.m must be >= 1")
        if any(w < 1 for w in self.gen_hidden + self.disc_hidden):
            raise ValueError("hidden widths must be positive")
        if self.hidden_activation not in ("relu", "tanh"):
            raise ValueError(f"model.hidden_activation must be relu or tanh, got {self.hidden_activation!r}")


@dataclass(frozen=True)
class BufferConfig:
    capacity: int = 1024
    source: str = "generated"
    push_on: str = "generator"
    min_entries: int | None = None  # None: wait for one batch_size worth of codes

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError(f"buffer.capacity must be >= 1, got {self.capacity}")
        if self.source not in ("generated", "real", "both"):
            raise ValueError(f"buffer.source must be generated, real or both, got {self.source!r}")
        if self.push_on not in ("generator", "discriminator"):
            raise ValueError(f"buffer.push_on must be generator or discriminator, got {self.push_on!r}")


@dataclass(frozen=True)
class OptimizerConfig:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0 or not self.eps > 0:
            raise ValueError("optimizer.lr and optimizer.eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("optimizer betas must lie in [0, 1)")


@dataclass(frozen=True)
class MetricsConfig:
    eval_samples: int = 10_000
    radius_mult: float = 3.0
    min_count: int = 20
    i_variance_squared_inside: bool = False
    feature_map: str = "identity"

    def __post_init__(self):
        if self.eval_samples < 10:
            raise ValueError("metrics.eval_samples must be >= 10")
        if self.feature_map not in ("identity", "random"):
            raise ValueError(f"metrics.feature_map must be identity or random, got {self.feature_map!r}")


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    switches: ObjectiveSwitches = field(default_factory=ObjectiveSwitches)
    augmentation: Augmentation = field(default_factory=Augmentation)
    buffer: BufferConfig = field(default_factory=BufferConfig)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    gp_center: float = 1.0
    n_critic: int = 5
    batch_size: int = 64
    total_steps: int = 20_000
    eval_every: int = 500

    def __post_init__(self):
        if self.n_critic < 1:
            raise ValueError(f"n_critic must be >= 1, got {self.n_critic}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.total_steps < 0:
            raise ValueError(f"total_steps must be >= 0, got {self.total_steps}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.gp_center not in (0.0, 1.0):
            raise ValueError(f"gp_center must be 0 or 1, got {self.gp_center}")

    @property
    def buffer_min_entries(self) -> int:
        return self.batch_size if self.buffer.min_entries is None else self.buffer.min_entries


# -- (de)serialization ------------------------------------------------------------------


def _coerce(tp, value, path: str):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{path}: expected a mapping, got {type(value).__name__}")
        return from_dict(tp, value, path)
    if origin is typing.Union or str(origin) == "types.UnionType":
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if value is None else _coerce(args[0], value, path)
    if origin is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{path}: expected a list, got {value!r}")
        inner = typing.get_args(tp)[0]
        return tuple(_coerce(inner, v, f"{path}[{i}]") for i, v in enumerate(value))
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    return value


def from_dict(cls, data: dict, path: str = ""):
    """Build dataclass ``cls`` from ``data``, rejecting unknown keys."""
    hints = typing.get_type_hints(cls)
    names = [f.name for f in dataclasses.fields(cls)]
    for key in data:
        if key not in names:
            where = f" in {path}" if path else ""
            raise ConfigError(f"unknown key {key!r}{where}; valid keys: {', '.join(names)}")
    kwargs = {k: _coerce(hints[k], v, f"{path}.{k}" if path else k) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from None


def to_dict(obj) -> dict:
    out = {}
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        elif isinstance(v, (np.floating, np.integer)):
            v = v.item()
        out[f.name] = v
    return out


def merge(base: dict, overrides: dict) -> dict:
    """Recursive dict update; nested mappings merge, everything else replaces."""
    out = dict(base)
    for k, v in overrides.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = v
    return out


def parse_config(data: dict | None) -> TrainConfig:
    return from_dict(TrainConfig, data or {})


def load_config(path, overrides: dict | None = None) -> TrainConfig:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"config file not found: {path}") from None
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return parse_config(merge(data, overrides or {}))


def canonical_text(config: TrainConfig) -> str:
    """Deterministic YAML echo of a config; parsing it returns an equal config."""
    return yaml.safe_dump(to_dict(config), sort_keys=True, default_flow_style=False)
