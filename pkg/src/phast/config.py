"""Experiment configuration: JSON file + command-line overrides, validated before any compute."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields

from .envs import DESK_SIZES, ENV_NAMES
from .errors import ConfigError
from .factory import ModelConfig
from .hamiltonian import KNOWN, PARTIAL, UNKNOWN
from .training import LossWeights, TrainConfig

__all__ = ["DataConfig", "EvalConfig", "ControlConfig", "ExperimentConfig", "from_dict", "to_dict"]


@dataclass(frozen=True)
class DataConfig:
    seed: int = 42
    sizes: dict = field(default_factory=lambda: dict(DESK_SIZES))
    T: int | None = None


@dataclass(frozen=True)
class EvalConfig:
    K: int = 10
    horizons: tuple = (10, 50, 100)
    takeover: bool = True


@dataclass(frozen=True)
class ControlConfig:
    plant: str = "pendulum_cons"
    k_c: float = 10.0
    d_inj: float = 2.0
    k_xi: float = 5.0
    q_star: float = 0.0
    dt: float = 0.01
    T_ctl: float = 10.0
    success_tol: float = 0.05
    sigmas: tuple = (0.0, 0.01)
    methods: tuple = ("oracle", "fd", "map", "observer")
    regimes: tuple = ("near_stable", "small", "moderate", "large", "inverted")
    trials_per_regime: int = 20
    map_window: int = 10
    sigma_a: float = 10.0
    observer_noise: object = "matched"  # "matched", a float, or ["uniform", low, high]
    checkpoint: str | None = None  # learned model for the model_based method


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "pendulum_windy"
    regime: str = KNOWN
    seeds: tuple = (0,)
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=lambda: TrainConfig(epochs=20))
    weights: LossWeights = field(default_factory=LossWeights)
    eval: EvalConfig = field(default_factory=EvalConfig)
    control: ControlConfig = field(default_factory=ControlConfig)

    def validate(self) -> "ExperimentConfig":
        if self.env not in ENV_NAMES:
            raise ConfigError(f"unknown env {self.env!r}")
        if self.regime not in (KNOWN, PARTIAL, UNKNOWN):
            raise ConfigError(f"unknown regime {self.regime!r}")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        for split in self.data.sizes:
            if split not in ("train", "val", "test"):
                raise ConfigError(f"unknown split {split!r}")
        if self.train.epochs < 1 or self.train.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.eval.K < 2:
            raise ConfigError("burn-in K must be at least 2")
        return self


_SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig, "weights": LossWeights,
             "eval": EvalConfig, "control": ControlConfig}
_TUPLES = {"seeds", "horizons", "betas", "sigmas", "methods", "regimes"}


def _build(cls, values: dict, where: str):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where}: {', '.join(unknown)}")
    kwargs = {}
    for k, v in values.items():
        kwargs[k] = tuple(v) if k in _TUPLES and isinstance(v, list) else v
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {where}: {exc}") from exc


def from_dict(d: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Merge a (possibly partial) nested dict onto ``base``; unknown keys are errors."""
    base = base or ExperimentConfig()
    merged = to_dict(base)
    for k, v in d.items():
        if k in _SECTIONS:
            if not isinstance(v, dict):
                raise ConfigError(f"section {k!r} must be an object")
            bad = sorted(set(v) - {f.name for f in fields(_SECTIONS[k])})
            if bad:
                raise ConfigError(f"unknown config key(s) in {k}: {', '.join(bad)}")
            merged[k].update(v)
        elif k in {f.name for f in fields(ExperimentConfig)}:
            merged[k] = v
        else:
            raise ConfigError(f"unknown config key {k!r}")
    top = {k: v for k, v in merged.items() if k not in _SECTIONS}
    sections = {k: _build(cls, merged[k], k) for k, cls in _SECTIONS.items()}
    return _build(ExperimentConfig, {**top, **sections}, "config").validate()


def to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            out[f.name] = to_dict(v)
        elif isinstance(v, tuple):
            out[f.name] = list(v)
        elif isinstance(v, dict):
            out[f.name] = dict(v)
        else:
            out[f.name] = v
    return out
