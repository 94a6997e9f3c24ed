"""Experiment configuration (JSON) with defaults matching the AR(1) benchmark."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from ..datagen import ModelSpec
from ..exceptions import ConfigError


@dataclass
class PopEmConfig:
    n_samples: int = 5000
    T: int = 20
    e_step: str = "stable"


@dataclass
class InitPolicy:
    """Starting point of the online estimators.

    ``theta1``/``theta2`` seed the general-model estimator, ``beta0`` the
    symmetric one (defaults to all-ones).  ``P0 = P0_scale * I``.
    """

    theta1: list = field(default_factory=lambda: [15.0, 20.0, 100.0])
    theta2: list = field(default_factory=lambda: [-42.0, -35.0, -30.0])
    beta0: list | None = None
    P0_scale: float = 1.0


@dataclass
class OdeConfig:
    samples: int = 200_000
    horizon: float = 50.0
    step: float = 1e-2
    beta0: list | None = None
    R0_scale: float = 1.0
    trace_every: int = 10


@dataclass
class ExperimentConfig:
    model: ModelSpec = field(default_factory=ModelSpec.ar1_benchmark)
    horizon: int = 100_000
    replications: int = 500
    seed: int = 0
    kappa_grid: list = field(default_factory=lambda: [0.0, 5.0, 10.0, 15.0, 20.0])
    pop_em: PopEmConfig = field(default_factory=PopEmConfig)
    init: InitPolicy = field(default_factory=InitPolicy)
    ode: OdeConfig = field(default_factory=OdeConfig)
    output_dir: str = "out"
    whiten: bool = False
    tolerance: float = 0.05
    trace_every: int = 100
    chunk: int = 5000
    batch_size: int = 100
    eval_points: int = 100_000
    mc_samples: int = 1_000_000
    residual_from: str = "pre"

    def __post_init__(self):
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if self.replications < 1:
            raise ConfigError("replications must be at least 1")
        if any(k < 0 for k in self.kappa_grid):
            raise ConfigError("kappa values must be non-negative")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        if self.pop_em.T < 1 or self.pop_em.n_samples < 1:
            raise ConfigError("pop_em needs T >= 1 and n_samples >= 1")
        if self.trace_every < 1 or self.chunk < 1 or self.batch_size < 1:
            raise ConfigError("trace_every, chunk and batch_size must be positive")

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def P0(self) -> np.ndarray:
        return self.init.P0_scale * np.eye(self.model.d)

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "model"}
        out["model"] = self.model.to_dict()
        return out

    @classmethod
    def from_dict(cls, cfg: dict) -> ExperimentConfig:
        cfg = dict(cfg)
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "model" in cfg:
            cfg["model"] = ModelSpec.from_dict(cfg["model"])
        for key, sub in (("pop_em", PopEmConfig), ("init", InitPolicy), ("ode", OdeConfig)):
            if key in cfg:
                cfg[key] = sub(**cfg[key])
        return cls(**cfg)

    @classmethod
    def load(cls, path) -> ExperimentConfig:
        with open(path) as fh:
            return cls.from_dict(json.load(fh))
