"""Run configuration (strict JSON: unknown keys are rejected)."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .errors import InvalidConfig, IoError
from .losses import LossWeights
from .network import ModelConfig

CONFIG_VERSION = 1


def _strict(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise InvalidConfig(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise InvalidConfig(f"unknown keys in {where}: {sorted(unknown)}")
    return cls(**d)


@dataclass(frozen=True)
class StageConfig:
    iterations: int = 500
    batch_size: int = 16
    lr: float = 1.0
    decay_rate: float = 0.1
    lr_discrepancy_factor: float = 100.0
    mix_ratio_2d: float = 0.3

    def validate(self, where: str) -> None:
        if self.iterations < 0:
            raise InvalidConfig(f"{where}.iterations must be non-negative")
        if self.batch_size < 1:
            raise InvalidConfig(f"{where}.batch_size must be at least 1")
        if self.lr <= 0:
            raise InvalidConfig(f"{where}.lr must be positive")
        if not 0 < self.decay_rate <= 1:
            raise InvalidConfig(f"{where}.decay_rate must lie in (0, 1]")
        if self.lr_discrepancy_factor < 1:
            raise InvalidConfig(f"{where}.lr_discrepancy_factor must be >= 1")
        if not 0 <= self.mix_ratio_2d <= 1:
            raise InvalidConfig(f"{where}.mix_ratio_2d must lie in [0, 1]")

    def lr_at(self, t: int) -> float:
        if self.iterations == 0:
            return self.lr
        return self.lr * self.decay_rate ** (t / self.iterations)


@dataclass(frozen=True)
class OptimizerConfig:
    rho: float = 0.9
    eps: float = 1e-6

    def validate(self) -> None:
        if not 0 <= self.rho < 1:
            raise InvalidConfig("optimizer.rho must lie in [0, 1)")
        if self.eps <= 0:
            raise InvalidConfig("optimizer.eps must be positive")


@dataclass(frozen=True)
class DataConfig:
    full3d: str = "data/train.pld"
    only2d: str = "data/train.pld"
    eval: str = "data/heldout.pld"


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    stage1: StageConfig = field(default_factory=lambda: StageConfig(iterations=500, mix_ratio_2d=0.0))
    stage2: StageConfig = field(default_factory=lambda: StageConfig(iterations=2500))
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 42
    checkpoint_every: int = 0
    version: int = CONFIG_VERSION

    def validate(self) -> RunConfig:
        if self.version != CONFIG_VERSION:
            raise InvalidConfig(f"unsupported config version {self.version}")
        self.model.validate()
        self.stage1.validate("stage1")
        self.stage2.validate("stage2")
        self.optimizer.validate()
        if self.checkpoint_every < 0:
            raise InvalidConfig("checkpoint_every must be non-negative")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["model"] = self.model.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        if not isinstance(d, dict):
            raise InvalidConfig("run config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise InvalidConfig(f"unknown keys in run config: {sorted(unknown)}")
        kw = dict(d)
        try:
            if "model" in kw:
                kw["model"] = ModelConfig.from_dict(kw["model"])
            if "weights" in kw:
                kw["weights"] = LossWeights.from_dict(kw["weights"])
            for key, sub in (("stage1", StageConfig), ("stage2", StageConfig),
                             ("optimizer", OptimizerConfig), ("data", DataConfig)):
                if key in kw:
                    kw[key] = _strict(sub, kw[key], key)
            return cls(**kw).validate()
        except TypeError as e:
            raise InvalidConfig(str(e)) from e

    def with_overrides(self, **changes) -> RunConfig:
        return replace(self, **changes)


def load_json(path) -> dict:
    try:
        with open(path) as f:
            return json.load(f)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidConfig(f"{path} is not valid JSON: {e}") from e


def load_run_config(path) -> RunConfig:
    return RunConfig.from_dict(load_json(path))


def resolve(base, p: str) -> Path:
    """Resolve a data path relative to the config file's directory."""
    q = Path(p)
    return q if q.is_absolute() or base is None else Path(base).parent / q
