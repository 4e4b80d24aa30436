"""Strictly validated JSON application config.

Unknown keys are rejected; every value is validated against its module's
invariants at load time. CLI flags override config values.
"""

import json
from dataclasses import dataclass, field

from .degradation import DegradationRanges
from .errors import InvalidArgumentError
from .inference import SamplerConfig
from .refpool import IdentityGateConfig
from .training import TrainingConfig


@dataclass
class PoolConfig:
    c1: int = 8
    c2: int = 4
    delta: float = 0.5
    max_attempts: int = 3

    def validate(self):
        if self.c1 < 1 or self.c2 < 1:
            raise InvalidArgumentError("c1 and c2 must be >= 1")
        IdentityGateConfig(self.delta, self.max_attempts).validate()

    def gate(self):
        return IdentityGateConfig(delta=self.delta,
                                  max_attempts=self.max_attempts)


@dataclass
class EncoderConfig:
    embedder: str = "pixel"
    recognizer: str = "pixel"
    dim: int = 64
    crop_side: int = 112

    def validate(self):
        from .identity import EMBEDDER_REGISTRY, RECOGNIZER_REGISTRY
        if self.embedder not in EMBEDDER_REGISTRY:
            raise InvalidArgumentError(f"unknown embedder: {self.embedder!r}")
        if self.recognizer not in RECOGNIZER_REGISTRY:
            raise InvalidArgumentError(f"unknown recognizer: {self.recognizer!r}")
        if self.dim < 1 or self.crop_side < 8:
            raise InvalidArgumentError("bad encoder dim/crop_side")


@dataclass
class MetricsConfig:
    ssim_window: int = 11
    ssim_sigma: float = 1.5
    landmark_points: int = 5

    def validate(self):
        if self.ssim_window < 3 or self.ssim_window % 2 == 0:
            raise InvalidArgumentError("ssim_window must be odd and >= 3")
        if self.landmark_points < 1:
            raise InvalidArgumentError("landmark_points must be >= 1")


@dataclass
class ModelConfig:
    channels: int = 32
    latent_scale: int = 4
    timesteps: int = 1000

    def validate(self):
        if self.channels < 4 or self.latent_scale < 1 or self.timesteps < 1:
            raise InvalidArgumentError("bad model config")


@dataclass
class AppConfig:
    degradation: DegradationRanges = field(default_factory=DegradationRanges)
    pool: PoolConfig = field(default_factory=PoolConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)

    def validate(self):
        self.degradation.validate()
        self.pool.validate()
        self.encoder.validate()
        self.model.validate()
        self.training.validate()
        self.metrics.validate()
        return self

    def to_json(self):
        def section(obj):
            return {k: list(v) if isinstance(v, tuple) else v
                    for k, v in vars(obj).items()}
        return {name: section(getattr(self, name)) for name in (
            "degradation", "pool", "encoder", "model", "training",
            "sampler", "metrics")}


_SECTION_TYPES = {
    "degradation": DegradationRanges,
    "pool": PoolConfig,
    "encoder": EncoderConfig,
    "model": ModelConfig,
    "training": TrainingConfig,
    "sampler": SamplerConfig,
    "metrics": MetricsConfig,
}


def _build_section(name, cls, values):
    allowed = set(cls.__dataclass_fields__)
    unknown = set(values) - allowed
    if unknown:
        raise InvalidArgumentError(
            f"unknown keys in config section {name!r}: {sorted(unknown)}")
    coerced = {k: tuple(v) if isinstance(v, list) else v
               for k, v in values.items()}
    return cls(**coerced)


def config_from_dict(obj):
    unknown = set(obj) - set(_SECTION_TYPES)
    if unknown:
        raise InvalidArgumentError(
            f"unknown config sections: {sorted(unknown)}")
    sections = {name: _build_section(name, cls, obj.get(name, {}))
                for name, cls in _SECTION_TYPES.items()}
    return AppConfig(**sections).validate()


def load_config(path):
    with open(path) as f:
        obj = json.load(f)
    if not isinstance(obj, dict):
        raise InvalidArgumentError(f"{path}: config must be a JSON object")
    return config_from_dict(obj)
