"""Run configuration: one nested structure covering every subsystem.

Defaults follow the reference training setup (44.1 kHz / 882 / 220 STFT,
192 hidden dims, upsample (11,5,2,2), FDRL hops (882,441,220,110,55),
loss weights 45/2/1, t_anneal 50k). A stable hash of the configuration is
embedded in caches, checkpoints and reports so artifacts can be matched to
the settings that produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field

import yaml

from .discriminator import DiscriminatorConfig
from .dsp import StftConfig
from .errors import ConfigError
from .losses import FdrlConfig, LossWeights
from .model import ModelConfig
from .perturb import PerturbConfig
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    stft: StftConfig = field(default_factory=StftConfig)
    perturb: PerturbConfig = field(default_factory=PerturbConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    fdrl: FdrlConfig = field(default_factory=FdrlConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    ssl_backend: str = "stub"  # "stub" or a pretrained model name


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)


def config_hash(cfg: RunConfig) -> str:
    blob = json.dumps(to_dict(cfg), sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


_SECTIONS = {
    "stft": StftConfig,
    "perturb": PerturbConfig,
    "model": ModelConfig,
    "discriminator": DiscriminatorConfig,
    "train": TrainConfig,
    "fdrl": FdrlConfig,
    "weights": LossWeights,
}


def _build_section(cls, data: dict, section: str):
    fields = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - fields
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    # YAML gives lists; dataclass defaults use tuples
    coerced = {}
    for key, value in data.items():
        if isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        coerced[key] = value
    try:
        return cls(**coerced)
    except (TypeError, ValueError, ConfigError) as exc:
        raise ConfigError(f"invalid [{section}] config: {exc}") from exc


def from_dict(data: dict) -> RunConfig:
    unknown = set(data) - set(_SECTIONS) - {"ssl_backend"}
    if unknown:
        raise ConfigError(f"unknown top-level config keys: {sorted(unknown)}")
    kwargs = {}
    for section, cls in _SECTIONS.items():
        if section in data:
            if not isinstance(data[section], dict):
                raise ConfigError(f"[{section}] must be a mapping")
            kwargs[section] = _build_section(cls, data[section], section)
    if "ssl_backend" in data:
        kwargs["ssl_backend"] = str(data["ssl_backend"])
    return RunConfig(**kwargs)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if data is None:
        return RunConfig()
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config root must be a mapping")
    return from_dict(data)


def tiny_run_config(seed: int = 0) -> RunConfig:
    """CPU-sized configuration used by tests and the overfit smoke."""
    from .discriminator import tiny_discriminator_config
    from .model import tiny_model_config

    return RunConfig(
        model=tiny_model_config(seed=seed),
        discriminator=tiny_discriminator_config(seed=seed),
        train=TrainConfig(batch_size=1, seed=seed),
    )
