"""Configuration management for simtune."""

from simtune.config.loader import load_run_config
from simtune.config.schemas import (
    EncoderSpec,
    PretrainConfig,
    RunConfig,
    SyntheticSpec,
    TrainConfig,
)
from simtune.errors import ConfigurationError

__all__ = [
    "load_run_config",
    "ConfigurationError",
    "EncoderSpec",
    "PretrainConfig",
    "RunConfig",
    "SyntheticSpec",
    "TrainConfig",
]
