"""Loading of run configuration documents."""

import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional

from dotenv import load_dotenv

from simtune.config.schemas import PRESETS, RunConfig, validated
from simtune.errors import ConfigurationError, MissingInputError

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

DEFAULT_CONFIG_PATH = Path(__file__).resolve().parent / "default.json"


def env_setting(name: str, default: str) -> str:
    """Process-level knob from the environment (``SIMTUNE_<name>``)."""
    return os.getenv(f"SIMTUNE_{name}", default)


def read_config_document(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"config file {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"config file {path} is not valid JSON: {e}")
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config file {path} must hold a JSON object")
    return doc


def resolve_document(
    doc: Dict[str, Any], overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    """Apply a named preset underneath ``doc`` and overrides on top of it."""
    doc = dict(doc)
    if overrides:
        doc.update({k: v for k, v in overrides.items() if v is not None})

    preset_name = doc.get("preset")
    if preset_name is not None:
        if preset_name not in PRESETS:
            raise ConfigurationError(f"unknown preset '{preset_name}'")
        preset = dict(PRESETS[preset_name])
        reported_lr = preset.pop("reported_lr")
        merged = {**preset, **doc}
        if merged.get("use_reported_lr"):
            merged["lr0"] = reported_lr
        doc = merged

    return validated(RunConfig, doc)


def load_run_config(
    path=None, overrides: Optional[Dict[str, Any]] = None
) -> RunConfig:
    config_path = Path(path) if path is not None else DEFAULT_CONFIG_PATH
    config = resolve_document(read_config_document(config_path), overrides)
    logger.info(f"Loaded run configuration from {config_path}")
    return config
