import logging
import logging.config
from pathlib import Path
from typing import Optional

import yaml

from simtune.config.loader import env_setting

PACKAGE_ROOT = Path(__file__).resolve().parent.parent
DEFAULT_LOGGING_CONFIG = PACKAGE_ROOT / "config" / "logging.yaml"


def setup_logging(
    config_path: Optional[str] = None, default_level: int = logging.INFO
) -> None:
    """Configure logging using yaml config file"""
    path = config_path or env_setting("LOG_CONFIG", str(DEFAULT_LOGGING_CONFIG))
    try:
        with open(path, "rt") as f:
            config = yaml.safe_load(f.read())
        config.setdefault("root", {})["level"] = env_setting(
            "LOG_LEVEL", config.get("root", {}).get("level", "INFO")
        ).upper()
        logging.config.dictConfig(config)
    except Exception as e:
        logging.basicConfig(level=default_level)
        logging.error(f"Error loading logging configuration: {str(e)}")
