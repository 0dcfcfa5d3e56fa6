from simtune.monitoring.logging_config import setup_logging
from simtune.monitoring.metrics import record_divergence, record_step

__all__ = ["setup_logging", "record_step", "record_divergence"]
