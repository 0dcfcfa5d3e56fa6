"""In-process training metrics on the default prometheus registry."""

import logging

from prometheus_client import Counter, Gauge

logger = logging.getLogger(__name__)

OPTIMIZER_STEPS = Counter(
    "simtune_optimizer_steps", "Optimizer steps taken", ["stage", "task"]
)
DIVERGENCES = Counter(
    "simtune_divergences", "Runs aborted on a non-finite objective", ["stage", "task"]
)
LATEST_LOSS = Gauge("simtune_latest_loss", "Most recent total loss", ["stage", "task"])
LATEST_DRIFT = Gauge(
    "simtune_latest_mean_drift", "Most recent batch mean drift", ["stage", "task"]
)


def record_step(stage: str, task: str, loss: float, mean_drift: float) -> None:
    OPTIMIZER_STEPS.labels(stage=stage, task=task).inc()
    LATEST_LOSS.labels(stage=stage, task=task).set(loss)
    LATEST_DRIFT.labels(stage=stage, task=task).set(mean_drift)


def record_divergence(stage: str, task: str) -> None:
    DIVERGENCES.labels(stage=stage, task=task).inc()
    logger.warning(f"Divergence recorded for {stage}/{task}")
