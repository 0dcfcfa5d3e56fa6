"""Alpha sweeps: paired fine-tuning runs over a list of drift weights.

Every alpha of a seed shares that seed's dataset and pretrained encoder, so
differences between rows come from alpha alone. With several seeds the
summary reports per-alpha medians.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from simtune.config.schemas import RunConfig
from simtune.data.synthetic import DatasetSplits, generate
from simtune.errors import ConfigurationError
from simtune.evaluation.evaluator import PROTOCOL_FOR_KIND, evaluate, far_key
from simtune.models.checkpoint import Checkpoint
from simtune.models.encoder import snapshot_of
from simtune.training.pretrain import pretrain
from simtune.training.trainer import run_training

logger = logging.getLogger(__name__)

KEY_COLUMNS = ["alpha", "seed"]


@dataclass
class SweepResult:
    runs: pd.DataFrame
    summary: pd.DataFrame
    baseline: pd.DataFrame
    best_alpha: float
    primary: str

    def to_document(self) -> Dict[str, Any]:
        return {
            "primary_metric": self.primary,
            "best_alpha": self.best_alpha,
            "summary": self.summary.to_dict(orient="records"),
            "baseline": self.baseline.to_dict(orient="records"),
        }


def primary_metric(config: RunConfig) -> str:
    if PROTOCOL_FOR_KIND[config.dataset_kind] == "verification":
        return far_key(config.far_targets[0])
    return "accuracy"


def _top_level(prefix: str, metrics: Dict[str, float]) -> Dict[str, float]:
    return {f"{prefix}{k}": v for k, v in metrics.items() if "/" not in k}


def evaluate_pair(config: RunConfig, params, captions, pretrained, splits):
    """ID and OOD metrics of ``params`` with drift against ``pretrained``."""
    snapshot = snapshot_of(pretrained.params, pretrained.captions)
    protocol = PROTOCOL_FOR_KIND[config.dataset_kind]
    reports = [
        evaluate(
            params,
            snapshot,
            split,
            protocol,
            captions,
            config.retrieval_ks,
            config.far_targets,
            config.max_impostor_pairs,
            seed=config.seed,
        )
        for split in (splits.test_id, splits.test_ood)
    ]
    row = _top_level("id_", reports[0].metrics)
    row.update(_top_level("ood_", reports[1].metrics))
    row["drift"] = reports[1].metrics["mean_drift"]
    return row


def prepare_seed(
    config: RunConfig,
    splits: Optional[DatasetSplits] = None,
    pretrained: Optional[Checkpoint] = None,
) -> Tuple[DatasetSplits, Checkpoint]:
    if splits is None:
        splits = generate(config.synthetic_spec())
    if pretrained is None:
        pretrained = pretrain(
            splits.pretrain, config.encoder_spec(), config.pretrain_config()
        )
    return splits, pretrained


def _run_alpha(config: RunConfig, alpha: float, splits, pretrained) -> Dict[str, Any]:
    record = run_training(
        pretrained, splits.finetune_id, config.train_config(alpha=alpha)
    )
    row: Dict[str, Any] = {"alpha": alpha, "seed": config.seed}
    row["failed"] = int(record.failed)
    row["completed_steps"] = record.completed_steps
    row.update(
        evaluate_pair(config, record.params, record.captions, pretrained, splits)
    )
    return row


def select_alpha(summary: pd.DataFrame, primary: str, id_tolerance: float) -> float:
    """Best median OOD score among alphas whose median ID score stays within
    ``id_tolerance`` of the reference alpha (0, or the smallest alpha)."""
    reference = summary.loc[summary["alpha"].idxmin()]
    floor = reference[f"id_{primary}"] - id_tolerance
    eligible = summary[summary[f"id_{primary}"] >= floor]
    best = eligible[f"ood_{primary}"].to_numpy().argmax()
    return float(eligible["alpha"].iloc[best])


def summarize(runs: pd.DataFrame) -> pd.DataFrame:
    metrics = [c for c in runs.columns if c not in KEY_COLUMNS]
    grouped = runs.groupby("alpha", sort=True)
    summary = grouped[metrics].median()
    summary["failed"] = grouped["failed"].sum()
    summary.insert(0, "seeds", grouped.size())
    return summary.reset_index()


def run_sweep(
    config: RunConfig,
    splits: Optional[DatasetSplits] = None,
    pretrained: Optional[Checkpoint] = None,
) -> SweepResult:
    """Train and evaluate every (seed, alpha) pair; ``splits`` and
    ``pretrained``, when given, are shared by all seeds."""
    alphas = list(config.alphas)
    if len(alphas) < 2:
        raise ConfigurationError("a sweep needs at least two alpha values")
    if len(set(alphas)) != len(alphas):
        raise ConfigurationError(f"alpha values must be distinct: {alphas}")
    if any(a < 0 for a in alphas):
        raise ConfigurationError("alpha values must be >= 0")
    seeds = list(config.sweep_seeds) or [config.seed]

    prepared: List[Tuple[RunConfig, DatasetSplits, Checkpoint]] = []
    baseline = []
    for seed in seeds:
        seeded = config.model_copy(update={"seed": seed})
        seed_splits, seed_model = prepare_seed(seeded, splits, pretrained)
        prepared.append((seeded, seed_splits, seed_model))
        row = {"seed": seed}
        row.update(
            evaluate_pair(
                seeded, seed_model.params, seed_model.captions, seed_model, seed_splits
            )
        )
        baseline.append(row)

    jobs = [(entry, alpha) for entry in prepared for alpha in alphas]
    logger.info(
        f"Sweeping alphas {alphas} over seeds {seeds} "
        f"({len(jobs)} runs, {config.max_workers} workers)"
    )
    with ThreadPoolExecutor(max_workers=config.max_workers) as pool:
        rows = list(
            pool.map(lambda job: _run_alpha(job[0][0], job[1], *job[0][1:]), jobs)
        )

    runs = pd.DataFrame(rows).sort_values(KEY_COLUMNS, kind="stable")
    runs = runs.reset_index(drop=True)
    summary = summarize(runs)
    primary = primary_metric(config)
    best = select_alpha(summary, primary, config.id_tolerance)
    logger.info(
        f"Selected alpha*={best}: median OOD {primary} "
        f"{summary.loc[summary['alpha'] == best, f'ood_{primary}'].iloc[0]:.4f}"
    )
    return SweepResult(runs, summary, pd.DataFrame(baseline), best, primary)


def median_of(summary: pd.DataFrame, alpha: float, column: str) -> float:
    return float(summary.loc[np.isclose(summary["alpha"], alpha), column].iloc[0])
