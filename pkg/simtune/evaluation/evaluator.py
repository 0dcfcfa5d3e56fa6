"""Embed a split once and compute every metric its protocol supports."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
import pandas as pd
from sklearn.decomposition import PCA

from simtune.config.schemas import DESK_FAR_TARGETS
from simtune.core.numeric import make_rng, pairwise_cosine, row_l2_normalize
from simtune.data.io import embedding_frame, write_frame, write_json
from simtune.data.synthetic import genuine_pairs, impostor_pairs
from simtune.errors import ConfigurationError
from simtune.evaluation.metrics import (
    ScoreSet,
    cluster_variance,
    retrieval_at_k,
    tar_at_far,
    zero_shot_accuracy,
)
from simtune.models.encoder import (
    CaptionTable,
    EncoderParams,
    EncoderSnapshot,
    drift,
    forward_text,
    forward_vision,
)

logger = logging.getLogger(__name__)

PROTOCOLS = ("classification", "verification")
PROTOCOL_FOR_KIND = {"classification": "classification", "identities": "verification"}
OOD_SPLITS = ("test_ood",)
RATE_PREFIXES = ("accuracy", "ret@", "mean_ret", "tar@far")


@dataclass
class MetricsReport:
    metrics: Dict[str, float]
    tag: str
    split: str = ""
    config: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.tag not in ("ID", "OOD"):
            raise ConfigurationError(f"report tag must be ID or OOD, got {self.tag}")
        for name, value in self.metrics.items():
            if is_rate(name) and not 0.0 <= value <= 1.0:
                raise ValueError(f"rate {name}={value} outside [0, 1]")

    def to_document(self) -> Dict[str, Any]:
        return {
            "tag": self.tag,
            "split": self.split,
            "metrics": dict(self.metrics),
            "config": self.config,
        }

    def frame(self) -> pd.DataFrame:
        names = sorted(self.metrics)
        row = [self.tag, self.split, *[self.metrics[n] for n in names]]
        return pd.DataFrame([row], columns=["tag", "split", *names])


def is_rate(metric: str) -> bool:
    return metric.split("/")[-1].startswith(RATE_PREFIXES)


def far_key(target: float) -> str:
    return f"tar@far={target:g}"


def score_pairs(emb, first, second) -> np.ndarray:
    """Cosine similarity of rows ``first[k]`` and ``second[k]``."""
    unit = row_l2_normalize(emb)
    return np.einsum("ij,ij->i", unit[first], unit[second])


def verification_scores(
    emb, labels, max_impostor_pairs: Optional[int] = None, seed: int = 0
) -> ScoreSet:
    gi, gj = genuine_pairs(labels)
    ii, ij = impostor_pairs(labels, max_impostor_pairs, make_rng(seed))
    return ScoreSet(score_pairs(emb, gi, gj), score_pairs(emb, ii, ij))


def class_embeddings(captions: CaptionTable, dataset) -> np.ndarray:
    """Caption rows for every class of the dataset, in class-index order."""
    return forward_text(captions, dataset.captions_for(range(len(dataset.class_names))))


def _classification_metrics(emb, dataset, captions, ks) -> Dict[str, float]:
    class_emb = class_embeddings(captions, dataset)
    ks = [k for k in ks if k <= class_emb.shape[0]]
    metrics = {"accuracy": zero_shot_accuracy(emb, class_emb, dataset.labels)}
    if ks:
        ret = retrieval_at_k(pairwise_cosine(emb, class_emb), dataset.labels, ks)
        metrics.update({f"ret@{k}": rate for k, rate in ret.items()})
        metrics["mean_ret"] = float(np.mean(list(ret.values())))
    return metrics


def _verification_metrics(emb, labels, far_targets, max_pairs, seed):
    scores = verification_scores(emb, labels, max_pairs, seed)
    tar = tar_at_far(scores, far_targets)
    metrics = {far_key(target): rate for target, rate in tar.items()}
    metrics["genuine_pairs"] = float(scores.genuine.size)
    metrics["impostor_pairs"] = float(scores.impostor.size)
    return metrics


def _split_metrics(
    params, snapshot, dataset, protocol, captions, ks, far_targets, max_pairs, seed
) -> Dict[str, float]:
    emb = forward_vision(params, dataset.x)
    if protocol == "classification":
        metrics = _classification_metrics(emb, dataset, captions, ks)
    else:
        metrics = _verification_metrics(
            emb, dataset.labels, far_targets, max_pairs, seed
        )
    metrics["cluster_variance"] = cluster_variance(emb, dataset.labels)
    metrics["mean_drift"] = float(drift(params, snapshot, dataset.x).mean())
    return metrics


def evaluate(
    params: EncoderParams,
    snapshot: EncoderSnapshot,
    dataset,
    protocol: str,
    captions: Optional[CaptionTable] = None,
    ks: Sequence[int] = (1, 5, 10),
    far_targets: Sequence[float] = DESK_FAR_TARGETS,
    max_impostor_pairs: Optional[int] = None,
    seed: int = 0,
    tag: Optional[str] = None,
    config: Optional[Dict[str, Any]] = None,
) -> MetricsReport:
    """Metrics of ``params`` on one split, with drift against ``snapshot``.

    Splits spanning several domains also get ``domain_<m>/<metric>`` entries;
    their ``cluster_variance`` is the mean over domains, each scored as its own
    dataset, and ``pooled_cluster_variance`` ignores the domain tags.
    RET@K values with K above the number of classes are not reported.
    """
    if protocol not in PROTOCOLS:
        raise ConfigurationError(f"unknown protocol '{protocol}'")
    if protocol == "classification" and captions is None:
        raise ConfigurationError("classification evaluation needs a caption table")
    if len(dataset) == 0:
        raise ConfigurationError(f"split '{dataset.name}' is empty")

    args = (protocol, captions, ks, far_targets, max_impostor_pairs, seed)
    metrics = _split_metrics(params, snapshot, dataset, *args)
    domains = np.unique(dataset.domains)
    if domains.size > 1:
        per_domain = []
        for m in domains:
            part = dataset.subset(dataset.domains == m)
            for name, value in _split_metrics(params, snapshot, part, *args).items():
                metrics[f"domain_{m}/{name}"] = value
            per_domain.append(metrics[f"domain_{m}/cluster_variance"])
        metrics["pooled_cluster_variance"] = metrics["cluster_variance"]
        metrics["cluster_variance"] = float(np.mean(per_domain))

    if tag is None:
        tag = "OOD" if dataset.name in OOD_SPLITS else "ID"
    logger.info(
        f"Evaluated {dataset.name} ({tag}, {protocol}): "
        + ", ".join(f"{k}={v:.4f}" for k, v in metrics.items() if "/" not in k)
    )
    return MetricsReport(metrics, tag, dataset.name, dict(config or {}))


def write_report(
    report: MetricsReport, out_dir, stem: str, manifest: Optional[Dict] = None
) -> Path:
    out_dir = Path(out_dir)
    write_frame(report.frame(), out_dir / f"{stem}.csv")
    doc = report.to_document()
    if manifest is not None:
        doc["manifest"] = manifest
    write_json(doc, out_dir / f"{stem}.json")
    return out_dir


def projection_frame(embeddings: np.ndarray, labels) -> pd.DataFrame:
    """2-D PCA of unit-normalized embeddings for cluster plots."""
    unit = row_l2_normalize(embeddings)
    components = min(2, unit.shape[0], unit.shape[1])
    coords = PCA(n_components=components, svd_solver="full").fit_transform(unit)
    if components < 2:
        coords = np.hstack([coords, np.zeros((coords.shape[0], 2 - components))])
    frame = pd.DataFrame(coords, columns=["p0", "p1"])
    frame.insert(0, "label", np.asarray(labels, dtype=np.int64))
    frame.insert(0, "id", np.arange(len(frame)))
    return frame


def write_embeddings(params: EncoderParams, dataset, out_dir, stem: str) -> Path:
    out_dir = Path(out_dir)
    emb = forward_vision(params, dataset.x)
    write_frame(embedding_frame(emb, dataset.labels), out_dir / f"{stem}.csv")
    write_frame(
        projection_frame(emb, dataset.labels), out_dir / f"{stem}_projection.csv"
    )
    return out_dir
