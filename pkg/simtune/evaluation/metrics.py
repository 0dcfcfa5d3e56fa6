"""Retrieval, zero-shot accuracy, verification and cluster-tightness metrics."""

import logging
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence

import numpy as np

from simtune.core.numeric import as_matrix, pairwise_cosine, row_l2_normalize
from simtune.errors import (
    DimMismatchError,
    EmptyClassError,
    EmptyScoresError,
    KOutOfRangeError,
    LabelOutOfRangeError,
)

logger = logging.getLogger(__name__)


@dataclass
class ScoreSet:
    """Similarity scores of same-identity and cross-identity pairs."""

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64).reshape(-1)
        self.impostor = np.asarray(self.impostor, dtype=np.float64).reshape(-1)


def true_ranks(sim, truth) -> np.ndarray:
    """0-based rank of the true column per row; ties go to the lower column."""
    sim = as_matrix(sim, "similarity")
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    queries, columns = sim.shape
    if truth.size != queries:
        raise DimMismatchError("one ground-truth column is required per query")
    if truth.size and (truth.min() < 0 or truth.max() >= columns):
        raise LabelOutOfRangeError(f"ground truth must lie in [0, {columns})")
    target = sim[np.arange(queries), truth][:, None]
    earlier = np.arange(columns)[None, :] < truth[:, None]
    return ((sim > target) | ((sim == target) & earlier)).sum(axis=1)


def retrieval_at_k(sim, truth, ks: Iterable[int]) -> Dict[int, float]:
    sim = as_matrix(sim, "similarity")
    columns = sim.shape[1]
    ks = list(ks)
    for k in ks:
        if not 1 <= k <= columns:
            raise KOutOfRangeError(f"k={k} outside [1, {columns}]")
    ranks = true_ranks(sim, truth)
    return {k: float(np.mean(ranks < k)) for k in ks}


def predict_classes(img_emb, class_emb) -> np.ndarray:
    """Index of the most cosine-similar class row; ties go to the lowest index."""
    return np.argmax(pairwise_cosine(img_emb, class_emb), axis=1)


def zero_shot_accuracy(img_emb, class_emb, truth) -> float:
    truth = np.asarray(truth, dtype=np.int64).reshape(-1)
    predicted = predict_classes(img_emb, class_emb)
    if predicted.size != truth.size:
        raise DimMismatchError("one label is required per image")
    return float(np.mean(predicted == truth))


def tar_at_far(scores: ScoreSet, far_targets: Sequence[float]) -> Dict[float, float]:
    """TAR at the smallest observed-impostor threshold meeting each FAR target.

    Candidate thresholds are the impostor scores plus +inf; a pair is accepted
    when its score is >= the threshold.
    """
    genuine, impostor = scores.genuine, scores.impostor
    if genuine.size == 0 or impostor.size == 0:
        raise EmptyScoresError("genuine and impostor scores must both be non-empty")
    candidates = np.append(np.unique(impostor), np.inf)
    ordered = np.sort(impostor)
    accepted = impostor.size - np.searchsorted(ordered, candidates, side="left")
    far = accepted / impostor.size

    result = {}
    for target in far_targets:
        if not 0.0 < target <= 1.0:
            raise ValueError(f"FAR target must lie in (0, 1], got {target}")
        threshold = candidates[np.argmax(far <= target)]
        result[float(target)] = float(np.mean(genuine >= threshold))
    return result


def cluster_variance(emb, labels, normalize: bool = True) -> float:
    """Mean over classes of the per-dimension variance around the class centroid."""
    emb = as_matrix(emb, "embeddings")
    if normalize:
        emb = row_l2_normalize(emb)
    labels = np.asarray(labels).reshape(-1)
    if labels.size != emb.shape[0]:
        raise DimMismatchError("one label is required per embedding")
    classes = np.unique(labels)
    if classes.size == 0:
        raise EmptyClassError("no classes to measure")
    dim = emb.shape[1]
    per_class = []
    for c in classes:
        members = emb[labels == c]
        centered = members - members.mean(axis=0)
        per_class.append(np.einsum("ij,ij->", centered, centered) / members.shape[0])
    return float(np.mean(per_class) / dim)
