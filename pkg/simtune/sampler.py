"""Batch construction for the classification and identity-pair tasks."""

import logging
from dataclasses import dataclass
from typing import List

import numpy as np

from simtune.errors import (
    BatchTooLargeError,
    ConfigurationError,
    EmptyClassNameError,
    EmptyDatasetError,
    IdentityHasSingleImageError,
    NotEnoughIdentitiesError,
)

logger = logging.getLogger(__name__)

CAPTION_TEMPLATE = "a photo of a "


@dataclass
class LabeledBatch:
    images: np.ndarray
    class_ids: np.ndarray
    captions: List[str]


@dataclass
class PairBatch:
    u: np.ndarray
    v: np.ndarray
    identity_ids: np.ndarray


def caption_for_class(class_name: str) -> str:
    if not class_name:
        raise EmptyClassNameError("class name must be non-empty")
    return CAPTION_TEMPLATE + class_name


def sample_labeled_batch(dataset, batch_size: int, rng: np.random.Generator):
    """Uniform draw without replacement within the batch."""
    size = len(dataset)
    if size == 0:
        raise EmptyDatasetError("cannot sample from an empty dataset")
    if batch_size < 2:
        raise ConfigurationError(f"batch size must be >= 2, got {batch_size}")
    if batch_size > size:
        raise BatchTooLargeError(
            f"batch size {batch_size} exceeds dataset size {size}"
        )
    idx = rng.choice(size, size=batch_size, replace=False)
    labels = dataset.labels[idx]
    return LabeledBatch(
        images=dataset.x[idx],
        class_ids=labels,
        captions=dataset.captions_for(labels),
    )


def identity_pool(labels, strict: bool = True):
    """Map identity -> row indices, restricted to identities with >= 2 images."""
    labels = np.asarray(labels)
    order = np.argsort(labels, kind="stable")
    identities, starts, counts = np.unique(
        labels[order], return_index=True, return_counts=True
    )
    single = identities[counts < 2]
    if strict and single.size:
        raise IdentityHasSingleImageError(
            f"identities {single[:5].tolist()} have a single image"
        )
    keep = counts >= 2
    return {
        int(ident): order[start : start + count]
        for ident, start, count in zip(
            identities[keep], starts[keep], counts[keep]
        )
    }


def sample_identity_batch(
    dataset, batch_size: int, rng: np.random.Generator, strict: bool = True
) -> PairBatch:
    """B distinct identities, each contributing two distinct images (U_i, V_i)."""
    pool = identity_pool(dataset.labels, strict=strict)
    identities = np.array(sorted(pool), dtype=np.int64)
    if identities.size < batch_size:
        raise NotEnoughIdentitiesError(
            f"need {batch_size} identities with >= 2 images, found {identities.size}"
        )
    chosen = rng.choice(identities, size=batch_size, replace=False)
    u_rows = np.empty(batch_size, dtype=np.int64)
    v_rows = np.empty(batch_size, dtype=np.int64)
    for k, ident in enumerate(chosen):
        first, second = rng.choice(pool[int(ident)], size=2, replace=False)
        u_rows[k], v_rows[k] = first, second
    return PairBatch(
        u=dataset.x[u_rows], v=dataset.x[v_rows], identity_ids=chosen.astype(np.int64)
    )
