"""Seeded generators for the ID/OOD classification and identity analogues.

Class (or identity) prototypes live in a latent space equal to the input
space. Domain m maps a noisy prototype through (1 - lam) I + lam A_m with a
random orthogonal A_m; domain 0 is the identity.
"""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Tuple

import numpy as np

from simtune.config.schemas import SyntheticSpec
from simtune.core.numeric import make_rng
from simtune.errors import InvalidSpecError
from simtune.sampler import caption_for_class

logger = logging.getLogger(__name__)

SPLIT_NAMES = ("pretrain", "finetune_id", "test_id", "test_ood")
NAME_PREFIX = {"classification": "class", "identities": "identity"}


@dataclass
class Dataset:
    """Rows of inputs with class/identity labels and domain tags."""

    x: np.ndarray
    labels: np.ndarray
    domains: np.ndarray
    class_names: List[str]
    name: str = ""

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.domains = np.asarray(self.domains, dtype=np.int64)
        if not (len(self.x) == len(self.labels) == len(self.domains)):
            raise InvalidSpecError(f"dataset '{self.name}' has ragged columns")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_dim(self) -> int:
        return self.x.shape[1]

    def subset(self, mask, name: Optional[str] = None) -> "Dataset":
        return Dataset(
            self.x[mask],
            self.labels[mask],
            self.domains[mask],
            self.class_names,
            name or self.name,
        )

    def captions_for(self, labels) -> List[str]:
        return [caption_for_class(self.class_names[int(c)]) for c in labels]

    def present_classes(self) -> np.ndarray:
        return np.unique(self.labels)


@dataclass
class DatasetSplits:
    pretrain: Dataset
    finetune_id: Dataset
    test_id: Dataset
    test_ood: Dataset
    spec: Optional[SyntheticSpec] = None

    def items(self) -> Iterator[Tuple[str, Dataset]]:
        for name in SPLIT_NAMES:
            yield name, getattr(self, name)

    @property
    def class_names(self) -> List[str]:
        return self.pretrain.class_names


def random_orthogonal(rng: np.random.Generator, dim: int) -> np.ndarray:
    """Random rotation (det +1); its blend with the identity stays invertible."""
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def blended_map(a: np.ndarray, strength: float) -> np.ndarray:
    return (1.0 - strength) * np.eye(a.shape[0]) + strength * a


def _draw(
    rng, prototypes, classes, domain_map, domain, n, sigma
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    labels = np.repeat(np.asarray(classes, dtype=np.int64), n)
    latent = prototypes[labels] + sigma * rng.standard_normal(
        (labels.size, prototypes.shape[1])
    )
    return latent @ domain_map.T, labels, np.full(labels.size, domain, dtype=np.int64)


def _assemble(parts, class_names, name) -> Dataset:
    return Dataset(
        np.vstack([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
        np.concatenate([p[2] for p in parts]),
        class_names,
        name,
    )


def _generate(spec: SyntheticSpec) -> DatasetSplits:
    rng = make_rng(spec.seed)
    d, n, sigma = spec.input_dim, spec.samples_per_class_per_domain, spec.noise_sigma
    all_classes = list(range(spec.num_classes))
    held = set(spec.held_out_classes)
    seen = [c for c in all_classes if c not in held]
    class_names = [f"{NAME_PREFIX[spec.kind]}_{c}" for c in all_classes]

    prototypes = rng.standard_normal((spec.num_classes, d))
    raw_maps = [np.eye(d)] + [
        random_orthogonal(rng, d) for _ in range(spec.num_domains - 1)
    ]
    maps = [blended_map(a, spec.domain_shift_strength) for a in raw_maps]
    ood_maps = [blended_map(a, spec.ood_strength) for a in raw_maps]

    pretrain = [
        _draw(rng, prototypes, all_classes, maps[m], m, n, sigma)
        for m in range(spec.num_domains)
    ]
    finetune = [_draw(rng, prototypes, seen, maps[0], 0, n, sigma)]
    test_id = [_draw(rng, prototypes, seen, maps[0], 0, n, sigma)]
    test_ood = [
        _draw(rng, prototypes, all_classes, ood_maps[m], m, n, sigma)
        for m in range(1, spec.num_domains)
    ]

    return DatasetSplits(
        pretrain=_assemble(pretrain, class_names, "pretrain"),
        finetune_id=_assemble(finetune, class_names, "finetune_id"),
        test_id=_assemble(test_id, class_names, "test_id"),
        test_ood=_assemble(test_ood, class_names, "test_ood"),
        spec=spec,
    )


def generate_classification(spec: SyntheticSpec) -> DatasetSplits:
    if spec.kind != "classification":
        raise InvalidSpecError(f"expected a classification spec, got '{spec.kind}'")
    splits = _generate(spec)
    logger.info(
        f"Generated classification data: {spec.num_classes} classes, "
        f"{spec.num_domains} domains, held out {list(spec.held_out_classes)}"
    )
    return splits


def generate_identities(spec: SyntheticSpec) -> DatasetSplits:
    if spec.kind != "identities":
        raise InvalidSpecError(f"expected an identities spec, got '{spec.kind}'")
    if spec.samples_per_class_per_domain < 2:
        raise InvalidSpecError("identity datasets need >= 2 images per identity")
    splits = _generate(spec)
    logger.info(
        f"Generated identity data: {spec.num_classes} identities, "
        f"{len(spec.held_out_classes)} reserved for the shifted domains"
    )
    return splits


def generate(spec: SyntheticSpec) -> DatasetSplits:
    if spec.kind == "identities":
        return generate_identities(spec)
    return generate_classification(spec)


def genuine_pairs(labels) -> Tuple[np.ndarray, np.ndarray]:
    """Index pairs (i < j) sharing a label."""
    labels = np.asarray(labels)
    i, j = np.triu_indices(labels.size, k=1)
    same = labels[i] == labels[j]
    return i[same], j[same]


def impostor_pairs(
    labels, max_pairs: Optional[int] = None, rng: Optional[np.random.Generator] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Index pairs (i < j) with different labels, optionally subsampled."""
    labels = np.asarray(labels)
    i, j = np.triu_indices(labels.size, k=1)
    differ = labels[i] != labels[j]
    i, j = i[differ], j[differ]
    if max_pairs is not None and i.size > max_pairs:
        rng = rng if rng is not None else make_rng(0)
        keep = np.sort(rng.choice(i.size, size=max_pairs, replace=False))
        i, j = i[keep], j[keep]
    return i, j
