"""Finite-difference verification of every analytic loss gradient.

Each registered check draws one random instance per call and returns the
scalar function of a flat parameter vector, the point to evaluate at and the
analytic gradient there. ``run_gradient_checks`` compares the analytic
gradient with ``finite_diff_grad`` over many seeded instances.
"""

import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional

import numpy as np

from simtune.core.numeric import (
    DEFAULT_FD_STEP,
    ParamSet,
    finite_diff_grad,
    flatten_params,
    make_rng,
    max_relative_error,
    unflatten_params,
)
from simtune.errors import ConfigurationError, DimMismatchError
from simtune.losses import (
    CLASS_WEIGHTS_KEY,
    LossHyper,
    arc_margin_loss,
    arc_margin_objective,
    classification_objective,
    clip_symmetric_loss,
    contrastive_loss,
    pairwise_objective,
    similarity_loss,
    triplet_loss,
)
from simtune.models.encoder import (
    CAPTIONS_KEY,
    CaptionTable,
    EncoderParams,
    forward_vision,
    snapshot_of,
)
from simtune.sampler import LabeledBatch, PairBatch, caption_for_class

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE = 1e-4
KINK_GAP = 1e-3

# small shapes keep a full 100-instance sweep fast
BATCH = 4
WIDTH = 6
EMBED = 4
HIDDEN = (8,)
CLASSES = 3


@dataclass
class GradientCase:
    f: Callable[[np.ndarray], float]
    at: np.ndarray
    analytic: np.ndarray


def _case(value_fn: Callable[[ParamSet], float], point: ParamSet, grads: ParamSet):
    """Wrap a ParamSet-valued problem as a flat-vector one."""
    at, layout = flatten_params(point)
    analytic, grad_layout = flatten_params(grads)
    if grad_layout != layout:
        raise DimMismatchError(
            f"gradient groups {grad_layout} do not match parameters {layout}"
        )
    return GradientCase(
        lambda vec: value_fn(unflatten_params(vec, layout)), at, analytic
    )


def _tau(rng) -> float:
    return float(rng.uniform(0.05, 0.5))


def _encoder_pair(rng):
    """Trainable encoder and a perturbed copy to freeze as the reference."""
    params = EncoderParams.initialize(WIDTH, HIDDEN, EMBED, rng)
    reference = params.with_arrays(
        {
            name: arr + 0.1 * rng.standard_normal(arr.shape)
            for name, arr in params.to_dict().items()
        }
    )
    return params, reference


def _unit_rows(m):
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def check_contrastive(rng) -> GradientCase:
    tau = _tau(rng)
    point = {"u": rng.standard_normal((BATCH, 8)), "v": rng.standard_normal((BATCH, 8))}
    loss = contrastive_loss(point["u"], point["v"], tau)
    return _case(
        lambda p: contrastive_loss(p["u"], p["v"], tau).value, point, loss.grads
    )


def check_clip_symmetric(rng) -> GradientCase:
    tau = _tau(rng)
    point = {
        "img": rng.standard_normal((BATCH, EMBED)),
        "txt": rng.standard_normal((BATCH, EMBED)),
    }
    loss = clip_symmetric_loss(point["img"], point["txt"], tau)
    return _case(
        lambda p: clip_symmetric_loss(p["img"], p["txt"], tau).value, point, loss.grads
    )


def check_triplet(rng) -> GradientCase:
    """Triplets are redrawn until every row is off the hinge kink."""
    metric = "euclidean" if rng.random() < 0.5 else "cosine"
    while True:
        margin = float(rng.uniform(0.0, 1.0))
        point = {
            name: rng.standard_normal((BATCH, EMBED))
            for name in ("anchor", "positive", "negative")
        }
        a, p, n = point["anchor"], point["positive"], point["negative"]
        if metric == "euclidean":
            gap = np.linalg.norm(a - p, axis=1) - np.linalg.norm(a - n, axis=1)
        else:
            ua, up, un = _unit_rows(a), _unit_rows(p), _unit_rows(n)
            gap = np.sum(ua * un, axis=1) - np.sum(ua * up, axis=1)
        if np.all(np.abs(gap + margin) > KINK_GAP):
            break

    def value(q):
        return triplet_loss(
            q["anchor"], q["positive"], q["negative"], margin, metric
        ).value

    return _case(value, point, triplet_loss(a, p, n, margin, metric).grads)


def check_arc_margin(rng) -> GradientCase:
    """Instances sit away from the branch switch at theta + m = pi."""
    hyper = LossHyper()
    switch = np.cos(np.pi - hyper.arc_margin)
    while True:
        emb = rng.standard_normal((BATCH, EMBED))
        weights = rng.standard_normal((CLASSES, EMBED))
        labels = rng.integers(0, CLASSES, size=BATCH)
        cos_y = np.sum(_unit_rows(emb) * _unit_rows(weights)[labels], axis=1)
        if np.all(np.abs(cos_y - switch) > KINK_GAP):
            break

    def value(q):
        return arc_margin_loss(
            q["embeddings"],
            labels,
            q[CLASS_WEIGHTS_KEY],
            hyper.arc_scale,
            hyper.arc_margin,
        ).value

    point = {"embeddings": emb, CLASS_WEIGHTS_KEY: weights}
    loss = arc_margin_loss(emb, labels, weights, hyper.arc_scale, hyper.arc_margin)
    return _case(value, point, loss.grads)


def check_similarity(rng) -> GradientCase:
    params, reference = _encoder_pair(rng)
    snapshot = snapshot_of(reference)
    x = rng.standard_normal((BATCH, WIDTH))
    loss = similarity_loss(params, snapshot, x)
    return _case(
        lambda p: similarity_loss(params.with_arrays(p), snapshot, x).value,
        params.to_dict(),
        loss.grads,
    )


def check_classification_objective(rng) -> GradientCase:
    params, reference = _encoder_pair(rng)
    names = [caption_for_class(f"class_{c}") for c in range(CLASSES)]
    table = CaptionTable(rng.standard_normal((CLASSES, EMBED)), names)
    frozen = CaptionTable(
        table.embeddings + 0.1 * rng.standard_normal(table.embeddings.shape), names
    )
    snapshot = snapshot_of(reference, frozen)
    class_ids = rng.integers(0, CLASSES, size=BATCH)
    batch = LabeledBatch(
        images=rng.standard_normal((BATCH, WIDTH)),
        class_ids=class_ids,
        captions=[names[c] for c in class_ids],
    )
    hyper = LossHyper(
        tau=_tau(rng),
        alpha=float(rng.choice([0.0, 0.1, 1.0, 100.0])),
        text_alpha=float(rng.choice([0.0, 1.0])),
    )

    def value(p):
        current = CaptionTable(p[CAPTIONS_KEY], names)
        return classification_objective(
            params.with_arrays(p), current, snapshot, batch, hyper
        ).value

    point = dict(params.to_dict())
    point[CAPTIONS_KEY] = table.embeddings
    loss = classification_objective(params, table, snapshot, batch, hyper)
    return _case(value, point, loss.grads)


def check_pairwise_objective(rng) -> GradientCase:
    params, reference = _encoder_pair(rng)
    snapshot = snapshot_of(reference)
    batch = PairBatch(
        u=rng.standard_normal((BATCH, WIDTH)),
        v=rng.standard_normal((BATCH, WIDTH)),
        identity_ids=np.arange(BATCH),
    )
    hyper = LossHyper(tau=_tau(rng), alpha=float(rng.choice([0.0, 1.0, 10.0])))

    def value(p):
        return pairwise_objective(params.with_arrays(p), snapshot, batch, hyper).value

    loss = pairwise_objective(params, snapshot, batch, hyper)
    return _case(value, params.to_dict(), loss.grads)


def check_arc_margin_objective(rng) -> GradientCase:
    """Encoder-level arc objective, per-row or stacked-pair drift normalizer."""
    params, reference = _encoder_pair(rng)
    snapshot = snapshot_of(reference)
    hyper = LossHyper(
        alpha=float(rng.choice([0.0, 1.0, 10.0])),
        arc_scale=float(rng.uniform(2.0, 16.0)),
        arc_margin=float(rng.uniform(0.1, 0.5)),
    )
    pairs = BATCH // 2 if rng.random() < 0.5 else None
    switch = np.cos(np.pi - hyper.arc_margin)
    while True:
        x = rng.standard_normal((BATCH, WIDTH))
        weights = rng.standard_normal((CLASSES, EMBED))
        if pairs is None:
            labels = rng.integers(0, CLASSES, size=BATCH)
        else:
            labels = np.tile(rng.integers(0, CLASSES, size=pairs), 2)
        emb = forward_vision(params, x)
        cos_y = np.sum(_unit_rows(emb) * _unit_rows(weights)[labels], axis=1)
        if np.all(np.abs(cos_y - switch) > KINK_GAP):
            break

    def value(p):
        return arc_margin_objective(
            params.with_arrays(p), snapshot, p[CLASS_WEIGHTS_KEY], x, labels,
            hyper, pairs,
        ).value

    point = dict(params.to_dict())
    point[CLASS_WEIGHTS_KEY] = weights
    loss = arc_margin_objective(params, snapshot, weights, x, labels, hyper, pairs)
    return _case(value, point, loss.grads)


GRADIENT_CHECKS: Dict[str, Callable[[np.random.Generator], GradientCase]] = {
    "contrastive_loss": check_contrastive,
    "clip_symmetric_loss": check_clip_symmetric,
    "triplet_loss": check_triplet,
    "arc_margin_loss": check_arc_margin,
    "similarity_loss": check_similarity,
    "classification_objective": check_classification_objective,
    "pairwise_objective": check_pairwise_objective,
    "arc_margin_objective": check_arc_margin_objective,
}


def run_gradient_checks(
    n_instances: int = 100,
    seed: int = 0,
    h: float = DEFAULT_FD_STEP,
    names: Optional[Iterable[str]] = None,
) -> Dict[str, float]:
    """Worst relative error per check over ``n_instances`` seeded instances."""
    if n_instances <= 0:
        raise ConfigurationError(f"need at least one instance, got {n_instances}")
    selected = list(names) if names is not None else list(GRADIENT_CHECKS)
    unknown = [name for name in selected if name not in GRADIENT_CHECKS]
    if unknown:
        raise ConfigurationError(f"unknown gradient checks: {unknown}")

    report: Dict[str, float] = {}
    for name in selected:
        rng = make_rng(seed)
        worst = 0.0
        for _ in range(n_instances):
            case = GRADIENT_CHECKS[name](rng)
            numeric = finite_diff_grad(case.f, case.at, h)
            worst = max(worst, max_relative_error(case.analytic, numeric))
        report[name] = worst
        logger.info(f"gradcheck {name}: max rel-err {worst:.3e} over {n_instances}")
    return report


def failing_checks(
    report: Dict[str, float], tolerance: float = DEFAULT_TOLERANCE
) -> Dict[str, float]:
    return {
        name: err
        for name, err in report.items()
        if not (np.isfinite(err) and err < tolerance)
    }
