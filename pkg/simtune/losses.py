"""Objective functions with analytic gradients.

Embedding-level losses return gradients keyed by their argument names
(``u``/``v``, ``img``/``txt``, ...). Parameter-level objectives return
gradients keyed like ``EncoderParams.to_dict()`` plus ``captions`` and
``class_weights`` where those groups take part.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from simtune.core.numeric import (
    ParamSet,
    as_matrix,
    logsumexp_rows,
    normalize_backward,
    normalize_with_norms,
    softmax_rows,
)
from simtune.errors import (
    ConfigurationError,
    DimMismatchError,
    DuplicateIdentityError,
    LabelOutOfRangeError,
    NonFiniteError,
)
from simtune.models.encoder import (
    CAPTIONS_KEY,
    CaptionTable,
    EncoderParams,
    EncoderSnapshot,
    backward_vision,
    forward_vision,
    forward_with_cache,
)

logger = logging.getLogger(__name__)

CLASS_WEIGHTS_KEY = "class_weights"
COS_CLIP = 1e-7
TRIPLET_METRICS = ("euclidean", "cosine")


@dataclass
class LossValue:
    value: float
    grads: ParamSet
    terms: Dict[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class LossHyper:
    tau: float = 0.1
    margin: float = 0.2
    alpha: float = 0.0
    arc_scale: float = 64.0
    arc_margin: float = 0.5
    triplet_metric: str = "euclidean"
    text_alpha: float = 0.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigurationError(f"tau must be > 0, got {self.tau}")
        if self.alpha < 0 or self.text_alpha < 0:
            raise ConfigurationError("similarity weights must be >= 0")
        if self.margin < 0 or self.arc_margin < 0:
            raise ConfigurationError("margins must be >= 0")
        if not self.arc_scale > 0:
            raise ConfigurationError(f"arc_scale must be > 0, got {self.arc_scale}")
        if self.triplet_metric not in TRIPLET_METRICS:
            raise ConfigurationError(f"unknown triplet metric '{self.triplet_metric}'")


def _finite(value: float, name: str) -> float:
    if not np.isfinite(value):
        raise NonFiniteError(f"{name} evaluated to {value}")
    return float(value)


def _paired(a, b, names=("u", "v")):
    a = as_matrix(a, names[0])
    b = as_matrix(b, names[1])
    if a.shape != b.shape:
        raise DimMismatchError(
            f"{names[0]} {a.shape} and {names[1]} {b.shape} must have equal shapes"
        )
    if a.shape[0] < 1:
        raise DimMismatchError("batch must contain at least one row")
    return a, b


def contrastive_loss(u, v, tau: float) -> LossValue:
    """InfoNCE with row i of ``v`` as the positive for row i of ``u``.

    The softmax denominator runs over every row of ``v``, the positive included.
    """
    u, v = _paired(u, v)
    batch = u.shape[0]
    u_unit, u_norm = normalize_with_norms(u)
    v_unit, v_norm = normalize_with_norms(v)

    logits = (u_unit @ v_unit.T) / tau
    value = np.mean(logsumexp_rows(logits) - np.diag(logits))

    dlogits = softmax_rows(logits)
    dlogits[np.diag_indices(batch)] -= 1.0
    dlogits /= batch
    du = normalize_backward(dlogits @ v_unit / tau, u_unit, u_norm)
    dv = normalize_backward(dlogits.T @ u_unit / tau, v_unit, v_norm)

    value = _finite(value, "contrastive loss")
    return LossValue(value, {"u": du, "v": dv}, {"contrastive": value})


def clip_symmetric_loss(img, txt, tau: float) -> LossValue:
    forward = contrastive_loss(img, txt, tau)
    backward = contrastive_loss(txt, img, tau)
    value = 0.5 * (forward.value + backward.value)
    grads = {
        "img": 0.5 * (forward.grads["u"] + backward.grads["v"]),
        "txt": 0.5 * (forward.grads["v"] + backward.grads["u"]),
    }
    return LossValue(value, grads, {"contrastive": value})


def _euclidean(x, y):
    diff = x - y
    dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    # d dist / d x; zero where the points coincide
    safe = np.where(dist > 0.0, dist, 1.0)
    grad_x = np.where(dist[:, None] > 0.0, diff / safe[:, None], 0.0)
    return dist, grad_x, -grad_x


def _cosine_distance(x, y):
    x_unit, x_norm = normalize_with_norms(x)
    y_unit, y_norm = normalize_with_norms(y)
    cos = np.einsum("ij,ij->i", x_unit, y_unit)
    grad_x = -normalize_backward(y_unit, x_unit, x_norm)
    grad_y = -normalize_backward(x_unit, y_unit, y_norm)
    return 1.0 - cos, grad_x, grad_y


def triplet_loss(a, p, n, margin: float, metric: str = "euclidean") -> LossValue:
    """Mean hinge max(D(a,p) - D(a,n) + margin, 0); inactive at zero slack."""
    a, p = _paired(a, p, ("anchor", "positive"))
    _, n = _paired(a, n, ("anchor", "negative"))
    if metric not in TRIPLET_METRICS:
        raise ConfigurationError(f"unknown triplet metric '{metric}'")
    distance = _euclidean if metric == "euclidean" else _cosine_distance

    d_pos, dpos_da, dpos_dp = distance(a, p)
    d_neg, dneg_da, dneg_dn = distance(a, n)
    slack = d_pos - d_neg + margin
    active = (slack > 0.0).astype(np.float64)[:, None] / a.shape[0]

    value = _finite(np.mean(np.maximum(slack, 0.0)), "triplet loss")
    grads = {
        "anchor": active * (dpos_da - dneg_da),
        "positive": active * dpos_dp,
        "negative": -active * dneg_dn,
    }
    return LossValue(value, grads, {"triplet": value})


def arc_margin_loss(
    emb, labels: Sequence[int], class_weights, scale: float, margin: float
) -> LossValue:
    """Additive angular margin softmax cross-entropy.

    The target logit is s*cos(theta + m) while theta + m stays within pi and
    s*(cos(theta) - m*sin(m)) beyond it, keeping the logit monotone in theta.
    """
    emb = as_matrix(emb, "embeddings")
    weights = as_matrix(class_weights, "class_weights")
    if emb.shape[1] != weights.shape[1]:
        raise DimMismatchError("embeddings and class weights differ in width")
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    batch, classes = emb.shape[0], weights.shape[0]
    if labels.shape[0] != batch:
        raise DimMismatchError("one label is required per embedding row")
    if batch < 1:
        raise DimMismatchError("batch must contain at least one row")
    if labels.min() < 0 or labels.max() >= classes:
        raise LabelOutOfRangeError(f"labels must lie in [0, {classes})")

    e_unit, e_norm = normalize_with_norms(emb)
    w_unit, w_norm = normalize_with_norms(weights)
    raw_cos = e_unit @ w_unit.T
    cos = np.clip(raw_cos, -1.0 + COS_CLIP, 1.0 - COS_CLIP)
    rows = np.arange(batch)

    cos_y = cos[rows, labels]
    theta = np.arccos(cos_y)
    inside = cos_y > np.cos(np.pi - margin)
    phi = np.where(inside, np.cos(theta + margin), cos_y - margin * np.sin(margin))
    dphi = np.where(inside, np.sin(theta + margin) / np.sin(theta), 1.0)

    logits = scale * cos
    logits[rows, labels] = scale * phi
    value = np.mean(logsumexp_rows(logits) - logits[rows, labels])

    dlogits = softmax_rows(logits)
    dlogits[rows, labels] -= 1.0
    dcos = scale * dlogits / batch
    dcos[rows, labels] *= dphi
    dcos[raw_cos != cos] = 0.0

    grads = {
        "embeddings": normalize_backward(dcos @ w_unit, e_unit, e_norm),
        CLASS_WEIGHTS_KEY: normalize_backward(dcos.T @ e_unit, w_unit, w_norm),
    }
    value = _finite(value, "arc margin loss")
    return LossValue(value, grads, {"arc_margin": value})


def _drift_terms(snapshot, x, out, normalizer):
    """Sum of per-row drift divided by ``normalizer``, and its output gradient."""
    diff = out - forward_vision(snapshot.params, x)
    per_row = np.einsum("ij,ij->i", diff, diff)
    return per_row.sum() / normalizer, 2.0 * diff / normalizer, per_row


def similarity_loss(params: EncoderParams, snapshot: EncoderSnapshot, x) -> LossValue:
    """Mean squared L2 drift of the unnormalized embeddings from the snapshot."""
    out, cache = forward_with_cache(params, x)
    value, grad_out, _ = _drift_terms(snapshot, x, out, out.shape[0])
    value = _finite(value, "similarity loss")
    grads = backward_vision(params, cache, grad_out)
    return LossValue(value, grads, {"similarity": value, "mean_drift": value})


def classification_objective(
    params: EncoderParams,
    table: CaptionTable,
    snapshot: EncoderSnapshot,
    batch,
    hyper: LossHyper,
) -> LossValue:
    """CLIP loss between images and their captions plus alpha-weighted drift."""
    images = as_matrix(batch.images, "images")
    size = images.shape[0]
    if size < 1:
        raise DimMismatchError("batch must contain at least one row")
    out, cache = forward_with_cache(params, images)
    rows = table.rows_for(batch.captions)
    txt = table.embeddings[rows]

    clip = clip_symmetric_loss(out, txt, hyper.tau)
    mean_drift, drift_grad, _ = _drift_terms(snapshot, images, out, size)
    value = clip.value + hyper.alpha * mean_drift

    grad_out = clip.grads["img"] + hyper.alpha * drift_grad
    grads = backward_vision(params, cache, grad_out)
    caption_grad = np.zeros_like(table.embeddings)
    np.add.at(caption_grad, rows, clip.grads["txt"])
    terms = {"contrastive": clip.value, "mean_drift": float(mean_drift)}

    if hyper.text_alpha > 0 and snapshot.captions is not None:
        frozen_rows = snapshot.captions.rows_for(batch.captions)
        frozen = snapshot.captions.embeddings[frozen_rows]
        text_diff = txt - frozen
        text_drift = np.einsum("ij,ij->i", text_diff, text_diff).mean()
        value += hyper.text_alpha * text_drift
        np.add.at(caption_grad, rows, hyper.text_alpha * 2.0 * text_diff / size)
        terms["text_drift"] = float(text_drift)

    grads[CAPTIONS_KEY] = caption_grad
    return LossValue(_finite(value, "classification objective"), grads, terms)


def check_distinct_identities(identity_ids) -> None:
    ids = np.asarray(identity_ids).reshape(-1)
    if np.unique(ids).size != ids.size:
        raise DuplicateIdentityError("identities within a pair batch must be distinct")


def pairwise_objective(
    params: EncoderParams, snapshot: EncoderSnapshot, batch, hyper: LossHyper
) -> LossValue:
    """CLIP loss between the two views plus alpha-weighted drift of both views."""
    u, v = _paired(batch.u, batch.v, ("u", "v"))
    check_distinct_identities(batch.identity_ids)
    size = u.shape[0]
    if len(batch.identity_ids) != size:
        raise DimMismatchError("one identity id is required per pair")

    x = np.vstack([u, v])
    out, cache = forward_with_cache(params, x)
    clip = clip_symmetric_loss(out[:size], out[size:], hyper.tau)
    drift_sum, drift_grad, per_row = _drift_terms(snapshot, x, out, size)
    value = clip.value + hyper.alpha * drift_sum

    grad_out = np.vstack([clip.grads["img"], clip.grads["txt"]])
    grads = backward_vision(params, cache, grad_out + hyper.alpha * drift_grad)
    terms = {
        "contrastive": clip.value,
        "similarity": float(drift_sum),
        "mean_drift": float(per_row.mean()),
    }
    return LossValue(_finite(value, "pairwise objective"), grads, terms)


def arc_margin_objective(
    params: EncoderParams,
    snapshot: EncoderSnapshot,
    class_weights,
    x,
    labels,
    hyper: LossHyper,
    pairs: Optional[int] = None,
) -> LossValue:
    """Arc-margin loss on encoder outputs plus alpha-weighted drift.

    With ``pairs`` set, ``x`` stacks the U and V views and the drift sum is
    divided by the number of pairs, matching the pairwise objective.
    """
    x = as_matrix(x, "x")
    out, cache = forward_with_cache(params, x)
    arc = arc_margin_loss(
        out, labels, class_weights, hyper.arc_scale, hyper.arc_margin
    )
    normalizer = pairs if pairs is not None else x.shape[0]
    drift_sum, drift_grad, per_row = _drift_terms(snapshot, x, out, normalizer)
    value = arc.value + hyper.alpha * drift_sum

    grad_out = arc.grads["embeddings"] + hyper.alpha * drift_grad
    grads = backward_vision(params, cache, grad_out)
    grads[CLASS_WEIGHTS_KEY] = arc.grads[CLASS_WEIGHTS_KEY]
    terms = {
        "contrastive": arc.value,
        "similarity": float(drift_sum),
        "mean_drift": float(per_row.mean()),
    }
    return LossValue(_finite(value, "arc margin objective"), grads, terms)
