"""Fine-tuning loop: theta starts at theta_0, the snapshot stays frozen, and
each of K steps samples a batch, evaluates the task objective and takes an
AdamW step at the linearly decayed learning rate.
"""

import logging
from typing import Callable, Tuple

import numpy as np

from simtune.config.schemas import TrainConfig
from simtune.core.numeric import ParamSet, make_rng, row_l2_normalize
from simtune.errors import ConfigurationError, NonFiniteError, SimtuneError
from simtune.losses import (
    CLASS_WEIGHTS_KEY,
    LossHyper,
    LossValue,
    arc_margin_objective,
    classification_objective,
    pairwise_objective,
)
from simtune.models.checkpoint import Checkpoint
from simtune.models.encoder import (
    CAPTIONS_KEY,
    CaptionTable,
    EncoderParams,
    EncoderSnapshot,
    forward_vision,
    snapshot_of,
)
from simtune.monitoring.metrics import record_divergence, record_step
from simtune.sampler import sample_identity_batch, sample_labeled_batch
from simtune.training.optimizer import OptimizerState, adamw_step, lr_at
from simtune.training.records import RunRecord, StepRecord

logger = logging.getLogger(__name__)

Objective = Callable[[ParamSet, np.random.Generator], LossValue]


def loss_hyper(config: TrainConfig) -> LossHyper:
    return LossHyper(
        tau=config.tau,
        alpha=config.alpha,
        arc_scale=config.arc_scale,
        arc_margin=config.arc_margin,
        text_alpha=config.text_alpha,
    )


def class_centroids(params: EncoderParams, x, labels, classes) -> np.ndarray:
    """Unit-norm class centroids of unit-norm embeddings."""
    emb = row_l2_normalize(forward_vision(params, x))
    centroids = np.stack([emb[labels == c].mean(axis=0) for c in classes])
    return row_l2_normalize(centroids)


def _build_objective(
    params: EncoderParams,
    captions: CaptionTable,
    snapshot: EncoderSnapshot,
    dataset,
    config: TrainConfig,
) -> Tuple[ParamSet, Objective]:
    """Initial trainable arrays and the per-step objective over them."""
    hyper = loss_hyper(config)
    arrays = dict(params.to_dict())

    if config.loss_variant == "arc_margin":
        classes = np.unique(dataset.labels)
        arrays[CLASS_WEIGHTS_KEY] = class_centroids(
            snapshot.params, dataset.x, dataset.labels, classes
        )

        def arc_step(current: ParamSet, rng) -> LossValue:
            encoder = params.with_arrays(current)
            if config.task == "pairwise":
                batch = sample_identity_batch(dataset, config.batch_size, rng)
                x = np.vstack([batch.u, batch.v])
                ids = np.concatenate([batch.identity_ids, batch.identity_ids])
                pairs = len(batch.identity_ids)
            else:
                batch = sample_labeled_batch(dataset, config.batch_size, rng)
                x, ids, pairs = batch.images, batch.class_ids, None
            labels = np.searchsorted(classes, ids)
            return arc_margin_objective(
                encoder, snapshot, current[CLASS_WEIGHTS_KEY], x, labels, hyper, pairs
            )

        return arrays, arc_step

    if config.task == "pairwise":

        def pair_step(current: ParamSet, rng) -> LossValue:
            batch = sample_identity_batch(dataset, config.batch_size, rng)
            encoder = params.with_arrays(current)
            return pairwise_objective(encoder, snapshot, batch, hyper)

        return arrays, pair_step

    if captions is None:
        raise ConfigurationError("classification fine-tuning needs a caption table")
    arrays[CAPTIONS_KEY] = captions.embeddings.copy()

    def caption_step(current: ParamSet, rng) -> LossValue:
        batch = sample_labeled_batch(dataset, config.batch_size, rng)
        table = CaptionTable(current[CAPTIONS_KEY], captions.captions)
        return classification_objective(
            params.with_arrays(current), table, snapshot, batch, hyper
        )

    return arrays, caption_step


def run_training(pretrained: Checkpoint, dataset, config: TrainConfig) -> RunRecord:
    """Fine-tune from ``pretrained`` on ``dataset``; deterministic under seed.

    A non-finite objective or gradient aborts the run and the partial record
    is returned with ``failed`` set.
    """
    rng = make_rng(config.seed)
    snapshot = snapshot_of(pretrained.params, pretrained.captions)
    fingerprint = snapshot.fingerprint()
    params = pretrained.params.copy()

    arrays, objective = _build_objective(
        params, pretrained.captions, snapshot, dataset, config
    )
    state = OptimizerState.zeros_like(arrays)
    record = RunRecord(config=config, params=params, snapshot_fingerprint=fingerprint)
    logger.info(
        f"Fine-tuning {config.task}/{config.loss_variant}: alpha={config.alpha}, "
        f"tau={config.tau}, K={config.steps}, B={config.batch_size}"
    )

    for k in range(1, config.steps + 1):
        lr = lr_at(k, config)
        try:
            loss = objective(arrays, rng)
            arrays, state = adamw_step(arrays, loss.grads, state, lr, config)
        except NonFiniteError as e:
            record.failed = True
            record.failure = f"divergence at step {k}: {e}"
            record_divergence("finetune", config.task)
            logger.warning(f"Run aborted: {record.failure}")
            break

        record.append(
            StepRecord(
                step=k,
                lr=lr,
                total_loss=loss.value,
                contrastive_loss=loss.terms["contrastive"],
                mean_drift=loss.terms["mean_drift"],
            )
        )
        record_step("finetune", config.task, loss.value, loss.terms["mean_drift"])
        if k % config.log_every == 0 or k == config.steps:
            logger.info(
                f"step {k}/{config.steps} lr={lr:.3e} loss={loss.value:.6f} "
                f"contrastive={loss.terms['contrastive']:.6f} "
                f"drift={loss.terms['mean_drift']:.6e}"
            )

    if snapshot.fingerprint() != fingerprint:
        raise SimtuneError("frozen snapshot changed during fine-tuning")

    record.params = params.with_arrays(arrays)
    if CAPTIONS_KEY in arrays:
        names = pretrained.captions.captions
        record.captions = CaptionTable(arrays[CAPTIONS_KEY], names)
    elif pretrained.captions is not None:
        record.captions = pretrained.captions.copy()
    record.class_weights = arrays.get(CLASS_WEIGHTS_KEY)
    return record
