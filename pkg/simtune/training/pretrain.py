"""Pretraining stage producing the reference encoder theta_0.

The encoder learns from two independently noised views of pretrain samples
(all domains, all classes) under the symmetric contrastive loss. Caption rows
are then aligned to the resulting class centroids so the pretrained model
can classify by caption similarity before any fine-tuning.
"""

import logging

import numpy as np

from simtune.config.schemas import EncoderSpec, PretrainConfig
from simtune.core.numeric import make_rng, row_l2_normalize
from simtune.errors import DivergenceDetectedError, EmptyClassError, NonFiniteError
from simtune.losses import clip_symmetric_loss
from simtune.models.checkpoint import Checkpoint
from simtune.models.encoder import (
    CaptionTable,
    EncoderParams,
    backward_vision,
    forward_vision,
    forward_with_cache,
)
from simtune.monitoring.metrics import record_divergence, record_step
from simtune.sampler import caption_for_class, sample_labeled_batch
from simtune.training.optimizer import OptimizerState, adamw_step, lr_at

logger = logging.getLogger(__name__)


def align_captions(params: EncoderParams, dataset) -> CaptionTable:
    """One unit-norm caption row per class: the centroid of its embeddings."""
    emb = row_l2_normalize(forward_vision(params, dataset.x))
    rows = []
    for c, name in enumerate(dataset.class_names):
        members = emb[dataset.labels == c]
        if members.shape[0] == 0:
            raise EmptyClassError(f"class '{name}' has no pretraining samples")
        rows.append(members.mean(axis=0))
    captions = [caption_for_class(name) for name in dataset.class_names]
    return CaptionTable(row_l2_normalize(np.stack(rows)), captions)


def pretrain(dataset, encoder_spec: EncoderSpec, config: PretrainConfig) -> Checkpoint:
    rng = make_rng(config.seed)
    params = EncoderParams.initialize(
        encoder_spec.input_dim,
        encoder_spec.hidden_dims,
        encoder_spec.embed_dim,
        rng,
        encoder_spec.activation,
    )
    arrays = params.to_dict()
    state = OptimizerState.zeros_like(arrays)
    logger.info(
        f"Pretraining on {len(dataset)} samples for {config.steps} steps "
        f"(B={config.batch_size}, view noise {config.view_noise})"
    )

    for k in range(1, config.steps + 1):
        x = sample_labeled_batch(dataset, config.batch_size, rng).images
        views = np.vstack(
            [
                x + config.view_noise * rng.standard_normal(x.shape),
                x + config.view_noise * rng.standard_normal(x.shape),
            ]
        )
        encoder = params.with_arrays(arrays)
        out, cache = forward_with_cache(encoder, views)
        size = x.shape[0]
        try:
            loss = clip_symmetric_loss(out[:size], out[size:], config.tau)
            grads = backward_vision(
                encoder, cache, np.vstack([loss.grads["img"], loss.grads["txt"]])
            )
            arrays, state = adamw_step(arrays, grads, state, lr_at(k, config), config)
        except NonFiniteError as e:
            record_divergence("pretrain", "self_supervised")
            raise DivergenceDetectedError(f"pretraining diverged at step {k}: {e}")
        record_step("pretrain", "self_supervised", loss.value, 0.0)
        if k % config.log_every == 0 or k == config.steps:
            logger.info(f"pretrain step {k}/{config.steps} loss={loss.value:.6f}")

    params = params.with_arrays(arrays)
    return Checkpoint(params=params, captions=align_captions(params, dataset))
