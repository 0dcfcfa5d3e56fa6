"""Small deterministic configurations, datasets and encoders shared by tests."""

from functools import lru_cache

from simtune.config.schemas import RunConfig
from simtune.data.synthetic import generate
from simtune.training.pretrain import pretrain

SMALL_RUN = {
    "seed": 3,
    "num_classes": 4,
    "held_out_classes": [3],
    "num_domains": 3,
    "input_dim": 6,
    "samples_per_class_per_domain": 8,
    "noise_sigma": 0.1,
    "domain_shift_strength": 0.5,
    "hidden_dims": [8],
    "embed_dim": 4,
    "pretrain_steps": 40,
    "pretrain_batch_size": 16,
    "pretrain_lr": 0.01,
    "task": "classification",
    "alpha": 0.0,
    "tau": 0.1,
    "lr0": 0.005,
    "steps": 30,
    "batch_size": 8,
    "retrieval_ks": [1, 2],
    "log_every": 10,
    "alphas": [0.0, 1000000.0],
    "gradcheck_instances": 5,
}

SMALL_PAIRWISE = {
    **SMALL_RUN,
    "dataset_kind": "identities",
    "task": "pairwise",
    "num_classes": 12,
    "held_out_classes": [10, 11],
    "samples_per_class_per_domain": 3,
    "batch_size": 4,
    "max_impostor_pairs": 200,
}


def small_config(pairwise: bool = False, **overrides) -> RunConfig:
    base = SMALL_PAIRWISE if pairwise else SMALL_RUN
    return RunConfig(**{**base, **overrides})


@lru_cache(maxsize=None)
def small_splits(pairwise: bool = False):
    return generate(small_config(pairwise).synthetic_spec())


@lru_cache(maxsize=None)
def small_pretrained(pairwise: bool = False):
    config = small_config(pairwise)
    return pretrain(
        small_splits(pairwise).pretrain,
        config.encoder_spec(),
        config.pretrain_config(),
    )
