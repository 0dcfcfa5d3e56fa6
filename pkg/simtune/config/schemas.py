"""Validated configuration models.

A run is described by one flat JSON document (``RunConfig``); the typed
sub-configurations consumed by the data generator, the pretraining stage and
the trainer are derived from it.
"""

import logging
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from simtune.errors import ConfigurationError, InvalidSpecError

logger = logging.getLogger(__name__)

T = TypeVar("T", bound=BaseModel)

Task = Literal["classification", "pairwise"]
LossVariant = Literal["clip_contrastive", "arc_margin"]
DatasetKind = Literal["classification", "identities"]

REPORTED_ALPHA_SWEEP = [0.1, 1.0, 100.0, 1000.0]
DESK_FAR_TARGETS = [1e-1, 5e-2, 1e-2]


def validated(model: Type[T], data: Dict[str, Any], error=ConfigurationError) -> T:
    """Build ``model`` from ``data``, converting pydantic errors to ours."""
    try:
        return model.model_validate(data)
    except ValidationError as e:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model.__name__}: {err['msg']}"
            for err in e.errors()
        )
        raise error(f"invalid {model.__name__}: {details}") from e


class SyntheticSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: DatasetKind = "classification"
    num_classes: int = Field(10, ge=2)
    held_out_classes: List[int] = Field(default_factory=lambda: [8, 9])
    num_domains: int = Field(3, ge=2)
    input_dim: int = Field(16, ge=1)
    samples_per_class_per_domain: int = Field(20, ge=1)
    noise_sigma: float = Field(0.1, ge=0.0)
    domain_shift_strength: float = Field(0.5, ge=0.0)
    ood_shift_strength: Optional[float] = Field(None, ge=0.0)
    seed: int = Field(0, ge=0, lt=2**64)

    @model_validator(mode="after")
    def _check_classes(self):
        held = self.held_out_classes
        if len(set(held)) != len(held):
            raise ValueError("held_out_classes contains duplicates")
        if any(c < 0 or c >= self.num_classes for c in held):
            raise ValueError("held_out_classes must lie in [0, num_classes)")
        if len(held) >= self.num_classes:
            raise ValueError("at least one class must remain for fine-tuning")
        return self

    @property
    def ood_strength(self) -> float:
        if self.ood_shift_strength is None:
            return self.domain_shift_strength
        return self.ood_shift_strength


class EncoderSpec(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    input_dim: int = Field(16, ge=1)
    hidden_dims: List[int] = Field(default_factory=lambda: [32])
    embed_dim: int = Field(16, ge=1)
    activation: Literal["tanh", "relu", "identity"] = "tanh"


class TrainConfig(BaseModel):
    """Fine-tuning hyper-parameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    alpha: float = Field(0.0, ge=0.0)
    tau: float = Field(0.01, gt=0.0)
    lr0: float = Field(1e-3, ge=0.0)
    steps: int = Field(1500, ge=1)
    batch_size: int = Field(32, ge=2)
    weight_decay: float = Field(0.01, ge=0.0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    seed: int = Field(0, ge=0, lt=2**64)
    task: Task = "classification"
    loss_variant: LossVariant = "clip_contrastive"
    arc_scale: float = Field(64.0, gt=0.0)
    arc_margin: float = Field(0.5, ge=0.0)
    text_alpha: float = Field(0.0, ge=0.0)
    log_every: int = Field(50, ge=1)


class PretrainConfig(BaseModel):
    """Self-supervised stage that produces the frozen reference encoder."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    steps: int = Field(500, ge=1)
    batch_size: int = Field(64, ge=2)
    lr0: float = Field(3e-3, ge=0.0)
    tau: float = Field(0.1, gt=0.0)
    view_noise: float = Field(0.3, ge=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    adam_beta1: float = Field(0.9, ge=0.0, lt=1.0)
    adam_beta2: float = Field(0.999, ge=0.0, lt=1.0)
    adam_eps: float = Field(1e-8, gt=0.0)
    seed: int = Field(0, ge=0, lt=2**64)
    log_every: int = Field(100, ge=1)


# Named presets carrying the reported settings; reported_lr applies only with
# use_reported_lr.
PRESETS: Dict[str, Dict[str, Any]] = {
    "classification": {
        "task": "classification",
        "alpha": 100.0,
        "tau": 0.01,
        "batch_size": 128,
        "reported_lr": 5e-5,
    },
    "pairwise": {
        "task": "pairwise",
        "dataset_kind": "identities",
        "alpha": 1.0,
        "tau": 0.1,
        "batch_size": 256,
        "reported_lr": 1e-5,
    },
}


class RunConfig(BaseModel):
    """Flat run document; one file fully determines a run."""

    model_config = ConfigDict(extra="forbid")

    seed: int = Field(0, ge=0, lt=2**64)
    preset: Optional[Literal["classification", "pairwise"]] = None
    use_reported_lr: bool = False

    # data
    dataset_kind: DatasetKind = "classification"
    num_classes: int = 10
    held_out_classes: List[int] = Field(default_factory=lambda: [8, 9])
    num_domains: int = 3
    input_dim: int = 16
    samples_per_class_per_domain: int = 20
    noise_sigma: float = 0.1
    domain_shift_strength: float = 0.5
    ood_shift_strength: Optional[float] = None

    # encoder
    hidden_dims: List[int] = Field(default_factory=lambda: [32])
    embed_dim: int = 16
    activation: Literal["tanh", "relu", "identity"] = "tanh"

    # pretraining
    pretrain_steps: int = 500
    pretrain_batch_size: int = 64
    pretrain_lr: float = 3e-3
    pretrain_tau: float = 0.1
    view_noise: float = 0.3

    # fine-tuning
    task: Task = "classification"
    loss_variant: LossVariant = "clip_contrastive"
    alpha: float = 0.0
    tau: float = 0.01
    lr0: float = 1e-3
    steps: int = 1500
    batch_size: int = 32
    weight_decay: float = 0.01
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    arc_scale: float = 64.0
    arc_margin: float = 0.5
    text_alpha: float = 0.0
    log_every: int = 50

    # evaluation
    retrieval_ks: List[int] = Field(default_factory=lambda: [1, 5, 10])
    far_targets: List[float] = Field(default_factory=lambda: list(DESK_FAR_TARGETS))
    max_impostor_pairs: Optional[int] = Field(None, ge=1)

    # gradient checks
    gradcheck_instances: int = 100
    gradcheck_step: float = 1e-5
    gradcheck_tolerance: float = 1e-4

    # sweeps
    alphas: List[float] = Field(default_factory=lambda: [0.0, *REPORTED_ALPHA_SWEEP])
    sweep_seeds: List[int] = Field(default_factory=list)
    id_tolerance: float = Field(0.10, ge=0.0)
    max_workers: int = Field(1, ge=1)

    @model_validator(mode="after")
    def _check_task_matches_data(self):
        expected = "identities" if self.task == "pairwise" else "classification"
        if self.dataset_kind != expected:
            raise ValueError(
                f"task '{self.task}' needs dataset_kind '{expected}', "
                f"got '{self.dataset_kind}'"
            )
        return self

    def synthetic_spec(self) -> SyntheticSpec:
        return validated(
            SyntheticSpec,
            {
                "kind": self.dataset_kind,
                "num_classes": self.num_classes,
                "held_out_classes": self.held_out_classes,
                "num_domains": self.num_domains,
                "input_dim": self.input_dim,
                "samples_per_class_per_domain": self.samples_per_class_per_domain,
                "noise_sigma": self.noise_sigma,
                "domain_shift_strength": self.domain_shift_strength,
                "ood_shift_strength": self.ood_shift_strength,
                "seed": self.seed,
            },
            InvalidSpecError,
        )

    def encoder_spec(self) -> EncoderSpec:
        return validated(
            EncoderSpec,
            {
                "input_dim": self.input_dim,
                "hidden_dims": self.hidden_dims,
                "embed_dim": self.embed_dim,
                "activation": self.activation,
            },
        )

    def pretrain_config(self) -> PretrainConfig:
        return validated(
            PretrainConfig,
            {
                "steps": self.pretrain_steps,
                "batch_size": self.pretrain_batch_size,
                "lr0": self.pretrain_lr,
                "tau": self.pretrain_tau,
                "view_noise": self.view_noise,
                "weight_decay": self.weight_decay,
                "adam_beta1": self.adam_beta1,
                "adam_beta2": self.adam_beta2,
                "adam_eps": self.adam_eps,
                "seed": self.seed,
                "log_every": self.log_every,
            },
        )

    def train_config(self, **overrides) -> TrainConfig:
        fields = {name: getattr(self, name) for name in TrainConfig.model_fields}
        fields.update(overrides)
        return validated(TrainConfig, fields)
