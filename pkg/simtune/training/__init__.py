from simtune.training.optimizer import OptimizerState, adamw_step, lr_at
from simtune.training.pretrain import align_captions, pretrain
from simtune.training.records import RunRecord, StepRecord, write_run_record
from simtune.training.trainer import run_training

__all__ = [
    "OptimizerState",
    "adamw_step",
    "lr_at",
    "align_captions",
    "pretrain",
    "RunRecord",
    "StepRecord",
    "write_run_record",
    "run_training",
]
