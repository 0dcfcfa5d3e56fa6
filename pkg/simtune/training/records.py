"""Run records produced by fine-tuning and their on-disk form."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from simtune.config.schemas import TrainConfig
from simtune.data.io import write_frame, write_json
from simtune.models.encoder import CaptionTable, EncoderParams

logger = logging.getLogger(__name__)

STEP_COLUMNS = ["step", "lr", "total_loss", "contrastive_loss", "mean_drift"]


@dataclass
class StepRecord:
    step: int
    lr: float
    total_loss: float
    contrastive_loss: float
    mean_drift: float


@dataclass
class RunRecord:
    config: TrainConfig
    params: EncoderParams
    captions: Optional[CaptionTable] = None
    class_weights: Optional[np.ndarray] = None
    steps: List[StepRecord] = field(default_factory=list)
    failed: bool = False
    failure: Optional[str] = None
    snapshot_fingerprint: str = ""

    def append(self, entry: StepRecord) -> None:
        if self.steps and entry.step != self.steps[-1].step + 1:
            raise ValueError(
                f"step {entry.step} does not follow {self.steps[-1].step}"
            )
        self.steps.append(entry)

    @property
    def completed_steps(self) -> int:
        return len(self.steps)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [[getattr(s, c) for c in STEP_COLUMNS] for s in self.steps],
            columns=STEP_COLUMNS,
        )

    def to_document(self) -> Dict[str, Any]:
        final = self.steps[-1] if self.steps else None
        return {
            "config": self.config.model_dump(),
            "completed_steps": self.completed_steps,
            "failed": self.failed,
            "failure": self.failure,
            "snapshot_fingerprint": self.snapshot_fingerprint,
            "final": final.__dict__ if final else None,
        }


def write_run_record(
    record: RunRecord, out_dir, manifest: Optional[Dict[str, Any]] = None
) -> Path:
    out_dir = Path(out_dir)
    write_frame(record.frame(), out_dir / "steps.csv")
    doc = record.to_document()
    if manifest is not None:
        doc["manifest"] = manifest
    write_json(doc, out_dir / "run_record.json")
    logger.info(f"Run record written to {out_dir}")
    return out_dir
