from simtune.models.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from simtune.models.encoder import (
    CaptionTable,
    EncoderParams,
    EncoderSnapshot,
    drift,
    forward_text,
    forward_vision,
    snapshot_of,
)

__all__ = [
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "CaptionTable",
    "EncoderParams",
    "EncoderSnapshot",
    "drift",
    "forward_text",
    "forward_vision",
    "snapshot_of",
]
