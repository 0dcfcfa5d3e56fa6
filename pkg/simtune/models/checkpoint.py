"""JSON checkpoints for encoder parameters, caption tables and class weights.

Floats are written with Python's shortest round-trip repr, so a save/load
cycle reproduces every float64 bit-exactly.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np

from simtune.errors import ConfigurationError, MissingInputError
from simtune.models.encoder import CaptionTable, EncoderParams, Layer

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "simtune-checkpoint/1"


@dataclass
class Checkpoint:
    params: EncoderParams
    captions: Optional[CaptionTable] = None
    class_weights: Optional[np.ndarray] = None
    manifest: Optional[Dict[str, Any]] = None


def _matrix_doc(arr: np.ndarray) -> Dict[str, Any]:
    return {"shape": list(arr.shape), "data": arr.reshape(-1).tolist()}


def _matrix_from_doc(doc: Dict[str, Any]) -> np.ndarray:
    return np.array(doc["data"], dtype=np.float64).reshape(doc["shape"])


def checkpoint_document(checkpoint: Checkpoint) -> Dict[str, Any]:
    params = checkpoint.params
    doc: Dict[str, Any] = {
        "format": CHECKPOINT_FORMAT,
        "activation": params.activation,
        "embed_dim": params.embed_dim,
        "layers": [
            {"weight": _matrix_doc(layer.weight), "bias": _matrix_doc(layer.bias)}
            for layer in params.layers
        ],
    }
    if checkpoint.captions is not None:
        doc["captions"] = {
            "names": list(checkpoint.captions.captions),
            "embeddings": _matrix_doc(checkpoint.captions.embeddings),
        }
    if checkpoint.class_weights is not None:
        doc["class_weights"] = _matrix_doc(checkpoint.class_weights)
    if checkpoint.manifest is not None:
        doc["manifest"] = checkpoint.manifest
    return doc


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(checkpoint_document(checkpoint), indent=1))
    logger.info(f"Checkpoint written to {path}")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"checkpoint {path} does not exist")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"checkpoint {path} is not valid JSON: {e}")
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a {CHECKPOINT_FORMAT} document")

    layers = [
        Layer(_matrix_from_doc(layer["weight"]), _matrix_from_doc(layer["bias"]))
        for layer in doc["layers"]
    ]
    params = EncoderParams(layers, doc["activation"], doc["embed_dim"])
    captions = None
    if "captions" in doc:
        captions = CaptionTable(
            _matrix_from_doc(doc["captions"]["embeddings"]), doc["captions"]["names"]
        )
    class_weights = None
    if "class_weights" in doc:
        class_weights = _matrix_from_doc(doc["class_weights"])
    return Checkpoint(params, captions, class_weights, doc.get("manifest"))
