"""CSV/JSON persistence for datasets and tabular outputs.

Floats go through ``FLOAT_FORMAT`` (17 significant digits) so reruns can be
compared byte for byte and reads reproduce the written float64 values.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd

from simtune.config.schemas import SyntheticSpec, validated
from simtune.data.synthetic import NAME_PREFIX, SPLIT_NAMES, Dataset, DatasetSplits
from simtune.errors import ConfigurationError, InvalidSpecError, MissingInputError

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"
DATASET_CSV = "dataset.csv"
DATASET_JSON = "dataset.json"


def write_frame(frame: pd.DataFrame, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
    return path


def read_frame(path) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{path} does not exist")
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise ConfigurationError(f"{path} is not a readable CSV file: {e}")


def write_json(doc: Dict[str, Any], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def read_json(path) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{path} does not exist")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigurationError(f"{path} is not valid JSON: {e}")


def dataset_frame(splits: DatasetSplits) -> pd.DataFrame:
    frames = []
    for name, data in splits.items():
        frame = pd.DataFrame(
            data.x, columns=[f"x{i}" for i in range(data.input_dim)]
        )
        frame.insert(0, "class_or_identity", data.labels)
        frame.insert(0, "domain", data.domains)
        frame.insert(0, "split", name)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)


def write_dataset(
    splits: DatasetSplits, out_dir, manifest: Optional[Dict[str, Any]] = None
) -> Path:
    out_dir = Path(out_dir)
    write_frame(dataset_frame(splits), out_dir / DATASET_CSV)
    doc: Dict[str, Any] = {"spec": splits.spec.model_dump() if splits.spec else None}
    if manifest is not None:
        doc["manifest"] = manifest
    write_json(doc, out_dir / DATASET_JSON)
    logger.info(f"Dataset written to {out_dir}")
    return out_dir


def read_dataset(data_dir) -> DatasetSplits:
    data_dir = Path(data_dir)
    doc = read_json(data_dir / DATASET_JSON)
    if not doc.get("spec"):
        raise InvalidSpecError(f"{data_dir / DATASET_JSON} has no spec echo")
    spec = validated(SyntheticSpec, doc["spec"], InvalidSpecError)
    frame = read_frame(data_dir / DATASET_CSV)

    feature_cols = [f"x{i}" for i in range(spec.input_dim)]
    missing = {"split", "domain", "class_or_identity", *feature_cols} - set(frame)
    if missing:
        raise ConfigurationError(f"dataset CSV lacks columns {sorted(missing)}")
    class_names = [f"{NAME_PREFIX[spec.kind]}_{c}" for c in range(spec.num_classes)]

    parts = {}
    for name in SPLIT_NAMES:
        rows = frame[frame["split"] == name]
        parts[name] = Dataset(
            rows[feature_cols].to_numpy(dtype=np.float64),
            rows["class_or_identity"].to_numpy(dtype=np.int64),
            rows["domain"].to_numpy(dtype=np.int64),
            class_names,
            name,
        )
    return DatasetSplits(spec=spec, **parts)


def embedding_frame(embeddings: np.ndarray, labels) -> pd.DataFrame:
    frame = pd.DataFrame(
        embeddings, columns=[f"e{i}" for i in range(embeddings.shape[1])]
    )
    frame.insert(0, "label", np.asarray(labels, dtype=np.int64))
    frame.insert(0, "id", np.arange(len(frame)))
    return frame
