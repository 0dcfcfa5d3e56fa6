"""Provenance record attached to every command's outputs."""

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional

from simtune import __version__
from simtune.data.io import write_json

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


@dataclass
class RunManifest:
    """Command, inputs, outputs and resolved config of one invocation.

    Carries no timestamps or host details so identical invocations produce
    identical manifests.
    """

    command: str
    config_path: Optional[str]
    seed: int
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    version: str = __version__

    def add_output(self, name: str, path) -> None:
        self.outputs[name] = str(path)

    def to_document(self) -> Dict[str, Any]:
        return asdict(self)


def write_manifest(manifest: RunManifest, out_dir) -> Path:
    path = write_json(manifest.to_document(), Path(out_dir) / MANIFEST_FILE)
    logger.info(
        f"{manifest.command}: seed={manifest.seed}, "
        f"inputs={manifest.inputs}, outputs={sorted(manifest.outputs)}"
    )
    return path
