"""Feedforward vision encoder, caption table and the frozen pretrained snapshot."""

import copy
import hashlib
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from simtune.core.numeric import ParamSet, as_matrix
from simtune.errors import ConfigurationError, DimMismatchError, UnknownCaptionError

logger = logging.getLogger(__name__)

VISION_PREFIX = "vision"
CAPTIONS_KEY = "captions"


def _tanh(z):
    return np.tanh(z)


def _tanh_grad(z, h):
    return 1.0 - h * h


def _relu(z):
    return np.maximum(z, 0.0)


def _relu_grad(z, h):
    return (z > 0.0).astype(np.float64)


def _identity(z):
    return z


def _identity_grad(z, h):
    return np.ones_like(z)


ACTIVATIONS = {
    "tanh": (_tanh, _tanh_grad),
    "relu": (_relu, _relu_grad),
    "identity": (_identity, _identity_grad),
}


@dataclass
class Layer:
    weight: np.ndarray  # (d_out, d_in)
    bias: np.ndarray  # (d_out,)

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.weight.shape[0]


@dataclass
class EncoderParams:
    """Trainable parameters of the vision encoder f_theta."""

    layers: List[Layer]
    activation: str = "tanh"
    embed_dim: int = field(default=0)

    def __post_init__(self):
        if not self.layers:
            raise ConfigurationError("encoder needs at least one layer")
        if self.activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation '{self.activation}'")
        self.layers = [
            Layer(
                np.array(layer.weight, dtype=np.float64, ndmin=2),
                np.array(layer.bias, dtype=np.float64).reshape(-1),
            )
            for layer in self.layers
        ]
        for k, layer in enumerate(self.layers):
            if layer.bias.shape[0] != layer.d_out:
                raise DimMismatchError(f"layer {k}: bias does not match weight rows")
            if k and layer.d_in != self.layers[k - 1].d_out:
                raise DimMismatchError(
                    f"layer {k} expects {layer.d_in} inputs, "
                    f"previous layer gives {self.layers[k - 1].d_out}"
                )
        if not self.embed_dim:
            self.embed_dim = self.layers[-1].d_out
        if self.layers[-1].d_out != self.embed_dim:
            raise DimMismatchError("final layer width must equal embed_dim")

    @property
    def input_dim(self) -> int:
        return self.layers[0].d_in

    @classmethod
    def initialize(
        cls,
        input_dim: int,
        hidden_dims: Sequence[int],
        embed_dim: int,
        rng: np.random.Generator,
        activation: str = "tanh",
    ) -> "EncoderParams":
        """Gaussian fan-in initialization with zero biases."""
        widths = [input_dim, *hidden_dims, embed_dim]
        layers = [
            Layer(
                rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in)),
                np.zeros(d_out),
            )
            for d_in, d_out in zip(widths[:-1], widths[1:])
        ]
        return cls(layers=layers, activation=activation, embed_dim=embed_dim)

    def to_dict(self) -> ParamSet:
        out: ParamSet = {}
        for k, layer in enumerate(self.layers):
            out[f"{VISION_PREFIX}.{k}.weight"] = layer.weight
            out[f"{VISION_PREFIX}.{k}.bias"] = layer.bias
        return out

    def with_arrays(self, arrays: ParamSet) -> "EncoderParams":
        """New parameters taking vision arrays from ``arrays``."""
        layers = [
            Layer(
                arrays[f"{VISION_PREFIX}.{k}.weight"],
                arrays[f"{VISION_PREFIX}.{k}.bias"],
            )
            for k in range(len(self.layers))
        ]
        return EncoderParams(layers, self.activation, self.embed_dim)

    def copy(self) -> "EncoderParams":
        return copy.deepcopy(self)


@dataclass
class CaptionTable:
    """Trainable caption embeddings standing in for the text encoder g."""

    embeddings: np.ndarray
    captions: List[str]
    caption_index: Dict[str, int] = field(init=False)

    def __post_init__(self):
        self.embeddings = as_matrix(self.embeddings, "caption embeddings").copy()
        if self.embeddings.shape[0] != len(self.captions):
            raise DimMismatchError("one embedding row is required per caption")
        self.caption_index = {}
        for row, caption in enumerate(self.captions):
            if caption in self.caption_index:
                raise ConfigurationError(f"duplicate caption '{caption}'")
            self.caption_index[caption] = row

    @property
    def embed_dim(self) -> int:
        return self.embeddings.shape[1]

    def rows_for(self, captions: Sequence[str]) -> np.ndarray:
        try:
            return np.array([self.caption_index[c] for c in captions], dtype=np.int64)
        except KeyError as e:
            raise UnknownCaptionError(f"caption {e.args[0]!r} is not in the table")

    def copy(self) -> "CaptionTable":
        return CaptionTable(self.embeddings.copy(), list(self.captions))


class EncoderSnapshot:
    """Frozen copy of the pretrained encoder (and optionally its caption table)."""

    def __init__(self, params: EncoderParams, captions: Optional[CaptionTable] = None):
        self._params = params.copy()
        for layer in self._params.layers:
            layer.weight.setflags(write=False)
            layer.bias.setflags(write=False)
        self._captions = captions.copy() if captions is not None else None
        if self._captions is not None:
            self._captions.embeddings.setflags(write=False)

    @property
    def params(self) -> EncoderParams:
        return self._params

    @property
    def captions(self) -> Optional[CaptionTable]:
        return self._captions

    def fingerprint(self) -> str:
        digest = hashlib.sha256(self._params.activation.encode())
        for layer in self._params.layers:
            for arr in (layer.weight, layer.bias):
                digest.update(str(arr.shape).encode())
                digest.update(arr.tobytes())
        if self._captions is not None:
            digest.update(self._captions.embeddings.tobytes())
        return digest.hexdigest()


def snapshot_of(
    params: EncoderParams, captions: Optional[CaptionTable] = None
) -> EncoderSnapshot:
    return EncoderSnapshot(params, captions)


def _check_input(params: EncoderParams, x) -> np.ndarray:
    x = as_matrix(x, "x")
    if x.shape[1] != params.input_dim:
        raise DimMismatchError(
            f"input has {x.shape[1]} columns, encoder expects {params.input_dim}"
        )
    return x


def forward_with_cache(
    params: EncoderParams, x
) -> Tuple[np.ndarray, List[Tuple[np.ndarray, np.ndarray, np.ndarray]]]:
    """Forward pass keeping (input, pre-activation, output) per layer."""
    act, _ = ACTIVATIONS[params.activation]
    h = _check_input(params, x)
    cache = []
    last = len(params.layers) - 1
    for k, layer in enumerate(params.layers):
        z = h @ layer.weight.T + layer.bias
        out = z if k == last else act(z)
        cache.append((h, z, out))
        h = out
    return h, cache


def forward_vision(params: EncoderParams, x) -> np.ndarray:
    out, _ = forward_with_cache(params, x)
    return out


def backward_vision(
    params: EncoderParams, cache, grad_out: np.ndarray
) -> ParamSet:
    """Gradients of a scalar w.r.t. every vision parameter given dL/d(output)."""
    _, act_grad = ACTIVATIONS[params.activation]
    grads: ParamSet = {}
    g = grad_out
    last = len(params.layers) - 1
    for k in range(last, -1, -1):
        h_in, z, out = cache[k]
        if k != last:
            g = g * act_grad(z, out)
        grads[f"{VISION_PREFIX}.{k}.weight"] = g.T @ h_in
        grads[f"{VISION_PREFIX}.{k}.bias"] = g.sum(axis=0)
        g = g @ params.layers[k].weight
    return grads


def forward_text(table: CaptionTable, captions: Sequence[str]) -> np.ndarray:
    return table.embeddings[table.rows_for(captions)].copy()


def drift(params: EncoderParams, snapshot: EncoderSnapshot, x) -> np.ndarray:
    """Per-row squared L2 distance between fine-tuned and frozen embeddings."""
    diff = forward_vision(params, x) - forward_vision(snapshot.params, x)
    return np.einsum("ij,ij->i", diff, diff)
