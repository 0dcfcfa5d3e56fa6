"""Dense float64 helpers, seeded randomness and the finite-difference oracle."""

import logging
from typing import Callable, Dict, List, Tuple

import numpy as np

from simtune.errors import (
    DimMismatchError,
    NonFiniteEvaluationError,
    ZeroRowError,
)

logger = logging.getLogger(__name__)

ZERO_NORM = 1e-12
DEFAULT_FD_STEP = 1e-5

ParamSet = Dict[str, np.ndarray]
ParamLayout = List[Tuple[str, Tuple[int, ...]]]


def as_matrix(m, name: str = "matrix") -> np.ndarray:
    """Return ``m`` as a contiguous 2-D float64 array."""
    arr = np.ascontiguousarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimMismatchError(f"{name} must be 2-D, got shape {arr.shape}")
    return arr


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; equal seeds give bit-identical streams."""
    return np.random.Generator(np.random.Philox(int(seed) & 0xFFFFFFFFFFFFFFFF))


def row_norms(m: np.ndarray) -> np.ndarray:
    norms = np.sqrt(np.einsum("ij,ij->i", m, m))
    bad = np.flatnonzero(norms <= ZERO_NORM)
    if bad.size:
        raise ZeroRowError(f"rows {bad[:5].tolist()} have norm <= {ZERO_NORM}")
    return norms


def row_l2_normalize(m) -> np.ndarray:
    """Scale every row to unit L2 norm."""
    m = as_matrix(m)
    return m / row_norms(m)[:, None]


def normalize_with_norms(m: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    norms = row_norms(m)
    return m / norms[:, None], norms


def normalize_backward(
    grad_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray
) -> np.ndarray:
    """Pull a gradient w.r.t. ``x/|x|`` back to ``x``."""
    radial = np.einsum("ij,ij->i", grad_unit, unit)
    return (grad_unit - unit * radial[:, None]) / norms[:, None]


def pairwise_cosine(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise DimMismatchError(
            f"embedding widths differ: {a.shape[1]} vs {b.shape[1]}"
        )
    sim = row_l2_normalize(a) @ row_l2_normalize(b).T
    return np.clip(sim, -1.0, 1.0)


def logsumexp_rows(logits: np.ndarray) -> np.ndarray:
    peak = logits.max(axis=1, keepdims=True)
    return peak[:, 0] + np.log(np.exp(logits - peak).sum(axis=1))


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
    return shifted / shifted.sum(axis=1, keepdims=True)


def finite_diff_grad(
    f: Callable[[np.ndarray], float], at, h: float = DEFAULT_FD_STEP
) -> np.ndarray:
    """Central-difference gradient of a scalar function of a parameter vector."""
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"finite difference step must lie in [1e-7, 1e-3], got {h}")
    x = np.array(at, dtype=np.float64).reshape(-1)
    grad = np.empty_like(x)
    for i in range(x.size):
        original = x[i]
        x[i] = original + h
        upper = f(x.copy())
        x[i] = original - h
        lower = f(x.copy())
        x[i] = original
        if not (np.isfinite(upper) and np.isfinite(lower)):
            raise NonFiniteEvaluationError(
                f"non-finite evaluation around coordinate {i}"
            )
        grad[i] = (upper - lower) / (2.0 * h)
    return grad


def flatten_params(params: ParamSet) -> Tuple[np.ndarray, ParamLayout]:
    """Concatenate named arrays in sorted-key order."""
    layout = [(name, params[name].shape) for name in sorted(params)]
    if not layout:
        return np.zeros(0), layout
    vec = np.concatenate([params[name].reshape(-1) for name, _ in layout])
    return vec.astype(np.float64), layout


def unflatten_params(vec: np.ndarray, layout: ParamLayout) -> ParamSet:
    out: ParamSet = {}
    offset = 0
    for name, shape in layout:
        size = int(np.prod(shape)) if shape else 1
        out[name] = np.array(vec[offset : offset + size]).reshape(shape)
        offset += size
    if offset != vec.size:
        raise DimMismatchError(f"vector of size {vec.size} does not match layout")
    return out


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Vector-scaled relative error used by every gradient check."""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if analytic.shape != numeric.shape:
        raise DimMismatchError("gradient vectors differ in size")
    if analytic.size == 0:
        return 0.0
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.abs(analytic - numeric).max() / scale)
