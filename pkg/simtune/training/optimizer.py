"""AdamW with decoupled weight decay and a linear learning-rate decay.

    m_t = b1 * m_{t-1} + (1 - b1) * g_t
    v_t = b2 * v_{t-1} + (1 - b2) * g_t^2
    theta_t = theta_{t-1} - lr * (m_hat / (sqrt(v_hat) + eps) + wd * theta_{t-1})
"""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from simtune.core.numeric import ParamSet
from simtune.errors import (
    ConfigurationError,
    DimMismatchError,
    NonFiniteGradientError,
    StepOutOfRangeError,
)

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    m: ParamSet
    v: ParamSet
    t: int = 0

    @classmethod
    def zeros_like(cls, params: ParamSet) -> "OptimizerState":
        return cls(
            m={name: np.zeros_like(arr) for name, arr in params.items()},
            v={name: np.zeros_like(arr) for name, arr in params.items()},
        )


def lr_at(step: int, config) -> float:
    """Linearly decayed learning rate lr0 * (1 - k / K)."""
    total = config.steps
    if not 0 <= step <= total:
        raise StepOutOfRangeError(f"step {step} outside [0, {total}]")
    return config.lr0 * (1.0 - step / total)


def adamw_step(
    params: ParamSet, grads: ParamSet, state: OptimizerState, lr: float, config
) -> Tuple[ParamSet, OptimizerState]:
    """One AdamW update; returns new parameter arrays and a new state."""
    if lr < 0:
        raise ConfigurationError(f"learning rate must be >= 0, got {lr}")
    if set(params) != set(grads) or set(params) != set(state.m):
        raise DimMismatchError(
            "parameter, gradient and optimizer-state groups differ: "
            f"{sorted(set(params) ^ set(grads))}"
        )
    beta1, beta2 = config.adam_beta1, config.adam_beta2
    eps, decay = config.adam_eps, config.weight_decay
    t = state.t + 1
    correction1 = 1.0 - beta1**t
    correction2 = 1.0 - beta2**t

    new_params: ParamSet = {}
    new_m: ParamSet = {}
    new_v: ParamSet = {}
    for name, theta in params.items():
        g = grads[name]
        if g.shape != theta.shape or state.m[name].shape != theta.shape:
            raise DimMismatchError(
                f"{name}: gradient {g.shape} vs parameter {theta.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for {name}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * g * g
        m_hat = m / correction1
        v_hat = v / correction2
        new_params[name] = theta - lr * (m_hat / (np.sqrt(v_hat) + eps) + decay * theta)
        new_m[name] = m
        new_v[name] = v
    return new_params, OptimizerState(new_m, new_v, t)
