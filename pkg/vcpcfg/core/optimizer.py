"""Adam with bias correction, applied to a flat name -> array parameter map."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, Mapping, Tuple

import numpy as np

from vcpcfg.core.autodiff import GradientMap
from vcpcfg.errors import ContractError, NumericError
from vcpcfg.utils.config import TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    first: Dict[str, np.ndarray] = field(default_factory=dict)
    second: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Mapping[str, np.ndarray]) -> "AdamState":
        return cls(first={k: np.zeros_like(v) for k, v in params.items()},
                   second={k: np.zeros_like(v) for k, v in params.items()})


def check_finite(grads: Mapping[str, np.ndarray]) -> None:
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter '{name}'")


def clip_by_global_norm(grads: GradientMap, max_norm: float) -> GradientMap:
    norm = grads.global_norm()
    if norm <= max_norm:
        return grads
    logger.debug("[OPTIM] clipping gradient norm %.4g to %.4g", norm, max_norm)
    return grads.scaled(max_norm / norm)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray], state: AdamState,
              t: int, config: TrainConfig) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    One bias-corrected Adam update at step ``t`` (1-based).

    Parameters without a gradient entry are left unchanged. Returns new
    dictionaries; the inputs are not modified.
    """
    if t < 1:
        raise ContractError(f"Adam step index must be >= 1, got {t}")
    check_finite(grads)
    if config.clip_norm is not None:
        grads = clip_by_global_norm(GradientMap(grads), config.clip_norm)

    b1, b2 = config.beta1, config.beta2
    new_params: Dict[str, np.ndarray] = {}
    first: Dict[str, np.ndarray] = {}
    second: Dict[str, np.ndarray] = {}
    for name, value in params.items():
        m = state.first.get(name, np.zeros_like(value))
        v = state.second.get(name, np.zeros_like(value))
        g = grads.get(name)
        if g is None:
            new_params[name], first[name], second[name] = value, m, v
            continue
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_params[name] = value - config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)
        first[name], second[name] = m, v
    return new_params, AdamState(first=first, second=second, step=t)
