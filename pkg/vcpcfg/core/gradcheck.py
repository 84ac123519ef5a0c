"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

import logging
from typing import Callable, Dict, Mapping, Optional

import numpy as np

from vcpcfg.core.autodiff import Tape, TapeValue, backward
from vcpcfg.core.matching import RotationSampler
from vcpcfg.core.model import ModelParams
from vcpcfg.core.objectives import TrainingBatch, joint_loss
from vcpcfg.errors import ContractError, NumericError
from vcpcfg.utils.config import EncoderConfig, GrammarTopology, TrainConfig

logger = logging.getLogger(__name__)

ScalarFunction = Callable[[Tape, Dict[str, TapeValue]], TapeValue]


def _evaluate(function: ScalarFunction, point: Mapping[str, np.ndarray]) -> float:
    tape = Tape()
    params = {name: tape.constant(value) for name, value in point.items()}
    return float(function(tape, params).value)


def _relative_error(analytic: float, numeric: float, floor: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check_report(function: ScalarFunction, point: Mapping[str, np.ndarray], step: float = 1e-5,
                      max_coords: Optional[int] = None, seed: int = 0, floor: float = 1e-6) -> Dict[str, float]:
    """
    Worst relative error per parameter between tape gradients and central differences.

    ``function`` builds a scalar on the tape it is given from the named values it
    is given. Parameters with more than ``max_coords`` entries are checked on a
    seeded random subset of coordinates.
    """
    if step <= 0:
        raise ContractError(f"finite-difference step must be positive, got {step}")
    point = {name: np.array(value, dtype=np.float64) for name, value in point.items()}

    tape = Tape()
    params = {name: tape.param(name, value) for name, value in point.items()}
    output = function(tape, params)
    if not np.all(np.isfinite(output.value)):
        raise NumericError("function value is not finite at the base point")
    analytic = backward(tape, output)

    rng = np.random.default_rng(seed)
    report: Dict[str, float] = {}
    for name, value in point.items():
        coords = np.arange(value.size)
        if max_coords is not None and value.size > max_coords:
            coords = np.sort(rng.choice(value.size, size=max_coords, replace=False))
        worst = 0.0
        for flat in coords:
            index = np.unravel_index(int(flat), value.shape) if value.shape else ()
            shifted = dict(point)
            plus = value.copy()
            plus[index] += step
            shifted[name] = plus
            f_plus = _evaluate(function, shifted)
            minus = value.copy()
            minus[index] -= step
            shifted[name] = minus
            f_minus = _evaluate(function, shifted)
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise NumericError(f"non-finite function value when perturbing {name}{list(index)}")
            numeric = (f_plus - f_minus) / (2.0 * step)
            worst = max(worst, _relative_error(float(analytic[name][index]), numeric, floor))
        report[name] = worst
        logger.debug("[GRADCHECK] %s: worst relative error %.3e over %d coordinates", name, worst, len(coords))
    return report


def grad_check(function: ScalarFunction, point: Mapping[str, np.ndarray], step: float = 1e-5,
               max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Worst relative error over every checked coordinate of every parameter."""
    report = grad_check_report(function, point, step=step, max_coords=max_coords, seed=seed)
    return max(report.values(), default=0.0)


def group_report(report: Mapping[str, float]) -> Dict[str, float]:
    """Collapse a per-parameter report to its dotted top-level groups."""
    groups: Dict[str, float] = {}
    for name, err in report.items():
        group = name.split(".", 1)[0]
        groups[group] = max(groups.get(group, 0.0), err)
    return groups


# ─────────────────── Micro-batch scopes ───────────────────────────────────

GRADCHECK_SCOPES = {"elbo": "text-only", "matching": "grounded-no-lm", "joint": "grounded"}


def micro_batch_check(scope: str, seed: int = 0, max_coords: Optional[int] = 12,
                      floor: float = 1e-4) -> Dict[str, float]:
    """
    Worst relative error per parameter group for one objective on a seeded
    micro-batch: three sentences of length 3-5 under a grammar with three
    nonterminals and three preterminals.
    """
    if scope not in GRADCHECK_SCOPES:
        raise ContractError(f"unknown gradcheck scope '{scope}', expected one of {', '.join(GRADCHECK_SCOPES)}")
    vocab_size, z_dim, image_dim = 6, 2, 4
    topology = GrammarTopology(num_nonterminals=3, num_preterminals=3, vocab_size=vocab_size,
                               symbol_dim=4, z_dim=z_dim)
    encoders = EncoderConfig(vocab_size=vocab_size, word_dim=3, hidden_dim=3, z_dim=z_dim,
                             joint_dim=3, image_dim=image_dim, num_labels=3)
    config = TrainConfig(mode=GRADCHECK_SCOPES[scope], batch_size=3, alpha=1.0, seed=seed)

    rng = np.random.default_rng(seed)
    sentences = [rng.integers(1, vocab_size, size=int(rng.integers(3, 6))) for _ in range(3)]
    batch = TrainingBatch(sentences=sentences,
                          noises=[rng.standard_normal(z_dim) for _ in sentences],
                          images=[rng.standard_normal(image_dim) for _ in sentences] if config.grounded else None)
    template = ModelParams.init(topology, encoders, seed, with_image=config.grounded)

    def objective(tape: Tape, values: Dict[str, TapeValue]) -> TapeValue:
        params = template.map(lambda name, _: values[name])
        return joint_loss(params, batch, config, sampler=RotationSampler()).total

    report = grad_check_report(objective, template.arrays(), max_coords=max_coords, seed=seed, floor=floor)
    return group_report(report)
