"""
Trainer

Coordinates the training loop: length filter -> shuffled batches -> joint loss
and gradients -> Adam -> per-epoch validation -> early stopping. The best
checkpoint (lowest validation criterion) is what ``run`` returns.
"""
from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from vcpcfg.core.autodiff import GradientMap, Tape, backward
from vcpcfg.core.checkpoint import Checkpoint
from vcpcfg.core.interfaces import BaseNegativeSampler, BaseValidationCriterion
from vcpcfg.core.matching import make_sampler
from vcpcfg.core.model import ModelParams
from vcpcfg.core.objectives import LossTerms, TrainingBatch, joint_loss
from vcpcfg.core.optimizer import AdamState, adam_step
from vcpcfg.data.corpus import GroundedExample
from vcpcfg.data.features import FeatureTable
from vcpcfg.errors import ConfigError, DataError
from vcpcfg.utils.config import EncoderConfig, GrammarTopology, TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class TrainingCorpus:
    """Encoded examples (``ids`` set) and, for grounded modes, their feature tables."""

    train: List[GroundedExample]
    valid: List[GroundedExample]
    features: Optional[FeatureTable] = None
    valid_features: Optional[FeatureTable] = None


def length_filter(examples: Sequence[GroundedExample], max_length: int) -> Tuple[List[GroundedExample], int]:
    kept = [ex for ex in examples if 2 <= len(ex) <= max_length]
    return kept, len(examples) - len(kept)


def _batches(order: np.ndarray, batch_size: int, min_size: int) -> List[np.ndarray]:
    """Consecutive slices of ``order``; a short tail is merged into the previous batch."""
    batches = [order[i: i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < min_size:
        tail = batches.pop()
        batches[-1] = np.concatenate([batches[-1], tail])
    return batches


def _images(examples: Sequence[GroundedExample], table: Optional[FeatureTable]) -> Optional[List[np.ndarray]]:
    if table is None:
        return None
    return [table.row(ex.image_row) for ex in examples]


def batch_loss_and_grads(params: ModelParams, batch: TrainingBatch, config: TrainConfig,
                         sampler: Optional[BaseNegativeSampler] = None,
                         pool: Optional[ThreadPoolExecutor] = None) -> Tuple[GradientMap, Dict[str, float]]:
    """
    Gradients of the batch objective.

    Text-only batches use one tape per sentence (optionally on ``pool``) and
    sum the gradients in sentence order; grounded batches share one tape
    because negatives cross sentences.
    """
    if config.grounded:
        tape = Tape()
        terms = joint_loss(params.lift(tape), batch, config, sampler=sampler)
        return backward(tape, terms.total), _summary([terms])

    def one(k: int) -> Tuple[GradientMap, LossTerms]:
        tape = Tape()
        single = TrainingBatch([batch.sentences[k]], [batch.noises[k]])
        terms = joint_loss(params.lift(tape), single, config)
        return backward(tape, terms.total), terms

    indices = range(len(batch.sentences))
    results = list(pool.map(one, indices)) if pool is not None else [one(k) for k in indices]
    grads = GradientMap()
    for g, _ in results:
        grads.accumulate(g)
    return grads, _summary([terms for _, terms in results])


def _summary(all_terms: Sequence[LossTerms]) -> Dict[str, float]:
    return {
        "loss": float(sum(float(t.total.value) for t in all_terms)),
        "elbo": float(sum(t.elbo for t in all_terms)),
        "matching": float(sum(t.matching for t in all_terms)),
        "log_likelihood": float(sum(t.log_likelihood for t in all_terms)),
        "kl": float(sum(t.kl for t in all_terms)),
        "tokens": int(sum(t.tokens for t in all_terms)),
    }


# ─────────────────── Validation criteria ──────────────────────────────────

class PerplexityCriterion(BaseValidationCriterion):
    """exp(-sum(log p(w) bound) / tokens) with the single-sample ELBO as the bound."""

    name = "perplexity"

    def __init__(self, config: TrainConfig, z_dim: int):
        self.config = config.model_copy(update={"mode": "text-only"})
        self.z_dim = z_dim

    def evaluate(self, model: ModelParams, examples: Sequence[GroundedExample]) -> float:
        rng = np.random.default_rng([self.config.seed, 1])
        elbo_total, tokens = 0.0, 0
        for ex in examples:
            tape = Tape(recording=False)
            batch = TrainingBatch([ex.ids], [rng.standard_normal(self.z_dim)])
            terms = joint_loss(model.constants(tape), batch, self.config)
            elbo_total += terms.elbo
            tokens += terms.tokens
        return float(np.exp(elbo_total / max(tokens, 1)))


class MatchingCriterion(BaseValidationCriterion):
    """Expected matching loss over validation batches; fixed noise."""

    name = "matching"

    def __init__(self, config: TrainConfig, z_dim: int, features: FeatureTable):
        self.config = config.model_copy(update={"mode": "grounded-no-lm"})
        self.z_dim = z_dim
        self.features = features

    def evaluate(self, model: ModelParams, examples: Sequence[GroundedExample]) -> float:
        rng = np.random.default_rng([self.config.seed, 2])
        total = 0.0
        for idx in _batches(np.arange(len(examples)), self.config.batch_size, 2):
            if len(idx) < 2:
                continue
            chosen = [examples[i] for i in idx]
            batch = TrainingBatch([ex.ids for ex in chosen], [rng.standard_normal(self.z_dim) for _ in chosen],
                                  _images(chosen, self.features))
            tape = Tape()
            terms = joint_loss(model.constants(tape), batch, self.config, sampler=make_sampler("rotation"))
            total += terms.matching
        return total


# ─────────────────── Orchestrator ─────────────────────────────────────────

class Trainer:
    def __init__(self, config: TrainConfig, topology: GrammarTopology, encoders: EncoderConfig,
                 corpus: TrainingCorpus, epoch_log: Optional[Path] = None,
                 criterion: Optional[BaseValidationCriterion] = None,
                 sampler: Optional[BaseNegativeSampler] = None,
                 metadata: Optional[Dict[str, Any]] = None, vocab: Optional[List[str]] = None):
        if config.grounded and (corpus.features is None or corpus.valid_features is None):
            raise ConfigError(f"mode '{config.mode}' needs training and validation features")
        self.config = config
        self.topology = topology
        self.encoders = encoders
        self.corpus = corpus
        self.epoch_log = epoch_log
        self.criterion = criterion or self._default_criterion()
        self.sampler = sampler or make_sampler(config.negative_sampler, config.seed)
        self.metadata = metadata or {}
        self.vocab = vocab or []

    def _default_criterion(self) -> BaseValidationCriterion:
        if self.config.grounded:
            return MatchingCriterion(self.config, self.topology.z_dim, self.corpus.valid_features)
        return PerplexityCriterion(self.config, self.topology.z_dim)

    def _write_log(self, entry: Dict[str, Any]) -> None:
        if self.epoch_log is None:
            return
        with open(self.epoch_log, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")

    def _validate(self, params: ModelParams, valid: Sequence[GroundedExample]) -> Dict[str, float]:
        out = {"valid_criterion": self.criterion.evaluate(params, valid)}
        if self.config.grounded:
            out["valid_perplexity"] = PerplexityCriterion(self.config, self.topology.z_dim).evaluate(params, valid)
        return out

    def run(self) -> Checkpoint:
        cfg = self.config
        train, dropped = length_filter(self.corpus.train, cfg.max_sentence_length)
        valid, valid_dropped = length_filter(self.corpus.valid, cfg.max_sentence_length)
        logger.info("[TRAIN] %d training sentences (%d dropped by length), %d validation (%d dropped)",
                    len(train), dropped, len(valid), valid_dropped)
        if not train:
            raise DataError("no training sentences left after the length filter")
        if not valid:
            raise DataError("no validation sentences left after the length filter")
        if cfg.grounded and len(train) < 2:
            raise DataError("grounded training needs at least two sentences")
        if self.epoch_log is not None:
            Path(self.epoch_log).parent.mkdir(parents=True, exist_ok=True)
            Path(self.epoch_log).write_text("", encoding="utf-8")

        params = ModelParams.init(self.topology, self.encoders, cfg.seed, with_image=cfg.grounded)
        state = AdamState.zeros_like(params.arrays())
        rng = np.random.default_rng(cfg.seed)
        history: List[Dict[str, Any]] = []

        start = time.time()
        entry = {"epoch": 0, "dropped": dropped, **self._validate(params, valid)}
        if cfg.record_wall_time:
            entry["wall_time"] = round(time.time() - start, 3)
        history.append(entry)
        self._write_log(entry)
        logger.info("[TRAIN] epoch 0: %s=%.4f", self.criterion.name, entry["valid_criterion"])
        best = self._snapshot(params, state, 0, history)
        best_value, stale = entry["valid_criterion"], 0

        pool = ThreadPoolExecutor(max_workers=cfg.threads) if cfg.threads > 1 and not cfg.grounded else None
        try:
            for epoch in range(1, cfg.max_epochs + 1):
                totals = {"loss": 0.0, "elbo": 0.0, "matching": 0.0, "log_likelihood": 0.0, "kl": 0.0, "tokens": 0}
                order = rng.permutation(len(train))
                for idx in _batches(order, cfg.batch_size, 2 if cfg.grounded else 1):
                    chosen = [train[i] for i in idx]
                    batch = TrainingBatch([ex.ids for ex in chosen],
                                          [rng.standard_normal(self.topology.z_dim) for _ in chosen],
                                          _images(chosen, self.corpus.features) if cfg.grounded else None)
                    grads, summary = batch_loss_and_grads(params, batch, cfg, self.sampler, pool)
                    new_values, state = adam_step(params.arrays(), grads, state, state.step + 1, cfg)
                    params = params.load(new_values)
                    for key in totals:
                        totals[key] += summary[key]

                entry = {"epoch": epoch, "dropped": dropped,
                         **{f"train_{k}": v for k, v in totals.items()}, **self._validate(params, valid)}
                if cfg.record_wall_time:
                    entry["wall_time"] = round(time.time() - start, 3)
                history.append(entry)
                self._write_log(entry)
                logger.info("[TRAIN] epoch %d: loss=%.4f %s=%.4f", epoch, totals["loss"],
                            self.criterion.name, entry["valid_criterion"])

                if entry["valid_criterion"] < best_value:
                    best_value, stale = entry["valid_criterion"], 0
                    best = self._snapshot(params, state, epoch, history)
                else:
                    stale += 1
                    if stale >= cfg.patience:
                        logger.info("[TRAIN] early stop after epoch %d (best %.4f)", epoch, best_value)
                        break
        finally:
            if pool is not None:
                pool.shutdown()
        best.history = list(history)
        return best

    def _snapshot(self, params: ModelParams, state: AdamState, epoch: int,
                  history: List[Dict[str, Any]]) -> Checkpoint:
        return Checkpoint(params={k: v.copy() for k, v in params.arrays().items()},
                          optimizer=AdamState(first=dict(state.first), second=dict(state.second), step=state.step),
                          epoch=epoch, history=list(history), config=dict(self.metadata), vocab=list(self.vocab))


def train(corpus: TrainingCorpus, config: TrainConfig, topology: GrammarTopology, encoders: EncoderConfig,
          epoch_log: Optional[Path] = None, **kwargs) -> Checkpoint:
    """Run a Trainer with default criterion and sampler; returns the best checkpoint."""
    if not corpus.train:
        raise DataError("empty training corpus")
    return Trainer(config, topology, encoders, corpus, epoch_log=epoch_log, **kwargs).run()
