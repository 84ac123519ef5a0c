"""Training objectives: the single-sample ELBO and the joint text + grounding loss."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from vcpcfg.core import autodiff as ad
from vcpcfg.core.autodiff import TapeValue
from vcpcfg.core.chart import inside, label_posteriors, span_marginals
from vcpcfg.core.encoders import Posterior, encode_spans, kl_gaussian
from vcpcfg.core.grammar import RuleProbs, compute_rule_probs
from vcpcfg.core.interfaces import BaseNegativeSampler
from vcpcfg.core.matching import MatchingBatch, MatchingExample, expected_matching_loss, select_spans
from vcpcfg.core.model import ModelParams, SentenceState, forward_sentence
from vcpcfg.errors import ConfigError, ContractError
from vcpcfg.utils.config import TrainConfig


@dataclass
class TrainingBatch:
    """Sentences of one optimiser step with their reparameterisation noise and raw image features."""

    sentences: List[np.ndarray]
    noises: List[np.ndarray]
    images: Optional[List[np.ndarray]] = None

    def __post_init__(self):
        if len(self.noises) != len(self.sentences):
            raise ContractError("one noise vector per sentence is required")
        if self.images is not None and len(self.images) != len(self.sentences):
            raise ContractError("one image per sentence is required")


@dataclass
class LossTerms:
    total: TapeValue
    elbo: float = 0.0
    matching: float = 0.0
    log_likelihood: float = 0.0
    kl: float = 0.0
    tokens: int = 0
    states: List[SentenceState] = field(default_factory=list, repr=False)


def elbo_from_terms(log_likelihood: TapeValue, kl: TapeValue) -> TapeValue:
    return ad.neg(ad.sub(log_likelihood, kl))


def elbo(sentence: Sequence[int], z: TapeValue, rules: RuleProbs, post: Posterior) -> TapeValue:
    """Negated single-sample ELBO: -(log p(w | z) - KL(q(z | w) || p(z)))."""
    _, log_likelihood = inside(rules, sentence, tape=z.tape)
    return elbo_from_terms(log_likelihood, kl_gaussian(post))


def _matching_example(params: ModelParams, state: SentenceState, image: np.ndarray,
                      config: TrainConfig) -> MatchingExample:
    tape = state.z.tape
    marginals = state.marginals
    if config.contrastive_z == "mean":
        mean_rules = compute_rule_probs(params.grammar, state.posterior.mu)
        marginals = span_marginals(mean_rules, state.sentence, tape=tape, create_graph=True)
    spans = select_spans(len(state.sentence))
    posteriors = label_posteriors(marginals, spans)
    vectors = encode_spans(params.span, state.sentence, spans, posteriors, tape=tape,
                           embed=params.posterior.embed)
    return MatchingExample(sentence=state.sentence, image=params.image.project(image),
                           marginals=marginals, spans=spans, span_vectors=vectors)


def joint_loss(params: ModelParams, batch: TrainingBatch, config: TrainConfig,
               sampler: Optional[BaseNegativeSampler] = None) -> LossTerms:
    """
    Batch objective on the tape ``params`` were lifted onto.

    text-only: sum of ELBO losses; grounded: that plus alpha times the expected
    matching loss; grounded-no-lm: the expected matching loss alone.
    """
    grounded = config.mode != "text-only"
    if grounded and (batch.images is None or params.image is None):
        raise ConfigError(f"mode '{config.mode}' needs image features")
    if not batch.sentences:
        raise ContractError("empty training batch")

    states = [forward_sentence(params, s, noise, with_marginals=grounded)
              for s, noise in zip(batch.sentences, batch.noises)]
    elbos = [elbo_from_terms(st.log_likelihood, st.kl) for st in states]
    elbo_total = elbos[0]
    for term in elbos[1:]:
        elbo_total = ad.add(elbo_total, term)

    terms = LossTerms(total=elbo_total, elbo=float(elbo_total.value),
                      log_likelihood=float(sum(st.log_likelihood.value for st in states)),
                      kl=float(sum(st.kl.value for st in states)),
                      tokens=int(sum(len(s) for s in batch.sentences)), states=states)
    if not grounded:
        return terms

    examples = [_matching_example(params, st, image, config) for st, image in zip(states, batch.images)]
    matching = expected_matching_loss(MatchingBatch(examples, margin=config.margin, alpha=config.alpha,
                                                    negative_mode=config.negative_mode, sampler=sampler))
    terms.matching = float(matching.value)
    if config.mode == "grounded-no-lm":
        terms.total = matching
    else:
        terms.total = ad.add(elbo_total, ad.mul(matching, config.alpha))
    return terms