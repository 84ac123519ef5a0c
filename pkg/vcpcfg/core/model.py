"""The full set of trainable parameters and the per-sentence forward pass."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Mapping, Optional, Sequence

import numpy as np

from vcpcfg.core.autodiff import Tape, TapeValue
from vcpcfg.core.chart import ParseTree, SpanMarginals, inside, map_parse, span_marginals
from vcpcfg.core.encoders import (Posterior, SpanEncoderParams, VariationalEncoderParams, encode_posterior,
                                  init_span_encoder, init_variational_encoder, kl_gaussian, sample_z)
from vcpcfg.core.grammar import GrammarParams, RuleProbs, compute_rule_probs, init_params
from vcpcfg.core.matching import ImageProjection
from vcpcfg.core.params import ParamGroup
from vcpcfg.errors import DataError
from vcpcfg.utils.config import EncoderConfig, GrammarTopology, RunConfig, build_config


@dataclass
class ModelParams(ParamGroup):
    """Parameter groups named ``grammar``, ``posterior``, ``span`` and ``image``."""

    grammar: GrammarParams
    posterior: VariationalEncoderParams
    span: SpanEncoderParams
    image: Optional[ImageProjection] = None

    @classmethod
    def init(cls, topology: GrammarTopology, encoders: EncoderConfig, seed: int,
             with_image: bool = True) -> "ModelParams":
        # one sub-seed per group
        seeds = np.random.SeedSequence(seed).generate_state(4)
        return cls(
            grammar=init_params(topology, int(seeds[0])),
            posterior=init_variational_encoder(encoders, int(seeds[1])),
            span=init_span_encoder(encoders, int(seeds[2])),
            image=ImageProjection.init(encoders.image_dim, encoders.joint_dim, int(seeds[3])) if with_image else None,
        )

    def load_named(self, values: Mapping[str, np.ndarray]) -> "ModelParams":
        missing = sorted(set(self.as_dict()) - set(values))
        if missing:
            raise DataError(f"checkpoint is missing parameter(s): {', '.join(missing[:5])}")
        return self.load(values)

    @classmethod
    def restore(cls, values: Mapping[str, np.ndarray], metadata: Mapping[str, object]) -> "ModelParams":
        """Rebuild the parameter structure a checkpoint was trained with and fill it from ``values``."""
        try:
            vocab_size, image_dim = int(metadata["vocab_size"]), int(metadata["image_dim"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"checkpoint metadata lacks model sizes: {e}") from e
        saved = build_config(RunConfig, {k: v for k, v in metadata.items() if k in RunConfig.model_fields})
        with_image = any(name.startswith("image.") for name in values)
        template = cls.init(saved.topology(vocab_size), saved.encoder_config(vocab_size, image_dim),
                            saved.seed, with_image=with_image)
        return template.load_named(values)

    def arrays(self) -> Dict[str, np.ndarray]:
        return {name: np.asarray(value, dtype=np.float64) for name, value in self.named()}


@dataclass
class SentenceState:
    """Everything computed for one sentence on a tape."""

    sentence: np.ndarray
    posterior: Posterior
    z: TapeValue
    rules: RuleProbs
    log_likelihood: TapeValue
    kl: TapeValue
    marginals: Optional[SpanMarginals] = None


def forward_sentence(params: ModelParams, sentence: Sequence[int], noise: np.ndarray,
                     with_marginals: bool = False) -> SentenceState:
    """
    Encode, sample z, build the rule tables and run the chart for one sentence.

    ``params`` must be lifted onto a tape. With ``with_marginals`` the
    marginals are kept differentiable and the log-likelihood comes from the
    same chart.
    """
    ids = np.asarray(sentence, dtype=np.int64)
    post = encode_posterior(params.posterior, ids)
    z = sample_z(post, noise)
    rules = compute_rule_probs(params.grammar, z)
    kl = kl_gaussian(post)
    if with_marginals:
        marginals = span_marginals(rules, ids, tape=z.tape, create_graph=True)
        return SentenceState(ids, post, z, rules, marginals.log_likelihood, kl, marginals)
    _, log_likelihood = inside(rules, ids, tape=z.tape)
    return SentenceState(ids, post, z, rules, log_likelihood, kl)


def posterior_mean_rules(params: ModelParams, sentence: Sequence[int]) -> RuleProbs:
    """Rule tables at z = mean of q(z | w), computed without recording."""
    tape = Tape(recording=False)
    lifted = params.constants(tape)
    post = encode_posterior(lifted.posterior, np.asarray(sentence, dtype=np.int64))
    return compute_rule_probs(lifted.grammar, post.mu).arrays()


def parse_sentence(params: ModelParams, sentence: Sequence[int]) -> ParseTree:
    """MAP tree with z fixed to the posterior mean; images are never needed."""
    return map_parse(posterior_mean_rules(params, sentence), sentence)
