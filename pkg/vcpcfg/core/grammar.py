"""
Compound PCFG parameterisation.

A latent vector z is mapped to three families of normalised rule tables:
  root      S -> A            log-softmax over A in N
  binary    A -> B C          log-softmax over (B, C) in (N u P)^2
  emission  T -> w            log-softmax over w in the vocabulary
Child symbols are indexed with nonterminals first: [0, |N|) then [|N|, |N|+|P|).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from vcpcfg.core import autodiff as ad
from vcpcfg.core.autodiff import Tape, TapeValue
from vcpcfg.core.params import ParamGroup, xavier_uniform
from vcpcfg.errors import ContractError, NumericError
from vcpcfg.utils.config import GrammarTopology

Array = Union[np.ndarray, TapeValue]


@dataclass
class ResidualParams(ParamGroup):
    """Two residual tanh layers mapping a (symbol_dim + z_dim) vector to the same size."""

    w1: Array
    b1: Array
    w2: Array
    b2: Array


@dataclass
class GrammarParams(ParamGroup):
    start_emb: Array        # (D,)
    nonterm_emb: Array      # (|N|, D)
    preterm_emb: Array      # (|P|, D)
    root_out: Array         # (|N|, D + z)
    rule_out: Array         # ((|N|+|P|)^2, D + z)
    term_out: Array         # (|V|, D + z)
    f_s: ResidualParams
    f_t: ResidualParams


@dataclass
class RuleProbs:
    """Log rule probabilities for one sentence (one z)."""

    root: Array             # (|N|,)
    binary: Array           # (|N|, |S|, |S|)
    emission: Array         # (|P|, |V|)

    @property
    def num_nonterminals(self) -> int:
        return int(self.root.shape[0])

    @property
    def num_preterminals(self) -> int:
        return int(self.emission.shape[0])

    @property
    def vocab_size(self) -> int:
        return int(self.emission.shape[1])

    def arrays(self) -> "RuleProbs":
        """A copy holding plain numpy arrays."""
        return RuleProbs(ad.value_of(self.root), ad.value_of(self.binary), ad.value_of(self.emission))

    def on_tape(self, tape: Tape) -> "RuleProbs":
        """Lift array-valued tables onto ``tape`` as constants; TapeValues pass through."""
        def lift(x):
            return x if isinstance(x, TapeValue) else tape.constant(x)
        return RuleProbs(lift(self.root), lift(self.binary), lift(self.emission))

    def max_normalization_error(self) -> float:
        t = self.arrays()
        errs = [abs(np.exp(t.root).sum() - 1.0),
                np.abs(np.exp(t.binary).reshape(t.binary.shape[0], -1).sum(axis=1) - 1.0).max(),
                np.abs(np.exp(t.emission).sum(axis=1) - 1.0).max()]
        return float(max(errs))

    @classmethod
    def from_probabilities(cls, root: np.ndarray, binary: np.ndarray, emission: np.ndarray) -> "RuleProbs":
        """Build tables from linear-space probabilities (zeros become -inf)."""
        with np.errstate(divide="ignore"):
            return cls(np.log(np.asarray(root, dtype=np.float64)),
                       np.log(np.asarray(binary, dtype=np.float64)),
                       np.log(np.asarray(emission, dtype=np.float64)))


def init_params(topology: GrammarTopology, seed: int) -> GrammarParams:
    """Xavier-uniform weights, zero biases; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    d, z = topology.symbol_dim, topology.z_dim
    h = d + z
    s = topology.num_symbols

    def residual() -> ResidualParams:
        return ResidualParams(w1=xavier_uniform(rng, (h, h)), b1=np.zeros(h),
                              w2=xavier_uniform(rng, (h, h)), b2=np.zeros(h))

    return GrammarParams(
        start_emb=xavier_uniform(rng, (d,)),
        nonterm_emb=xavier_uniform(rng, (topology.num_nonterminals, d)),
        preterm_emb=xavier_uniform(rng, (topology.num_preterminals, d)),
        root_out=xavier_uniform(rng, (topology.num_nonterminals, h)),
        rule_out=xavier_uniform(rng, (s * s, h)),
        term_out=xavier_uniform(rng, (topology.vocab_size, h)),
        f_s=residual(),
        f_t=residual(),
    )


def _residual(params: ResidualParams, x: TapeValue) -> TapeValue:
    """x + tanh(W1 x + b1), then the same with W2, b2; rows of x are independent inputs."""
    h = ad.add(x, ad.tanh(ad.affine(x, params.w1, params.b1)))
    return ad.add(h, ad.tanh(ad.affine(h, params.w2, params.b2)))


def _with_z(embeddings: TapeValue, z: TapeValue) -> TapeValue:
    rows = embeddings.shape[0]
    tiled = ad.broadcast_to(ad.reshape(z, (1, z.shape[0])), (rows, z.shape[0]))
    return ad.concat([embeddings, tiled], axis=1)


def _check_finite(logits: TapeValue, family: str) -> None:
    if not np.all(np.isfinite(logits.value)):
        raise NumericError(f"non-finite {family} logits")


def compute_rule_probs(params: GrammarParams, z: TapeValue, z_dim: Optional[int] = None) -> RuleProbs:
    """
    Normalised log rule tables for latent ``z``.

    ``params`` must already be on the tape (``GrammarParams.lift``). Binary
    logits use the raw concatenation [w_A; z]; root and emission logits go
    through the residual encoders f_s and f_t.
    """
    expected = params.root_out.shape[1] - params.start_emb.shape[0]
    if z.ndim != 1 or z.shape[0] != (z_dim or expected):
        raise ContractError(f"z must have length {z_dim or expected}, got shape {z.shape}")
    num_nt = params.nonterm_emb.shape[0]
    num_sym = num_nt + params.preterm_emb.shape[0]

    start = _with_z(ad.reshape(params.start_emb, (1, params.start_emb.shape[0])), z)
    root_logits = ad.reshape(ad.matmul(_residual(params.f_s, start), ad.transpose(params.root_out)), (num_nt,))
    _check_finite(root_logits, "root")

    binary_logits = ad.matmul(_with_z(params.nonterm_emb, z), ad.transpose(params.rule_out))
    _check_finite(binary_logits, "binary")

    emission_logits = ad.matmul(_residual(params.f_t, _with_z(params.preterm_emb, z)), ad.transpose(params.term_out))
    _check_finite(emission_logits, "emission")

    return RuleProbs(
        root=ad.log_softmax(root_logits, axis=0),
        binary=ad.reshape(ad.log_softmax(binary_logits, axis=1), (num_nt, num_sym, num_sym)),
        emission=ad.log_softmax(emission_logits, axis=1),
    )
