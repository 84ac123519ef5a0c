"""
Sentence and span encoders.

Both are single-layer bidirectional LSTMs with zero initial states. The
variational encoder max-pools the whole sentence into q(z | w); the span
encoder mean-pools each span on its own tokens and projects it through one
affine map per nonterminal label.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from vcpcfg.core import autodiff as ad
from vcpcfg.core.autodiff import Tape, TapeValue
from vcpcfg.core.params import ParamGroup, xavier_uniform
from vcpcfg.errors import ContractError
from vcpcfg.utils.config import EncoderConfig

Array = Union[np.ndarray, TapeValue]
Span = Tuple[int, int]


@dataclass
class LSTMParams(ParamGroup):
    """One direction: gates stacked as (input, forget, candidate, output)."""

    weight: Array       # (4H, E + H)
    bias: Array         # (4H,)


@dataclass
class VariationalEncoderParams(ParamGroup):
    embed: Array        # (|V|, E)
    forward: LSTMParams
    backward: LSTMParams
    out_weight: Array   # (2 z, 2H)
    out_bias: Array     # (2 z,)


@dataclass
class SpanEncoderParams(ParamGroup):
    embed: Optional[Array]   # (|V|, E); None when borrowing the variational encoder's table
    forward: LSTMParams
    backward: LSTMParams
    label_weight: Array      # (K, J, 2H)
    label_bias: Array        # (K, J)


@dataclass
class Posterior:
    mu: TapeValue
    log_var: TapeValue


def _init_lstm(rng: np.random.Generator, input_dim: int, hidden_dim: int) -> LSTMParams:
    return LSTMParams(weight=xavier_uniform(rng, (4 * hidden_dim, input_dim + hidden_dim)),
                      bias=np.zeros(4 * hidden_dim))


def init_variational_encoder(config: EncoderConfig, seed: int) -> VariationalEncoderParams:
    rng = np.random.default_rng(seed)
    return VariationalEncoderParams(
        embed=xavier_uniform(rng, (config.vocab_size, config.word_dim)),
        forward=_init_lstm(rng, config.word_dim, config.hidden_dim),
        backward=_init_lstm(rng, config.word_dim, config.hidden_dim),
        out_weight=xavier_uniform(rng, (2 * config.z_dim, 2 * config.hidden_dim)),
        out_bias=np.zeros(2 * config.z_dim),
    )


def init_span_encoder(config: EncoderConfig, seed: int) -> SpanEncoderParams:
    rng = np.random.default_rng(seed)
    embed = None if config.share_span_embeddings else xavier_uniform(rng, (config.vocab_size, config.word_dim))
    return SpanEncoderParams(
        embed=embed,
        forward=_init_lstm(rng, config.word_dim, config.hidden_dim),
        backward=_init_lstm(rng, config.word_dim, config.hidden_dim),
        label_weight=xavier_uniform(rng, (config.num_labels, config.joint_dim, 2 * config.hidden_dim)),
        label_bias=np.zeros((config.num_labels, config.joint_dim)),
    )


def _hidden_size(params: LSTMParams) -> int:
    return int(params.bias.shape[0]) // 4


def _run_direction(params: LSTMParams, inputs: List[TapeValue], reverse: bool) -> List[TapeValue]:
    """Hidden states for a batch of equal-length rows; ``inputs[t]`` is (rows, E)."""
    tape = inputs[0].tape
    rows, hidden = inputs[0].shape[0], _hidden_size(params)
    h = tape.constant(np.zeros((rows, hidden)))
    c = tape.constant(np.zeros((rows, hidden)))
    order = range(len(inputs) - 1, -1, -1) if reverse else range(len(inputs))
    states: List[Optional[TapeValue]] = [None] * len(inputs)
    for t in order:
        gates = ad.affine(ad.concat([inputs[t], h], axis=1), params.weight, params.bias)
        i = ad.sigmoid(ad.getitem(gates, (slice(None), slice(0, hidden))))
        f = ad.sigmoid(ad.getitem(gates, (slice(None), slice(hidden, 2 * hidden))))
        g = ad.tanh(ad.getitem(gates, (slice(None), slice(2 * hidden, 3 * hidden))))
        o = ad.sigmoid(ad.getitem(gates, (slice(None), slice(3 * hidden, 4 * hidden))))
        c = ad.add(ad.mul(f, c), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        states[t] = h
        tape.count("lstm_token_steps", rows)
    return states


def _embed_rows(embed: TapeValue, tokens: np.ndarray) -> List[TapeValue]:
    """Per-position (rows, E) embeddings for a (rows, width) token matrix."""
    return [ad.getitem(embed, tokens[:, t]) for t in range(tokens.shape[1])]


def encode_posterior(params: VariationalEncoderParams, sentence: Sequence[int]) -> Posterior:
    """q(z | w): BiLSTM states max-pooled over positions, then one affine map to (mu, log_var)."""
    ids = np.asarray(sentence, dtype=np.int64).reshape(1, -1)
    if ids.size < 1:
        raise ContractError("cannot encode an empty sentence")
    inputs = _embed_rows(params.embed, ids)
    fwd = _run_direction(params.forward, inputs, reverse=False)
    bwd = _run_direction(params.backward, inputs, reverse=True)
    states = ad.concat([ad.concat([f, b], axis=1) for f, b in zip(fwd, bwd)], axis=0)
    pooled = ad.max_pool(states, axis=0)
    out = ad.affine(pooled, params.out_weight, params.out_bias)
    z_dim = out.shape[0] // 2
    return Posterior(mu=ad.getitem(out, slice(0, z_dim)), log_var=ad.getitem(out, slice(z_dim, 2 * z_dim)))


def sample_z(post: Posterior, noise: Union[np.ndarray, TapeValue]) -> TapeValue:
    """Reparameterised draw mu + exp(log_var / 2) * noise."""
    if np.shape(ad.value_of(noise)) != post.mu.shape:
        raise ContractError(f"noise shape {np.shape(ad.value_of(noise))} does not match {post.mu.shape}")
    return ad.add(post.mu, ad.mul(ad.exp(ad.mul(post.log_var, 0.5)), noise))


def kl_gaussian(post: Posterior) -> TapeValue:
    """KL(q || N(0, I)) in closed form."""
    terms = ad.sub(ad.sub(ad.add(ad.mul(post.mu, post.mu), ad.exp(post.log_var)), 1.0), post.log_var)
    return ad.mul(ad.reduce_sum(terms), 0.5)


def encode_spans(params: SpanEncoderParams, sentence: Sequence[int], spans: Sequence[Span],
                 label_posteriors: Union[np.ndarray, TapeValue], tape: Optional[Tape] = None,
                 embed: Optional[TapeValue] = None) -> TapeValue:
    """
    Label-weighted span vectors, one row per span, in the order given.

    Spans of equal width are encoded together as one batch of rows; each row
    only ever sees its own tokens. ``embed`` supplies the word table when the
    span encoder shares the variational encoder's embeddings.
    """
    table = params.embed if params.embed is not None else embed
    if table is None:
        raise ContractError("span encoder has no embedding table")
    tape = tape or table.tape
    num_labels, joint_dim, pooled_dim = params.label_weight.shape
    if not spans:
        return tape.constant(np.zeros((0, joint_dim)))
    ids = np.asarray(sentence, dtype=np.int64)
    n = ids.size
    for i, j in spans:
        if not (0 <= i < j <= n):
            raise ContractError(f"invalid span ({i}, {j}) for a sentence of length {n}")
    posteriors = ad.lift_all(tape, [label_posteriors])[0]
    if posteriors.shape != (len(spans), num_labels):
        raise ContractError(f"label posteriors have shape {posteriors.shape}, expected {(len(spans), num_labels)}")

    by_width: Dict[int, List[int]] = {}
    for idx, (i, j) in enumerate(spans):
        by_width.setdefault(j - i, []).append(idx)
    pooled_groups, order = [], []
    for width, members in sorted(by_width.items()):
        tokens = np.stack([ids[spans[m][0]: spans[m][1]] for m in members])
        inputs = _embed_rows(table, tokens)
        fwd = _run_direction(params.forward, inputs, reverse=False)
        bwd = _run_direction(params.backward, inputs, reverse=True)
        total = ad.concat([_sum_states(fwd), _sum_states(bwd)], axis=1)
        pooled_groups.append(ad.mul(total, 1.0 / width))
        order.extend(members)
    pooled = pooled_groups[0] if len(pooled_groups) == 1 else ad.concat(pooled_groups, axis=0)
    pooled = ad.getitem(pooled, np.argsort(np.asarray(order), kind="stable"))

    rows = len(spans)
    flat_weight = ad.reshape(params.label_weight, (num_labels * joint_dim, pooled_dim))
    per_label = ad.reshape(ad.affine(pooled, flat_weight), (rows, num_labels, joint_dim))
    per_label = ad.add(per_label, ad.reshape(params.label_bias, (1, num_labels, joint_dim)))
    weights = ad.reshape(posteriors, (rows, num_labels, 1))
    return ad.reduce_sum(ad.mul(per_label, weights), axis=1)


def _sum_states(states: List[TapeValue]) -> TapeValue:
    total = states[0]
    for h in states[1:]:
        total = ad.add(total, h)
    return total
