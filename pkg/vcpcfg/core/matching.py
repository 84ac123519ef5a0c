"""
Image-text matching over the tree distribution.

Each selected span c of a caption is scored against its image v with a
two-sided triplet hinge. The expected matching loss weights every span's hinge
by its span marginal, so the grounding signal reaches the grammar through
the marginals and the label posteriors.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from vcpcfg.core import autodiff as ad
from vcpcfg.core.autodiff import TapeValue
from vcpcfg.core.chart import ParseTree, Span, SpanMarginals, span_mu, weighted_span_sum
from vcpcfg.core.interfaces import BaseNegativeSampler
from vcpcfg.core.params import ParamGroup, xavier_uniform
from vcpcfg.errors import ContractError

logger = logging.getLogger(__name__)

NORM_FLOOR = 1e-12
Array = Union[np.ndarray, TapeValue]


@dataclass
class ImageProjection(ParamGroup):
    """Trainable affine map from raw image features into the joint space."""

    weight: Array   # (J, D_img)
    bias: Array     # (J,)

    @classmethod
    def init(cls, image_dim: int, joint_dim: int, seed: int) -> "ImageProjection":
        rng = np.random.default_rng(seed)
        return cls(weight=xavier_uniform(rng, (joint_dim, image_dim)), bias=np.zeros(joint_dim))

    def project(self, raw: Array) -> TapeValue:
        raw = ad.lift_all(self.weight.tape, [raw])[0]
        if raw.shape != (self.weight.shape[1],):
            raise ContractError(f"image feature has shape {raw.shape}, expected ({self.weight.shape[1]},)")
        return ad.affine(raw, self.weight, self.bias)


@dataclass
class MatchingExample:
    """One caption of a batch with everything the matching loss needs."""

    sentence: Sequence[int]
    image: TapeValue                 # projected, (J,)
    marginals: SpanMarginals
    spans: List[Span]                # selected spans, shortest first
    span_vectors: TapeValue          # (len(spans), J)


@dataclass
class MatchingBatch:
    examples: List[MatchingExample]
    margin: float = 0.2
    alpha: float = 0.001
    negative_mode: str = "single"
    sampler: Optional[BaseNegativeSampler] = None
    _sampler: BaseNegativeSampler = field(init=False, repr=False)

    def __post_init__(self):
        if self.margin <= 0:
            raise ContractError(f"margin must be positive, got {self.margin}")
        if self.negative_mode not in ("single", "all"):
            raise ContractError(f"unknown negative mode '{self.negative_mode}'")
        self._sampler = self.sampler or RotationSampler()

    def __len__(self) -> int:
        return len(self.examples)


class RotationSampler(BaseNegativeSampler):
    """The next example in the batch, wrapping around."""

    def pick(self, batch_size: int, i: int) -> int:
        return (i + 1) % batch_size


class RandomSampler(BaseNegativeSampler):
    """A uniformly chosen other example; seeded."""

    def __init__(self, seed: int = 0):
        self.rng = np.random.default_rng(seed)

    def pick(self, batch_size: int, i: int) -> int:
        r = int(self.rng.integers(0, batch_size - 1))
        return r if r < i else r + 1


def make_sampler(name: str, seed: int = 0) -> BaseNegativeSampler:
    if name == "rotation":
        return RotationSampler()
    if name == "random":
        return RandomSampler(seed)
    raise ContractError(f"unknown negative sampler '{name}'")


def cosine(a: TapeValue, b: TapeValue) -> TapeValue:
    """Cosine similarity; 0 when either vector has (near) zero norm."""
    return ad.cosine(a, b, eps=NORM_FLOOR)


def cosine_rows(rows: TapeValue, v: TapeValue) -> TapeValue:
    """Cosine of every row of ``rows`` with the vector ``v``."""
    if rows.ndim != 2 or rows.shape[1] != v.shape[0]:
        raise ContractError(f"cosine of rows {rows.shape} with a vector of shape {v.shape}")
    if np.sqrt(np.sum(v.value ** 2)) < NORM_FLOOR:
        return rows.tape.constant(np.zeros(rows.shape[0]))
    row_norm = np.sqrt(np.sum(rows.value ** 2, axis=1))
    dead = (row_norm < NORM_FLOOR).astype(np.float64)
    dots = ad.mul(ad.matmul(rows, v), 1.0 - dead)
    norms = ad.mul(ad.sqrt(ad.add(ad.reduce_sum(ad.mul(rows, rows), axis=1), dead)),
                   ad.sqrt(ad.reduce_sum(ad.mul(v, v))))
    return ad.div(dots, norms)


def hinge_loss(c: TapeValue, v: TapeValue, c_neg: TapeValue, v_neg: TapeValue, margin: float) -> TapeValue:
    """[m(c', v) - m(c, v) + margin]_+ + [m(c, v') - m(c, v) + margin]_+"""
    if margin <= 0:
        raise ContractError(f"margin must be positive, got {margin}")
    positive = cosine(c, v)
    return ad.add(ad.hinge(ad.add(ad.sub(cosine(c_neg, v), positive), margin)),
                  ad.hinge(ad.add(ad.sub(cosine(c, v_neg), positive), margin)))


def span_budget(n: int) -> int:
    return math.ceil(n * (n - 1) / 4)


def select_spans(n: int) -> List[Span]:
    """The ceil(n(n-1)/4) shortest width >= 2 spans, ordered by (width, start)."""
    if n < 2:
        raise ContractError(f"no spans to select for a sentence of length {n}")
    ordered = [(i, i + w) for w in range(2, n + 1) for i in range(n - w + 1)]
    return ordered[: span_budget(n)]


def negative_span_index(example: MatchingExample) -> int:
    """Row of the example's selected span with the largest marginal (first on ties)."""
    return int(np.argmax(span_mu(example.marginals, example.spans).value))


def select_negatives(batch: MatchingBatch, i: int) -> Tuple[int, int]:
    """Sources of the negative span and the negative image for example ``i``."""
    if len(batch) < 2:
        raise ContractError("the contrastive term needs at least two examples per batch")
    j = batch._sampler.pick(len(batch), i)
    return j, j


def _span_hinges(example: MatchingExample, c_neg: TapeValue, v_neg: TapeValue, margin: float) -> TapeValue:
    """Hinge losses of every selected span of ``example`` against one pair of negatives."""
    positive = cosine_rows(example.span_vectors, example.image)
    neg_span = cosine(c_neg, example.image)
    neg_image = cosine_rows(example.span_vectors, v_neg)
    return ad.add(ad.hinge(ad.add(ad.sub(neg_span, positive), margin)),
                  ad.hinge(ad.add(ad.sub(neg_image, positive), margin)))


def span_hinge_losses(batch: MatchingBatch, i: int) -> TapeValue:
    """(len(spans),) hinge losses of example ``i``, single negative or averaged over the batch."""
    example = batch.examples[i]
    if batch.negative_mode == "single":
        c_src, v_src = select_negatives(batch, i)
        sources = [(c_src, v_src)]
    else:
        if len(batch) < 2:
            raise ContractError("the contrastive term needs at least two examples per batch")
        sources = [(j, j) for j in range(len(batch)) if j != i]
    total = None
    for c_src, v_src in sources:
        neg = batch.examples[c_src]
        c_neg = ad.getitem(neg.span_vectors, negative_span_index(neg))
        h = _span_hinges(example, c_neg, batch.examples[v_src].image, batch.margin)
        total = h if total is None else ad.add(total, h)
    return total if len(sources) == 1 else ad.mul(total, 1.0 / len(sources))


def expected_matching_loss(batch: MatchingBatch) -> TapeValue:
    """Sum over examples and selected spans of mu(c) * h(c, v)."""
    if not batch.examples:
        raise ContractError("empty matching batch")
    total = None
    for i, example in enumerate(batch.examples):
        loss = weighted_span_sum(example.marginals, example.spans, span_hinge_losses(batch, i))
        total = loss if total is None else ad.add(total, loss)
    return total


def point_estimate_loss(batch: MatchingBatch, trees: Sequence[ParseTree]) -> TapeValue:
    """Sum over examples of the hinge losses of the selected spans that the example's tree contains."""
    if len(trees) != len(batch):
        raise ContractError(f"{len(trees)} trees for a batch of {len(batch)}")
    total = None
    for i, (example, tree) in enumerate(zip(batch.examples, trees)):
        mask = np.array([1.0 if span in tree.spans else 0.0 for span in example.spans])
        h = span_hinge_losses(batch, i)
        loss = ad.reduce_sum(ad.mul(h, mask)) if example.spans else h.tape.constant(0.0)
        total = loss if total is None else ad.add(total, loss)
    return total
