"""
Exact chart inference over a compound PCFG.

The inside pass is written with tape operations so the log-likelihood is
differentiable. Span marginals are gradients of log Z with respect to a zero
per-span, per-label potential added to every width >= 2 cell. MAP parsing and
ancestral sampling work on plain arrays.

Preterminal tags are always summed out: trees are labelled on width >= 2 spans
only, and a tree's score is log p(tree, words | z) with tags marginalised.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import logsumexp as np_logsumexp

from vcpcfg.core import autodiff as ad
from vcpcfg.core.autodiff import Tape, TapeValue
from vcpcfg.core.grammar import RuleProbs
from vcpcfg.errors import ContractError, DataError, NoParseError

logger = logging.getLogger(__name__)

Span = Tuple[int, int]

POSTERIOR_FLOOR = 1e-12


@dataclass(frozen=True)
class ParseTree:
    """A binary bracketing of ``n`` words; width-1 spans are implicit."""

    n: int
    spans: FrozenSet[Span]
    labels: Mapping[Span, int] = field(default_factory=dict)
    score: Optional[float] = None

    @classmethod
    def build(cls, n: int, spans: Iterable[Span], labels: Optional[Mapping[Span, int]] = None,
              score: Optional[float] = None) -> "ParseTree":
        return cls(n=n, spans=frozenset((int(i), int(j)) for i, j in spans if j - i >= 2),
                   labels=dict(labels or {}), score=score)

    def sorted_spans(self) -> List[Span]:
        return sorted(self.spans, key=lambda s: (s[1] - s[0], s[0]))

    def split_of(self, span: Span) -> int:
        """Split point k such that both (i, k) and (k, j) are in the tree."""
        i, j = span
        for k in range(i + 1, j):
            left_ok = k - i == 1 or (i, k) in self.spans
            right_ok = j - k == 1 or (k, j) in self.spans
            if left_ok and right_ok:
                return k
        raise ContractError(f"span {span} has no split in the tree")

    def is_valid(self) -> bool:
        if self.n < 2 or (0, self.n) not in self.spans or len(self.spans) != self.n - 1:
            return False
        try:
            for span in self.spans:
                self.split_of(span)
        except ContractError:
            return False
        return True

    def bracketing(self) -> FrozenSet[Span]:
        return self.spans


@dataclass
class InsideChart:
    """Inside scores by width: ``cells[1]`` is (n, |P|), ``cells[w]`` for w >= 2 is (n-w+1, |N|)."""

    n: int
    cells: Dict[int, TapeValue]
    log_likelihood: TapeValue
    num_nonterminals: int

    def beta(self, i: int, j: int) -> np.ndarray:
        """Log inside vector of span (i, j): over P for width 1, over N otherwise."""
        _check_span(i, j, self.n, min_width=1)
        return self.cells[j - i].value[i]

    def as_array(self) -> np.ndarray:
        """Dense (n+1, n+1, |N|+|P|) view; symbols that cannot cover a cell are -inf."""
        num_pre = self.cells[1].shape[1]
        out = np.full((self.n + 1, self.n + 1, self.num_nonterminals + num_pre), -np.inf)
        for w, cell in self.cells.items():
            for i in range(self.n - w + 1):
                if w == 1:
                    out[i, i + 1, self.num_nonterminals:] = cell.value[i]
                else:
                    out[i, i + w, : self.num_nonterminals] = cell.value[i]
        return out


@dataclass
class SpanMarginals:
    """Posterior span probabilities; ``mu`` is (n+1, n+1) and ``labeled`` is (n+1, n+1, |N|)."""

    n: int
    mu: TapeValue
    labeled: TapeValue
    log_likelihood: TapeValue

    @property
    def num_nonterminals(self) -> int:
        return int(self.labeled.shape[2])

    def mu_of(self, span: Span) -> float:
        _check_span(span[0], span[1], self.n)
        return float(self.mu.value[span])

    def spans(self) -> List[Span]:
        return [(i, i + w) for w in range(2, self.n + 1) for i in range(self.n - w + 1)]


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _check_span(i: int, j: int, n: int, min_width: int = 2) -> None:
    if not (0 <= i < j <= n) or j - i < min_width:
        raise ContractError(f"invalid span ({i}, {j}) for a sentence of length {n}")


def _check_sentence(sentence: Sequence[int], vocab_size: int) -> np.ndarray:
    ids = np.asarray(sentence, dtype=np.int64).reshape(-1)
    if ids.size < 2:
        raise NoParseError(f"a CNF grammar has no parse for a sentence of length {ids.size}")
    if ids.min() < 0 or ids.max() >= vocab_size:
        raise DataError(f"token id out of range [0, {vocab_size})")
    return ids


def _tape_for(rules: RuleProbs) -> Tape:
    for table in (rules.root, rules.binary, rules.emission):
        if isinstance(table, TapeValue):
            return table.tape
    return Tape()


def _child_blocks(binary: TapeValue, num_nt: int) -> Dict[Tuple[bool, bool], TapeValue]:
    """Binary table split by whether each child is a preterminal."""
    nt, pt = slice(0, num_nt), slice(num_nt, None)
    return {
        (False, False): ad.getitem(binary, (slice(None), nt, nt)),
        (False, True): ad.getitem(binary, (slice(None), nt, pt)),
        (True, False): ad.getitem(binary, (slice(None), pt, nt)),
        (True, True): ad.getitem(binary, (slice(None), pt, pt)),
    }


# ---------------------------------------------------------------------------
# inside / marginals
# ---------------------------------------------------------------------------

def inside(rules: RuleProbs, sentence: Sequence[int], tape: Optional[Tape] = None,
           potentials: Optional[TapeValue] = None) -> Tuple[InsideChart, TapeValue]:
    """
    Inside pass in log space, recorded on ``tape``.

    ``potentials`` is an optional (n+1, n+1, |N|) leaf added to every width >= 2
    cell. Splits sharing a child-type pattern are batched into one broadcast
    sum; the tape counter ``rule_products`` records how many rule/child score
    combinations were formed.
    """
    ids = _check_sentence(sentence, rules.vocab_size)
    n = int(ids.size)
    tape = tape or _tape_for(rules)
    rules = rules.on_tape(tape)
    num_nt = rules.num_nonterminals
    blocks = _child_blocks(rules.binary, num_nt)

    cells: Dict[int, TapeValue] = {1: ad.transpose(ad.getitem(rules.emission, (slice(None), ids)))}
    for w in range(2, n + 1):
        m = n - w + 1
        groups: Dict[Tuple[bool, bool], List[int]] = {}
        for k in range(1, w):
            groups.setdefault((k == 1, w - k == 1), []).append(k)
        parts = []
        for key, splits in groups.items():
            left = ad.stack([ad.getitem(cells[k], slice(0, m)) for k in splits], axis=1)
            right = ad.stack([ad.getitem(cells[w - k], slice(k, k + m)) for k in splits], axis=1)
            count, d_left, d_right = len(splits), left.shape[2], right.shape[2]
            combined = ad.add(ad.add(ad.reshape(left, (m, 1, count, d_left, 1)),
                                     ad.reshape(right, (m, 1, count, 1, d_right))),
                              ad.reshape(blocks[key], (1, num_nt, 1, d_left, d_right)))
            parts.append(ad.reshape(combined, (m, num_nt, count * d_left * d_right)))
            tape.count("rule_products", m * num_nt * count * d_left * d_right)
        scores = ad.logsumexp(parts[0] if len(parts) == 1 else ad.concat(parts, axis=2), axis=2)
        if potentials is not None:
            starts = np.arange(m)
            scores = ad.add(scores, ad.getitem(potentials, (starts, starts + w)))
        cells[w] = scores

    log_z = ad.logsumexp(ad.add(rules.root, ad.getitem(cells[n], 0)), axis=0)
    return InsideChart(n=n, cells=cells, log_likelihood=log_z, num_nonterminals=num_nt), log_z


def span_marginals(rules: RuleProbs, sentence: Sequence[int], tape: Optional[Tape] = None,
                   create_graph: bool = False) -> SpanMarginals:
    """
    Span and labelled-span marginals as d log Z / d potentials.

    With ``create_graph`` the marginals stay differentiable with respect to
    whatever the rule tables depend on.
    """
    ids = _check_sentence(sentence, rules.vocab_size)
    n = int(ids.size)
    tape = tape or _tape_for(rules)
    potentials = tape.instrument(np.zeros((n + 1, n + 1, rules.num_nonterminals)))
    _, log_z = inside(rules, ids, tape=tape, potentials=potentials)
    (labeled,) = ad.grad(tape, log_z, [potentials], create_graph=create_graph)
    if not create_graph:
        labeled = tape.constant(labeled.value)
    mu = ad.reduce_sum(labeled, axis=2)
    return SpanMarginals(n=n, mu=mu, labeled=labeled, log_likelihood=log_z)


def label_posterior(marginals: SpanMarginals, span: Span) -> np.ndarray:
    """p(label | span is a constituent); uniform when the span is (numerically) never used."""
    i, j = span
    _check_span(i, j, marginals.n)
    mu = float(marginals.mu.value[i, j])
    k = marginals.num_nonterminals
    if mu < POSTERIOR_FLOOR:
        return np.full(k, 1.0 / k)
    return marginals.labeled.value[i, j] / mu


def label_posteriors(marginals: SpanMarginals, spans: Sequence[Span]) -> TapeValue:
    """(len(spans), |N|) differentiable label posteriors for a list of spans."""
    for i, j in spans:
        _check_span(i, j, marginals.n)
    tape = marginals.mu.tape
    k = marginals.num_nonterminals
    if not spans:
        return tape.constant(np.zeros((0, k)))
    rows = np.array([s[0] for s in spans])
    cols = np.array([s[1] for s in spans])
    mu = ad.getitem(marginals.mu, (rows, cols))
    labeled = ad.getitem(marginals.labeled, (rows, cols))
    unused = (mu.value < POSTERIOR_FLOOR).astype(np.float64)
    keep = 1.0 - unused
    numer = ad.add(ad.mul(labeled, keep[:, None]), (unused / k)[:, None])
    denom = ad.add(ad.mul(mu, keep), unused)
    return ad.div(numer, ad.reshape(denom, (len(spans), 1)))


def span_mu(marginals: SpanMarginals, spans: Sequence[Span]) -> TapeValue:
    """Marginals of the listed spans as a (len(spans),) tape value."""
    for i, j in spans:
        _check_span(i, j, marginals.n)
    rows = np.array([s[0] for s in spans], dtype=np.int64)
    cols = np.array([s[1] for s in spans], dtype=np.int64)
    return ad.getitem(marginals.mu, (rows, cols))


def weighted_span_sum(marginals: SpanMarginals, spans: Sequence[Span], losses: TapeValue) -> TapeValue:
    """Sum of mu(span) * losses[k] over the listed spans."""
    if not spans:
        return marginals.mu.tape.constant(0.0)
    return ad.reduce_sum(ad.mul(span_mu(marginals, spans), losses))


def expected_span_loss(marginals: SpanMarginals,
                       span_losses: Mapping[Span, Union[float, TapeValue]]) -> TapeValue:
    """Sum over keyed spans of mu(span) * loss(span)."""
    tape = marginals.mu.tape
    spans = list(span_losses)
    if not spans:
        return tape.constant(0.0)
    losses = ad.stack([ad.reshape(ad.lift_all(tape, [span_losses[s]])[0], ()) for s in spans])
    return weighted_span_sum(marginals, spans, losses)


# ---------------------------------------------------------------------------
# MAP parsing, sampling, tree scoring (plain arrays)
# ---------------------------------------------------------------------------

def _leaf_vector(tables: RuleProbs, word: int) -> np.ndarray:
    num_nt = tables.num_nonterminals
    return np.concatenate([np.full(num_nt, -np.inf), tables.emission[:, word]])


def _label_vector(num_symbols: int, label: int, score: float) -> np.ndarray:
    vec = np.full(num_symbols, -np.inf)
    vec[label] = score
    return vec


def combine(binary: np.ndarray, left: np.ndarray, right: np.ndarray) -> np.ndarray:
    """log sum_{B,C} binary[A,B,C] + left[B] + right[C] for every A."""
    return np_logsumexp(binary + left[None, :, None] + right[None, None, :], axis=(1, 2))


def map_parse(rules: RuleProbs, sentence: Sequence[int]) -> ParseTree:
    """
    Highest-scoring labelled bracketing by CYK.

    Nonterminal labels are maximised and preterminal tags summed. Ties go to
    the smallest split point, then the smallest left label, then the smallest
    right label; the root label tie goes to the smallest index.
    """
    ids = _check_sentence(sentence, rules.vocab_size)
    n = int(ids.size)
    t = rules.arrays()
    num_nt = t.num_nonterminals
    nt, pt = slice(0, num_nt), slice(num_nt, None)
    emissions = t.emission[:, ids].T

    best: Dict[Span, np.ndarray] = {}
    back: Dict[Span, np.ndarray] = {}
    for w in range(2, n + 1):
        for i in range(n - w + 1):
            j = i + w
            top = np.full(num_nt, -np.inf)
            pointer = np.zeros((num_nt, 3), dtype=np.int64)
            for k in range(i + 1, j):
                left_pre, right_pre = k - i == 1, j - k == 1
                left = emissions[i] if left_pre else best[(i, k)]
                right = emissions[k] if right_pre else best[(k, j)]
                block = t.binary[:, pt if left_pre else nt, pt if right_pre else nt]
                cand = block + left[None, :, None] + right[None, None, :]
                if left_pre:
                    cand = np_logsumexp(cand, axis=1, keepdims=True)
                if right_pre:
                    cand = np_logsumexp(cand, axis=2, keepdims=True)
                flat = cand.reshape(num_nt, -1)
                arg = np.argmax(flat, axis=1)
                value = flat[np.arange(num_nt), arg]
                better = value > top
                b, c = np.unravel_index(arg, cand.shape[1:])
                top = np.where(better, value, top)
                pointer[better] = np.stack([np.full(num_nt, k), np.where(left_pre, -1, b),
                                            np.where(right_pre, -1, c)], axis=1)[better]
            best[(i, j)] = top
            back[(i, j)] = pointer

    final = t.root + best[(0, n)]
    root_label = int(np.argmax(final))
    spans: List[Span] = []
    labels: Dict[Span, int] = {}
    stack = [((0, n), root_label)]
    while stack:
        (i, j), label = stack.pop()
        spans.append((i, j))
        labels[(i, j)] = label
        k, b, c = (int(x) for x in back[(i, j)][label])
        if k - i >= 2:
            stack.append(((i, k), b))
        if j - k >= 2:
            stack.append(((k, j), c))
    return ParseTree.build(n, spans, labels, score=float(final[root_label]))


def sample_tree(rules: RuleProbs, sentence: Sequence[int], rng: np.random.Generator) -> ParseTree:
    """Draw a labelled bracketing from p(tree | words, z) top-down through the inside chart."""
    ids = _check_sentence(sentence, rules.vocab_size)
    n = int(ids.size)
    t = rules.arrays()
    chart, _ = inside(t, ids, tape=Tape(recording=False))
    beta = chart.as_array()

    def draw(log_weights: np.ndarray) -> int:
        probs = np.exp(log_weights - np_logsumexp(log_weights))
        return int(rng.choice(log_weights.size, p=probs / probs.sum()))

    root_label = draw(t.root + beta[0, n, : t.num_nonterminals])
    spans: List[Span] = []
    labels: Dict[Span, int] = {}
    stack = [((0, n), root_label)]
    while stack:
        (i, j), label = stack.pop()
        spans.append((i, j))
        labels[(i, j)] = label
        options = []
        for k in range(i + 1, j):
            cand = t.binary[label] + beta[i, k][:, None] + beta[k, j][None, :]
            options.append(cand.reshape(-1))
        choice = draw(np.concatenate(options))
        size = t.binary.shape[1] * t.binary.shape[2]
        k = i + 1 + choice // size
        b, c = np.unravel_index(choice % size, t.binary.shape[1:])
        if k - i >= 2:
            stack.append(((i, k), int(b)))
        if j - k >= 2:
            stack.append(((k, j), int(c)))
    return ParseTree.build(n, spans, labels)


def tree_log_prob(rules: RuleProbs, sentence: Sequence[int], tree: ParseTree) -> float:
    """log p(tree, words | z) for a labelled bracketing, preterminal tags summed out."""
    ids = _check_sentence(sentence, rules.vocab_size)
    n = int(ids.size)
    if tree.n != n or not tree.is_valid():
        raise ContractError(f"tree is not a binary bracketing of {n} words")
    missing = [s for s in tree.spans if s not in tree.labels]
    if missing:
        raise ContractError(f"tree has unlabelled spans: {sorted(missing)}")
    t = rules.arrays()
    num_symbols = t.binary.shape[1]

    def vector(span: Span) -> np.ndarray:
        i, j = span
        if j - i == 1:
            return _leaf_vector(t, int(ids[i]))
        k = tree.split_of(span)
        label = tree.labels[span]
        score = combine(t.binary, vector((i, k)), vector((k, j)))[label]
        return _label_vector(num_symbols, label, score)

    root = tree.labels[(0, n)]
    return float(t.root[root] + vector((0, n))[root])
