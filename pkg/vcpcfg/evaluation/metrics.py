"""
Unlabelled bracketing metrics.

Trivial spans (single words and the whole sentence) never count. All values
are exact ``Fraction``s; rendering to decimals happens in the report.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

from vcpcfg.core.chart import ParseTree
from vcpcfg.data.trees import BracketedTree
from vcpcfg.errors import DataError

Span = Tuple[int, int]


@dataclass(frozen=True)
class SpanSet:
    n: int
    spans: FrozenSet[Span]

    @classmethod
    def of(cls, spans: Iterable[Span], n: int) -> "SpanSet":
        return cls(n=n, spans=frozenset((i, j) for i, j in spans if j - i >= 2 and (i, j) != (0, n)))

    def __len__(self) -> int:
        return len(self.spans)


def spans_from_tree(tree: Union[ParseTree, BracketedTree]) -> SpanSet:
    return SpanSet.of(tree.spans, tree.n)


def _f1(matched: int, predicted: int, gold: int) -> Fraction:
    if predicted == 0 and gold == 0:
        return Fraction(1)
    if predicted == 0 or gold == 0 or matched == 0:
        return Fraction(0)
    precision = Fraction(matched, predicted)
    recall = Fraction(matched, gold)
    return 2 * precision * recall / (precision + recall)


def _check_pair(pred: SpanSet, gold: SpanSet) -> None:
    if pred.n != gold.n:
        raise DataError(f"sentence length mismatch: prediction has {pred.n} words, gold has {gold.n}")


def _check_aligned(preds: Sequence, golds: Sequence) -> None:
    if len(preds) != len(golds):
        raise DataError(f"{len(preds)} predicted trees for {len(golds)} gold trees")


def sentence_f1(pred: SpanSet, gold: SpanSet) -> Fraction:
    _check_pair(pred, gold)
    return _f1(len(pred.spans & gold.spans), len(pred), len(gold))


def sentence_level_f1(preds: Sequence[SpanSet], golds: Sequence[SpanSet]) -> Fraction:
    """Unweighted mean of per-sentence F1."""
    _check_aligned(preds, golds)
    if not preds:
        return Fraction(0)
    return sum((sentence_f1(p, g) for p, g in zip(preds, golds)), Fraction(0)) / len(preds)


def corpus_f1(preds: Sequence[SpanSet], golds: Sequence[SpanSet]) -> Fraction:
    """Micro-averaged F1 from pooled counts."""
    _check_aligned(preds, golds)
    matched = predicted = gold_total = 0
    for p, g in zip(preds, golds):
        _check_pair(p, g)
        matched += len(p.spans & g.spans)
        predicted += len(p)
        gold_total += len(g)
    return _f1(matched, predicted, gold_total)


def _labelled_gold(gold: BracketedTree) -> Dict[Span, str]:
    keep = SpanSet.of(gold.labels, gold.n).spans
    return {span: label for span, label in gold.labels.items() if span in keep}


def label_recall(preds: Sequence[SpanSet], golds: Sequence[BracketedTree], label: str) -> Optional[Fraction]:
    """Share of gold spans carrying ``label`` that were predicted; None if the label never occurs."""
    _check_aligned(preds, golds)
    hit = total = 0
    for p, g in zip(preds, golds):
        for span, gold_label in _labelled_gold(g).items():
            if gold_label == label:
                total += 1
                hit += span in p.spans
    return Fraction(hit, total) if total else None


def recall_by_length(preds: Sequence[SpanSet], golds: Sequence[SpanSet]) -> Dict[int, Fraction]:
    """Recall over gold spans grouped by width; widths without gold spans are absent."""
    _check_aligned(preds, golds)
    hits: Dict[int, int] = {}
    totals: Dict[int, int] = {}
    for p, g in zip(preds, golds):
        for span in g.spans:
            width = span[1] - span[0]
            totals[width] = totals.get(width, 0) + 1
            hits[width] = hits.get(width, 0) + (span in p.spans)
    return {w: Fraction(hits[w], totals[w]) for w in sorted(totals)}


def self_f1(runs: Sequence[Sequence[SpanSet]]) -> Fraction:
    """Mean over unordered run pairs of their sentence-level F1 against each other."""
    if len(runs) < 2:
        raise DataError("self-F1 needs at least two runs")
    sizes = {len(run) for run in runs}
    if len(sizes) != 1:
        raise DataError(f"runs have different sentence counts: {sorted(sizes)}")
    pairs = list(combinations(range(len(runs)), 2))
    total = sum((sentence_level_f1(runs[a], runs[b]) for a, b in pairs), Fraction(0))
    return total / len(pairs)


def all_labels(golds: Sequence[BracketedTree]) -> List[str]:
    """Labels on non-trivial gold spans, most frequent first."""
    counts: Dict[str, int] = {}
    for g in golds:
        for label in _labelled_gold(g).values():
            counts[label] = counts.get(label, 0) + 1
    return sorted(counts, key=lambda lab: (-counts[lab], lab))


def label_recalls(preds: Sequence[SpanSet], golds: Sequence[BracketedTree],
                  labels: Sequence[str]) -> Mapping[str, Optional[Fraction]]:
    return {label: label_recall(preds, golds, label) for label in labels}
