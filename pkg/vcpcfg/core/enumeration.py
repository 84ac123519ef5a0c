"""Brute-force enumeration of every labelled binary tree; a reference for the chart code."""
from __future__ import annotations

from functools import lru_cache
from typing import Dict, List, Sequence, Tuple

import numpy as np

from vcpcfg.core.chart import ParseTree, Span, _check_sentence, _label_vector, _leaf_vector, combine
from vcpcfg.core.grammar import RuleProbs
from vcpcfg.errors import EnumerationLimitError

MAX_ENUMERATION_LENGTH = 8

# (spans, labels, log score vector over N u P)
Subtree = Tuple[Tuple[Span, ...], Tuple[Tuple[Span, int], ...], np.ndarray]


def enumerate_trees(sentence: Sequence[int], rules: RuleProbs) -> List[Tuple[ParseTree, float]]:
    """
    Every labelled bracketing of ``sentence`` with its joint probability.

    Labels are enumerated on width >= 2 spans; preterminal tags are summed, so
    the probabilities add up to exp(log Z).
    """
    n = len(sentence)
    if n > MAX_ENUMERATION_LENGTH:
        raise EnumerationLimitError(f"refusing to enumerate trees for n={n} > {MAX_ENUMERATION_LENGTH}")
    ids = _check_sentence(sentence, rules.vocab_size)
    t = rules.arrays()
    num_nt = t.num_nonterminals
    num_symbols = t.binary.shape[1]

    @lru_cache(maxsize=None)
    def subtrees(i: int, j: int) -> Tuple[Subtree, ...]:
        if j - i == 1:
            return (((), (), _leaf_vector(t, int(ids[i]))),)
        out = []
        for k in range(i + 1, j):
            for l_spans, l_labels, l_vec in subtrees(i, k):
                for r_spans, r_labels, r_vec in subtrees(k, j):
                    scores = combine(t.binary, l_vec, r_vec)
                    spans = ((i, j),) + l_spans + r_spans
                    for label in range(num_nt):
                        labels = (((i, j), label),) + l_labels + r_labels
                        out.append((spans, labels, _label_vector(num_symbols, label, scores[label])))
        return tuple(out)

    trees: List[Tuple[ParseTree, float]] = []
    for spans, labels, vec in subtrees(0, n):
        label_map: Dict[Span, int] = dict(labels)
        root = label_map[(0, n)]
        score = float(t.root[root] + vec[root])
        trees.append((ParseTree.build(n, spans, label_map, score=score), float(np.exp(score))))
    return trees
