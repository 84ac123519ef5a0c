"""Left-branching, right-branching and uniformly random baseline trees."""
from __future__ import annotations

from functools import lru_cache
from typing import List, Optional, Tuple

import numpy as np

from vcpcfg.core.chart import ParseTree
from vcpcfg.errors import ContractError

BASELINES = ("left", "right", "random")


@lru_cache(maxsize=None)
def catalan(k: int) -> int:
    if k <= 1:
        return 1
    return sum(catalan(i) * catalan(k - 1 - i) for i in range(k))


def _random_spans(n: int, rng: np.random.Generator) -> List[Tuple[int, int]]:
    spans, stack = [], [(0, n)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            continue
        spans.append((i, j))
        # splitting at k leaves binary trees over k-i and j-k leaves
        weights = np.array([catalan(k - i - 1) * catalan(j - k - 1) for k in range(i + 1, j)], dtype=np.float64)
        k = i + 1 + int(rng.choice(len(weights), p=weights / weights.sum()))
        stack.extend([(i, k), (k, j)])
    return spans


def baseline_tree(n: int, mode: str, rng: Optional[np.random.Generator] = None, seed: int = 0) -> ParseTree:
    """
    left: {(0, j)}; right: {(i, n)}; random: uniform over all binary bracketings.

    Pass ``rng`` to draw many random trees from one stream.
    """
    if n < 2:
        raise ContractError(f"no binary tree over {n} words")
    if mode == "left":
        spans = [(0, j) for j in range(2, n + 1)]
    elif mode == "right":
        spans = [(i, n) for i in range(0, n - 1)]
    elif mode == "random":
        spans = _random_spans(n, rng if rng is not None else np.random.default_rng(seed))
    else:
        raise ContractError(f"unknown baseline '{mode}', expected one of {', '.join(BASELINES)}")
    return ParseTree.build(n, spans)
