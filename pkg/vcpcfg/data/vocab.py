"""Frequency-ranked vocabulary with a single reserved UNK id."""
from __future__ import annotations

import logging
from collections import Counter
from typing import Dict, Iterable, List, Sequence

import numpy as np

from vcpcfg.errors import DataError

logger = logging.getLogger(__name__)

UNK = "<unk>"
UNK_ID = 0


class Vocabulary:
    def __init__(self, tokens: Sequence[str]):
        self.itos: List[str] = [UNK] + [t for t in tokens if t != UNK]
        self.stoi: Dict[str, int] = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        return np.array([self.stoi.get(t, UNK_ID) for t in tokens], dtype=np.int64)

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.itos[int(i)] for i in ids]

    def tokens(self) -> List[str]:
        """Non-reserved tokens in id order (what a checkpoint stores)."""
        return self.itos[1:]


def build_vocab(sentences: Iterable[Sequence[str]], cap: int = 10000) -> Vocabulary:
    """
    Keep the ``cap`` most frequent tokens; ties go to the token seen first.

    A literal ``<unk>`` in the data is the reserved token, not a word type, so
    it never takes one of the ``cap`` slots.
    """
    if cap < 1:
        raise DataError(f"vocabulary cap must be >= 1, got {cap}")
    counts: Counter = Counter()
    first_seen: Dict[str, int] = {}
    for sentence in sentences:
        for token in sentence:
            counts[token] += 1
            first_seen.setdefault(token, len(first_seen))
    literal_unk = counts.pop(UNK, 0)
    if literal_unk:
        logger.debug("[VOCAB] %d literal %s tokens map to the reserved id", literal_unk, UNK)
    if not counts:
        raise DataError("cannot build a vocabulary from an empty corpus")
    ranked = sorted(counts, key=lambda t: (-counts[t], first_seen[t]))
    kept = ranked[:cap]
    logger.info("[VOCAB] kept %d of %d distinct tokens", len(kept), len(ranked))
    return Vocabulary(kept)
