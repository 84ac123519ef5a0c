"""Caption loading, punctuation removal and caption-to-image alignment."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np

from vcpcfg.data.features import FeatureTable, load_features
from vcpcfg.data.trees import BracketedTree, is_punctuation
from vcpcfg.data.vocab import Vocabulary
from vcpcfg.errors import DataError

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class GroundedExample:
    tokens: Tuple[str, ...]
    image_row: Optional[int] = None
    gold: Optional[BracketedTree] = None
    ids: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.tokens)

    def encode(self, vocab: Vocabulary) -> "GroundedExample":
        return replace(self, ids=vocab.encode(self.tokens))


def strip_punctuation(tokens: Iterable[str]) -> List[str]:
    return [t for t in tokens if not is_punctuation(t)]


def read_captions(path: Path) -> List[List[str]]:
    """Whitespace-tokenised lines with punctuation-only tokens removed; blank lines stay empty."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read captions {path}: {e}") from e
    return [strip_punctuation(line.split()) for line in lines]


def write_captions(path: Path, sentences: Iterable[Sequence[str]]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(" ".join(s) + "\n" for s in sentences), encoding="utf-8")


def read_alignment_index(path: Path, num_captions: int) -> List[int]:
    """Lines of ``caption_line image_row``; every caption must appear exactly once."""
    rows: List[Optional[int]] = [None] * num_captions
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read alignment index {path}: {e}") from e
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split()
        try:
            caption, image = int(parts[0]), int(parts[1])
        except (IndexError, ValueError) as e:
            raise DataError(f"{path}:{lineno}: expected 'caption_line image_row'") from e
        if not 0 <= caption < num_captions:
            raise DataError(f"{path}:{lineno}: caption line {caption} out of range [0, {num_captions})")
        if rows[caption] is not None:
            raise DataError(f"{path}:{lineno}: caption line {caption} aligned twice")
        rows[caption] = image
    missing = [i for i, r in enumerate(rows) if r is None]
    if missing:
        raise DataError(f"{path}: {len(missing)} caption(s) have no image, first is line {missing[0]}")
    return [int(r) for r in rows]


def blocked_alignment(num_captions: int, num_images: int, captions_per_image: int) -> List[int]:
    if num_captions != captions_per_image * num_images:
        raise DataError(f"{num_captions} captions do not match {num_images} images "
                        f"x {captions_per_image} captions per image (= {captions_per_image * num_images})")
    return [i // captions_per_image for i in range(num_captions)]


def load_corpus(captions: Path, features: Union[None, Path, FeatureTable] = None, captions_per_image: int = 5,
                alignment_index: Optional[Path] = None) -> Tuple[List[GroundedExample], Optional[FeatureTable]]:
    """
    Captions paired with image rows.

    Without features every example has ``image_row=None``. With features the
    alignment is blocked (line i -> row i // k) unless an index file is given.
    """
    sentences = read_captions(captions)
    if not sentences:
        raise DataError(f"{captions}: no captions")
    table = load_features(features) if isinstance(features, (str, Path)) else features
    if table is None:
        rows: List[Optional[int]] = [None] * len(sentences)
    elif alignment_index is not None:
        rows = read_alignment_index(alignment_index, len(sentences))
    else:
        rows = blocked_alignment(len(sentences), table.rows, captions_per_image)
    if table is not None:
        bad = next((r for r in rows if not 0 <= r < table.rows), None)
        if bad is not None:
            raise DataError(f"image row {bad} out of range for {table.rows} feature rows")
    examples = [GroundedExample(tokens=tuple(s), image_row=r) for s, r in zip(sentences, rows)]
    logger.info("[CORPUS] loaded %d captions from %s", len(examples), captions)
    return examples, table


def attach_gold(examples: Sequence[GroundedExample], trees: Sequence[BracketedTree]) -> List[GroundedExample]:
    if len(examples) != len(trees):
        raise DataError(f"{len(trees)} gold trees for {len(examples)} captions")
    return [replace(ex, gold=tree) for ex, tree in zip(examples, trees)]
