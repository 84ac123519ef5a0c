"""Bracketed constituency trees: reading gold files and writing predicted parses."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, FrozenSet, Iterable, List, Mapping, Optional, Sequence, Tuple

from nltk import Tree

from vcpcfg.core.chart import ParseTree
from vcpcfg.errors import DataError

logger = logging.getLogger(__name__)

Span = Tuple[int, int]
PLACEHOLDER = "_"
PUNCTUATION = re.compile(r"^[.,!?;:'\"()\[\]\-—/`]+$")
_ESCAPES = {"(": "-LRB-", ")": "-RRB-"}
_UNESCAPES = {v: k for k, v in _ESCAPES.items()}


@dataclass(frozen=True)
class BracketedTree:
    """Words plus labelled constituent spans; preterminal nodes are not constituents."""

    words: Tuple[str, ...]
    labels: Mapping[Span, str] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.words)

    @property
    def spans(self) -> FrozenSet[Span]:
        return frozenset(self.labels)


def is_punctuation(token: str) -> bool:
    return bool(PUNCTUATION.match(token))


def _is_preterminal(node: Tree) -> bool:
    return len(node) == 1 and isinstance(node[0], str)


def _leaf(token: str, position: int, words: List[str], keep_punctuation: bool) -> int:
    word = _UNESCAPES.get(token, token)
    if not keep_punctuation and is_punctuation(word):
        return position
    words.append(word)
    return position + 1


def _collect(node: Tree, start: int, words: List[str], labels: Dict[Span, str],
             keep_punctuation: bool = False) -> int:
    """Record constituents under ``node``; returns the end position."""
    if _is_preterminal(node):
        return _leaf(node[0], start, words, keep_punctuation)
    position = start
    for child in node:
        if isinstance(child, str):
            position = _leaf(child, position, words, keep_punctuation)
        else:
            position = _collect(child, position, words, labels, keep_punctuation)
    label = node.label().strip() if isinstance(node.label(), str) else ""
    # outermost label of a unary chain wins; children are visited first
    if label and label != PLACEHOLDER and position > start:
        labels[(start, position)] = label
    return position


def _check_balanced(text: str, lineno: int, path: Path) -> None:
    depth = 0
    for ch in text:
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                break
    if depth != 0:
        raise DataError(f"{path}:{lineno}: unbalanced brackets")


def read_tree(text: str, lineno: int = 1, path: Path = Path("<string>"),
              keep_punctuation: bool = False) -> BracketedTree:
    """
    Parse one bracketed tree.

    Punctuation leaves are dropped the same way captions lose them, so spans
    index the punctuation-free word sequence. Constituents left empty vanish.
    """
    _check_balanced(text, lineno, path)
    try:
        tree = Tree.fromstring(text)
    except ValueError as e:
        raise DataError(f"{path}:{lineno}: malformed tree: {e}") from e
    words: List[str] = []
    labels: Dict[Span, str] = {}
    _collect(tree, 0, words, labels, keep_punctuation)
    return BracketedTree(words=tuple(words), labels=labels)


def load_gold_trees(path: Path) -> List[BracketedTree]:
    """One bracketed tree per non-blank line."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise DataError(f"cannot read tree file {path}: {e}") from e
    trees = [read_tree(line.strip(), lineno, Path(path)) for lineno, line in enumerate(lines, start=1)
             if line.strip()]
    logger.info("[TREES] read %d trees from %s", len(trees), path)
    return trees


def to_bracketed(words: Sequence[str], labels: Mapping[Span, str], default_label: str = "X") -> str:
    """
    Serialise a span set over ``words``.

    Spans must nest. A labelled width-1 span is written as ``(LABEL (_ w))`` so
    it reads back as a constituent rather than a preterminal.
    """
    n = len(words)
    words = [_ESCAPES.get(w, w) for w in words]
    spans = sorted(labels, key=lambda s: (s[0], -(s[1] - s[0])))
    if (0, n) not in labels:
        spans.insert(0, (0, n))

    def build(i: int, j: int, inner: List[Span]) -> str:
        label = labels.get((i, j), default_label)
        if j - i == 1 and (i, j) in labels:
            return f"({label} ({PLACEHOLDER} {words[i]}))"
        parts, pos = [], i
        while pos < j:
            child = next((s for s in inner if s[0] == pos and s[1] <= j and s != (i, j)), None)
            if child is None:
                parts.append(words[pos])
                pos += 1
                continue
            nested = [s for s in inner if child[0] <= s[0] and s[1] <= child[1] and s != child]
            parts.append(build(child[0], child[1], nested))
            pos = child[1]
        return f"({label} {' '.join(parts)})"

    return build(0, n, [s for s in spans if s != (0, n)])


def parse_tree_to_bracketed(tree: ParseTree, words: Sequence[str],
                            label_names: Optional[Sequence[str]] = None) -> str:
    if label_names is None:
        labels = {span: f"NT{tree.labels.get(span, 0)}" for span in tree.spans}
    else:
        labels = {span: label_names[tree.labels.get(span, 0)] for span in tree.spans}
    return to_bracketed(words, labels)


def write_gold_trees(path: Path, trees: Iterable[str]) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text("".join(f"{t}\n" for t in trees), encoding="utf-8")
