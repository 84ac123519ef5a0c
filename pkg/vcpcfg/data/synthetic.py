"""
Synthetic grounded corpora sampled from a small hand-written CNF grammar.

Every noun is a visual concept with a fixed random unit vector; a sentence's
image feature is the normalised sum of its nouns' vectors plus Gaussian noise.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from vcpcfg.core.grammar import RuleProbs
from vcpcfg.data.features import FeatureTable
from vcpcfg.data.trees import BracketedTree
from vcpcfg.data.vocab import Vocabulary
from vcpcfg.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

NORMALIZATION_TOLERANCE = 1e-6


class BinaryRule(BaseModel):
    model_config = ConfigDict(extra="forbid")

    lhs: str
    left: str
    right: str
    prob: float = Field(..., ge=0.0, le=1.0)


class ToyGrammar(BaseModel):
    """A CNF grammar over named symbols; nonterminals rewrite to pairs, preterminals to words."""

    model_config = ConfigDict(extra="forbid")

    nonterminals: List[str]
    preterminals: List[str]
    root: Dict[str, float]
    rules: List[BinaryRule]
    emissions: Dict[str, Dict[str, float]]
    concepts: List[str]

    def words(self) -> List[str]:
        seen: Dict[str, None] = {}
        for tag in self.preterminals:
            for word in self.emissions.get(tag, {}):
                seen.setdefault(word, None)
        return list(seen)

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.words())

    def check_normalized(self) -> None:
        symbols = set(self.nonterminals) | set(self.preterminals)
        if abs(sum(self.root.values()) - 1.0) > NORMALIZATION_TOLERANCE:
            raise ConfigError("toy grammar root probabilities do not sum to 1")
        for rule in self.rules:
            if rule.lhs not in self.nonterminals or rule.left not in symbols or rule.right not in symbols:
                raise ConfigError(f"toy grammar rule {rule.lhs} -> {rule.left} {rule.right} uses unknown symbols")
        for lhs in self.nonterminals:
            total = sum(r.prob for r in self.rules if r.lhs == lhs)
            if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
                raise ConfigError(f"toy grammar rules for {lhs} sum to {total:.6f}, not 1")
        for tag in self.preterminals:
            total = sum(self.emissions.get(tag, {}).values())
            if abs(total - 1.0) > NORMALIZATION_TOLERANCE:
                raise ConfigError(f"toy grammar emissions for {tag} sum to {total:.6f}, not 1")
        unknown = [c for c in self.concepts if c not in self.words()]
        if unknown:
            raise ConfigError(f"concept words not in the grammar: {', '.join(unknown)}")

    def to_rule_probs(self) -> RuleProbs:
        """Log tables indexed like a learned grammar: nonterminals, then preterminals; UNK has probability 0."""
        self.check_normalized()
        symbols = {s: i for i, s in enumerate(self.nonterminals + self.preterminals)}
        vocab = self.vocabulary()
        num_nt, num_sym = len(self.nonterminals), len(symbols)
        root = np.zeros(num_nt)
        for lhs, p in self.root.items():
            root[symbols[lhs]] = p
        binary = np.zeros((num_nt, num_sym, num_sym))
        for r in self.rules:
            binary[symbols[r.lhs], symbols[r.left], symbols[r.right]] += r.prob
        emission = np.zeros((len(self.preterminals), len(vocab)))
        for t, tag in enumerate(self.preterminals):
            for word, p in self.emissions.get(tag, {}).items():
                emission[t, vocab.stoi[word]] = p
        return RuleProbs.from_probabilities(root, binary, emission)


def _uniform(words: List[str]) -> Dict[str, float]:
    return {w: 1.0 / len(words) for w in words}


def default_toy_grammar() -> ToyGrammar:
    """Six nonterminals, six preterminals, fifty words; the nouns are the visual concepts."""
    nouns = ["dog", "cat", "man", "woman", "horse", "bird", "car", "tree",
             "ball", "boat", "child", "table", "house", "train", "girl", "boy"]
    rules = [
        ("S", "NP", "VP", 0.7), ("S", "NP", "VERB", 0.3),
        ("NP", "DT", "NOUN", 0.5), ("NP", "DT", "NBAR", 0.3), ("NP", "NP", "PP", 0.2),
        ("NBAR", "ADJ", "NOUN", 0.8), ("NBAR", "ADJ", "NBAR", 0.2),
        ("VP", "VERB", "NP", 0.6), ("VP", "VP", "PP", 0.2), ("VP", "VBAR", "NP", 0.2),
        ("VBAR", "ADV", "VERB", 1.0),
        ("PP", "PREP", "NP", 1.0),
    ]
    return ToyGrammar(
        nonterminals=["S", "NP", "VP", "PP", "NBAR", "VBAR"],
        preterminals=["DT", "ADJ", "NOUN", "VERB", "PREP", "ADV"],
        root={"S": 1.0},
        rules=[BinaryRule(lhs=a, left=b, right=c, prob=p) for a, b, c, p in rules],
        emissions={
            "DT": _uniform(["the", "a", "every", "some"]),
            "ADJ": _uniform(["red", "big", "small", "old", "young", "green", "happy", "tall", "dark", "bright"]),
            "NOUN": _uniform(nouns),
            "VERB": _uniform(["sees", "holds", "chases", "likes", "rides",
                              "watches", "finds", "pulls", "carries", "eats"]),
            "PREP": _uniform(["on", "in", "near", "under", "with", "behind"]),
            "ADV": _uniform(["quickly", "slowly", "often", "never"]),
        },
        concepts=nouns,
    )


@dataclass
class SyntheticCorpus:
    sentences: List[List[str]]
    features: FeatureTable
    trees: List[BracketedTree]
    bracketed: List[str]
    concept_vectors: Dict[str, np.ndarray]


class _Sampler:
    def __init__(self, grammar: ToyGrammar, rng: np.random.Generator):
        self.grammar = grammar
        self.rng = rng
        self.nonterminals = set(grammar.nonterminals)
        self.expansions = {lhs: [r for r in grammar.rules if r.lhs == lhs] for lhs in grammar.nonterminals}

    def pick(self, options: List, probs: List[float]):
        p = np.asarray(probs, dtype=np.float64)
        return options[int(self.rng.choice(len(options), p=p / p.sum()))]

    def expand(self, symbol: str, start: int, words: List[str], labels: Dict[Tuple[int, int], str],
               max_length: int) -> str:
        if len(words) > max_length:
            raise OverflowError
        if symbol not in self.nonterminals:
            emissions = self.grammar.emissions[symbol]
            word = self.pick(list(emissions), list(emissions.values()))
            words.append(word)
            return f"({symbol} {word})"
        rules = self.expansions[symbol]
        rule = self.pick(rules, [r.prob for r in rules])
        left = self.expand(rule.left, start, words, labels, max_length)
        right = self.expand(rule.right, len(words), words, labels, max_length)
        labels[(start, len(words))] = symbol
        return f"({symbol} {left} {right})"


def generate_synthetic(grammar: ToyGrammar, size: int, seed: int, noise_scale: float = 0.1,
                       image_dim: int = 32, max_length: int = 40) -> SyntheticCorpus:
    """
    Sample ``size`` sentences with their true trees and one image feature each.

    Sentences longer than ``max_length`` are rejected and redrawn.
    """
    grammar.check_normalized()
    if size < 1:
        raise DataError(f"synthetic corpus size must be >= 1, got {size}")
    rng = np.random.default_rng(seed)
    concept_vectors = {}
    for concept in grammar.concepts:
        v = rng.standard_normal(image_dim)
        concept_vectors[concept] = v / np.linalg.norm(v)

    sampler = _Sampler(grammar, rng)
    root_symbols = list(grammar.root)
    sentences, trees, bracketed, images = [], [], [], []
    rejected = 0
    while len(sentences) < size:
        words: List[str] = []
        labels: Dict[Tuple[int, int], str] = {}
        root = sampler.pick(root_symbols, [grammar.root[s] for s in root_symbols])
        try:
            text = sampler.expand(root, 0, words, labels, max_length)
        except OverflowError:
            rejected += 1
            continue
        if len(words) > max_length:
            rejected += 1
            continue
        total = np.zeros(image_dim)
        for word in words:
            if word in concept_vectors:
                total += concept_vectors[word]
        norm = np.linalg.norm(total)
        image = total / norm if norm > 0 else total
        images.append(image + noise_scale * rng.standard_normal(image_dim))
        sentences.append(words)
        trees.append(BracketedTree(words=tuple(words), labels=labels))
        bracketed.append(text)
    if rejected:
        logger.info("[SYNTH] redrew %d sentences longer than %d words", rejected, max_length)
    return SyntheticCorpus(sentences=sentences, features=FeatureTable(np.stack(images)), trees=trees,
                           bracketed=bracketed, concept_vectors=concept_vectors)
