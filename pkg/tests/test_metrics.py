from collections import Counter
from fractions import Fraction

import numpy as np
import pandas as pd
import pytest

from vcpcfg.data.trees import BracketedTree, read_tree
from vcpcfg.errors import ContractError, DataError
from vcpcfg.evaluation.baselines import BASELINES, baseline_tree, catalan
from vcpcfg.evaluation.metrics import (SpanSet, all_labels, corpus_f1, label_recall, recall_by_length,
                                       self_f1, sentence_f1, sentence_level_f1, spans_from_tree)
from vcpcfg.evaluation.report import build_report, render, summarize_runs, write_csvs


def spans(n, *pairs):
    return SpanSet.of(pairs, n)


@pytest.fixture
def verb_phrase_golds():
    """Two gold trees with four non-trivial VP spans between them."""
    first = BracketedTree(words=tuple("abcdef"),
                          labels={(0, 6): "S", (0, 2): "NP", (2, 6): "VP", (3, 6): "VP"})
    second = BracketedTree(words=tuple("abcdef"),
                           labels={(0, 6): "S", (1, 6): "VP", (1, 4): "VP", (4, 6): "NP"})
    return [first, second]


class TestSentenceF1:
    def test_identical(self):
        s = spans(5, (0, 2), (2, 5))
        assert sentence_f1(s, s) == 1

    def test_disjoint(self):
        assert sentence_f1(spans(3, (1, 3)), spans(3, (0, 2))) == 0

    def test_half_overlap(self):
        assert sentence_f1(spans(5, (0, 2), (1, 3)), spans(5, (0, 2), (2, 5))) == Fraction(1, 2)

    def test_trivial_spans_are_ignored(self):
        s = spans(3, (0, 3), (0, 1), (0, 2))
        assert s.spans == frozenset({(0, 2)})

    def test_empty_conventions(self):
        assert sentence_f1(spans(2), spans(2)) == 1
        assert sentence_f1(spans(4, (0, 2)), spans(4)) == 0

    def test_symmetric(self):
        a, b = spans(6, (0, 2), (3, 5), (0, 4)), spans(6, (0, 2), (2, 6))
        assert sentence_f1(a, b) == sentence_f1(b, a)

    def test_length_mismatch(self):
        with pytest.raises(DataError):
            sentence_f1(spans(4, (0, 2)), spans(5, (0, 2)))


class TestCorpusF1:
    def test_pooled_counts(self):
        preds = [spans(5, (0, 2), (2, 4)), spans(5, (1, 3))]
        golds = [spans(5, (0, 2)), spans(5, (0, 2))]
        assert corpus_f1(preds, golds) == Fraction(2, 5)
        assert sentence_level_f1(preds, golds) == Fraction(1, 3)

    def test_single_sentence(self):
        pred, gold = spans(5, (0, 2), (1, 3)), spans(5, (0, 2), (2, 5))
        assert corpus_f1([pred], [gold]) == sentence_f1(pred, gold)

    def test_perfect(self):
        golds = [spans(4, (0, 2), (2, 4)), spans(5, (1, 3))]
        assert corpus_f1(golds, golds) == 1

    def test_misaligned(self):
        with pytest.raises(DataError):
            corpus_f1([spans(3)], [])


class TestLabelRecall:
    def test_quarter_of_verb_phrases(self, verb_phrase_golds):
        preds = [spans(6, (2, 6)), spans(6)]
        assert label_recall(preds, verb_phrase_golds, "VP") == Fraction(1, 4)
        assert label_recall(preds, verb_phrase_golds, "NP") == 0

    def test_all_predicted(self, verb_phrase_golds):
        preds = [spans_from_tree(g) for g in verb_phrase_golds]
        assert label_recall(preds, verb_phrase_golds, "NP") == 1

    def test_absent_label(self, verb_phrase_golds):
        preds = [spans(6), spans(6)]
        assert label_recall(preds, verb_phrase_golds, "SBAR") is None
        # only the whole-sentence span carries S, and it is trivial
        assert label_recall(preds, verb_phrase_golds, "S") is None

    def test_labels_by_frequency(self, verb_phrase_golds):
        assert all_labels(verb_phrase_golds) == ["VP", "NP"]


class TestRecallByLength:
    def test_one_of_two_width_two_spans(self):
        preds = [spans(5, (0, 2), (2, 5)), spans(4)]
        golds = [spans(5, (0, 2), (2, 5)), spans(4, (2, 4))]
        assert recall_by_length(preds, golds) == {2: Fraction(1, 2), 3: Fraction(1)}

    def test_perfect_and_absent_widths(self):
        golds = [spans(6, (0, 2), (0, 4))]
        result = recall_by_length(golds, golds)
        assert result == {2: 1, 4: 1}
        assert 3 not in result


class TestSelfF1:
    def test_identical_runs(self):
        run = [spans(5, (0, 2), (2, 5)), spans(4, (1, 3))]
        assert self_f1([run, run, run]) == 1

    def test_half_overlapping_pair(self):
        assert self_f1([[spans(5, (0, 2), (2, 5))], [spans(5, (0, 2), (1, 3))]]) == Fraction(1, 2)

    def test_four_runs_average_six_pairs(self):
        a, b = [spans(5, (0, 2), (2, 5))], [spans(5, (0, 2), (1, 3))]
        assert self_f1([a, a, b, b]) == Fraction(2, 3)

    def test_needs_two_aligned_runs(self):
        with pytest.raises(DataError):
            self_f1([[spans(3)]])
        with pytest.raises(DataError):
            self_f1([[spans(3)], [spans(3), spans(3)]])


class TestBaselines:
    def test_right_branching(self):
        assert set(baseline_tree(4, "right").spans) == {(0, 4), (1, 4), (2, 4)}

    def test_left_branching(self):
        assert set(baseline_tree(4, "left").spans) == {(0, 4), (0, 3), (0, 2)}

    def test_deterministic_baselines_match_themselves(self):
        for mode in ("left", "right"):
            a, b = spans_from_tree(baseline_tree(7, mode)), spans_from_tree(baseline_tree(7, mode))
            assert sentence_f1(a, b) == 1

    def test_random_trees_are_uniform(self):
        rng = np.random.default_rng(2024)
        draws = 50_000
        counts = Counter(frozenset(baseline_tree(4, "random", rng=rng).spans) for _ in range(draws))
        assert len(counts) == catalan(3) == 5
        standard_error = np.sqrt(0.2 * 0.8 / draws)
        for count in counts.values():
            assert abs(count / draws - 0.2) < 3 * standard_error

    def test_random_is_seeded(self):
        assert baseline_tree(9, "random", seed=5).spans == baseline_tree(9, "random", seed=5).spans

    def test_random_tree_is_binary(self):
        tree = baseline_tree(10, "random", seed=1)
        assert len(tree.spans) == 9
        assert tree.is_valid()

    def test_catalan(self):
        assert [catalan(k) for k in range(6)] == [1, 1, 2, 5, 14, 42]

    def test_errors(self):
        with pytest.raises(ContractError):
            baseline_tree(1, "left")
        with pytest.raises(ContractError):
            baseline_tree(4, "balanced")
        assert "balanced" not in BASELINES


class TestReport:
    @pytest.fixture
    def golds(self):
        return [read_tree("(S (NP (DT a) (NN dog)) (VP (VBZ sees) (NP (DT the) (NN cat))))"),
                read_tree("(S (NP (DT the) (JJ big) (NN cat)) (VP (VBZ runs)))")]

    def test_gold_against_itself(self, golds):
        preds = [spans_from_tree(g) for g in golds]
        report = build_report("gold", preds, golds, ["NP", "VP", "PP"])
        assert report.corpus_f1 == report.sentence_f1 == 1
        assert report.label_recall == {"NP": 1, "VP": 1, "PP": None}
        text = render([report])
        assert "1.000" in text

    def test_self_f1_line(self, golds):
        preds = [spans_from_tree(g) for g in golds]
        text = render([build_report("gold", preds, golds, [])], self_f1_value=Fraction(1, 3))
        assert text.endswith("self-F1: 0.333")

    def test_csv_files(self, golds, tmp_path):
        right = [spans_from_tree(baseline_tree(g.n, "right")) for g in golds]
        left = [spans_from_tree(baseline_tree(g.n, "left")) for g in golds]
        reports = [build_report("right", right, golds, ["NP", "VP"]),
                   build_report("left", left, golds, ["NP", "VP"])]
        paths = write_csvs(reports, tmp_path / "eval")
        assert [p.name for p in paths] == ["report.csv", "label_recall.csv", "recall_by_length.csv"]
        table = pd.read_csv(paths[0], index_col="system")
        assert list(table.index) == ["right", "left"]
        assert {"C-F1", "S-F1", "NP", "VP"} <= set(table.columns)
        lengths = pd.read_csv(paths[2])
        assert list(lengths.columns) == ["system", "length", "recall"]
        assert set(lengths["system"]) == {"right", "left"}

    def test_misaligned(self, golds):
        with pytest.raises(DataError):
            build_report("x", [], golds, [])

    def test_summarize_runs(self, golds):
        preds = [spans_from_tree(g) for g in golds]
        right = [spans_from_tree(baseline_tree(g.n, "right")) for g in golds]
        reports = [build_report("run0", preds, golds, ["NP"]), build_report("run1", right, golds, ["NP"])]
        summary = summarize_runs(reports)
        expected = (1.0 + float(reports[1].corpus_f1)) / 2
        assert summary.loc["C-F1", "mean"] == pytest.approx(expected)
        assert summary.loc["C-F1", "std"] > 0.0
