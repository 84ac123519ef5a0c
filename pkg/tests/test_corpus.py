import json
import struct

import numpy as np
import pytest

from vcpcfg.core.chart import ParseTree, inside
from vcpcfg.core.enumeration import enumerate_trees
from vcpcfg.data.corpus import attach_gold, blocked_alignment, load_corpus, read_captions, strip_punctuation
from vcpcfg.data.features import load_features, save_features
from vcpcfg.data.synthetic import BinaryRule, default_toy_grammar, generate_synthetic
from vcpcfg.data.trees import load_gold_trees, parse_tree_to_bracketed, read_tree, to_bracketed
from vcpcfg.data.vocab import UNK, UNK_ID, Vocabulary, build_vocab
from vcpcfg.errors import ConfigError, DataError


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


class TestVocabulary:
    def test_cap_keeps_most_frequent(self):
        vocab = build_vocab([["a", "a", "b"]], cap=1)
        assert vocab.tokens() == ["a"]
        assert vocab.encode(["b"]).tolist() == [UNK_ID]

    def test_ties_go_to_first_seen(self):
        vocab = build_vocab([["x", "y"], ["y", "x"]], cap=1)
        assert vocab.tokens() == ["x"]

    def test_large_cap_keeps_everything(self):
        vocab = build_vocab([["c", "b"], ["a"]], cap=100)
        assert sorted(vocab.tokens()) == ["a", "b", "c"]
        assert len(vocab) == 4

    def test_decode_round_trip(self):
        vocab = build_vocab([["the", "dog", "runs"]])
        assert vocab.decode(vocab.encode(["the", "cat", "runs"])) == ["the", UNK, "runs"]

    def test_empty_corpus(self):
        with pytest.raises(DataError):
            build_vocab([[], []])

    def test_literal_unk_does_not_take_a_slot(self, caplog):
        with caplog.at_level("DEBUG", logger="vcpcfg.data.vocab"):
            vocab = build_vocab([[UNK, UNK, UNK, "a", "b"], ["b"]], cap=2)
        assert vocab.tokens() == ["b", "a"]
        assert vocab.encode([UNK]).tolist() == [UNK_ID]
        assert "3 literal" in caplog.text

    def test_reserved_token_is_not_duplicated(self):
        vocab = Vocabulary([UNK, "a"])
        assert len(vocab) == 2
        assert vocab.stoi["a"] == 1


class TestFeatures:
    def test_binary_layout(self, tmp_path):
        path = tmp_path / "f.feat"
        save_features(path, np.array([[1.0, 2.0], [3.0, 4.5]]))
        data = path.read_bytes()
        assert data[:7] == b"VCFEAT1"
        assert struct.unpack("<II", data[7:15]) == (2, 2)
        table = load_features(path)
        np.testing.assert_array_equal(table.values, [[1.0, 2.0], [3.0, 4.5]])

    def test_jsonl(self, tmp_path):
        path = write_lines(tmp_path / "f.jsonl", [json.dumps([0.5, 1.0]), "", json.dumps([2.0, 3.0])])
        table = load_features(path)
        assert (table.rows, table.dim) == (2, 2)

    def test_truncated_binary(self, tmp_path):
        path = tmp_path / "f.feat"
        save_features(path, np.ones((3, 4)))
        path.write_bytes(path.read_bytes()[:-4])
        with pytest.raises(DataError, match="byte offset"):
            load_features(path)

    def test_ragged_jsonl(self, tmp_path):
        path = write_lines(tmp_path / "f.jsonl", ["[1, 2]", "[1, 2, 3]"])
        with pytest.raises(DataError, match="byte offset 7"):
            load_features(path)

    def test_non_finite(self, tmp_path):
        path = tmp_path / "f.feat"
        values = np.ones((2, 2))
        values[1, 0] = np.nan
        save_features(path, values)
        with pytest.raises(DataError, match="byte offset 23"):
            load_features(path)


class TestCorpus:
    def test_punctuation_removed(self, tmp_path):
        path = write_lines(tmp_path / "c.txt", ["a dog .", "( hello ) , world !"])
        assert read_captions(path) == [["a", "dog"], ["hello", "world"]]
        assert strip_punctuation(["``", "it's", "--", "x"]) == ["it's", "x"]

    def test_blocked_alignment(self):
        assert blocked_alignment(10, 2, 5) == [0] * 5 + [1] * 5

    def test_count_mismatch_names_both_counts(self):
        with pytest.raises(DataError, match="9 captions .* 2 images"):
            blocked_alignment(9, 2, 5)

    def test_index_file_matches_blocked(self, tmp_path):
        captions = write_lines(tmp_path / "c.txt", [f"word{i} other" for i in range(10)])
        features = tmp_path / "f.feat"
        save_features(features, np.eye(2))
        index = write_lines(tmp_path / "idx.txt", [f"{i} {i // 5}" for i in reversed(range(10))])
        blocked, _ = load_corpus(captions, features, captions_per_image=5)
        indexed, _ = load_corpus(captions, features, captions_per_image=5, alignment_index=index)
        assert [ex.image_row for ex in blocked] == [ex.image_row for ex in indexed] == [0] * 5 + [1] * 5
        assert [ex.tokens for ex in blocked] == [ex.tokens for ex in indexed]

    def test_index_file_errors(self, tmp_path):
        captions = write_lines(tmp_path / "c.txt", ["a b", "c d"])
        features = tmp_path / "f.feat"
        save_features(features, np.eye(2))
        twice = write_lines(tmp_path / "twice.txt", ["0 0", "0 1"])
        with pytest.raises(DataError, match="aligned twice"):
            load_corpus(captions, features, alignment_index=twice)
        out_of_range = write_lines(tmp_path / "range.txt", ["0 0", "1 5"])
        with pytest.raises(DataError, match="out of range"):
            load_corpus(captions, features, alignment_index=out_of_range)

    def test_text_only(self, tmp_path):
        captions = write_lines(tmp_path / "c.txt", ["a b c"])
        examples, table = load_corpus(captions)
        assert table is None
        assert examples[0].image_row is None

    def test_empty_captions(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError):
            load_corpus(path)

    def test_attach_gold_checks_counts(self, tmp_path):
        examples, _ = load_corpus(write_lines(tmp_path / "c.txt", ["a b", "c d"]))
        with pytest.raises(DataError):
            attach_gold(examples, [read_tree("(S a b)")])


class TestTrees:
    def test_reads_labelled_spans(self):
        tree = read_tree("(S (NP (DT a) (NN dog)) (VP (VBZ runs)))")
        assert tree.words == ("a", "dog", "runs")
        assert dict(tree.labels) == {(0, 2): "NP", (0, 3): "S", (2, 3): "VP"}

    def test_single_token(self):
        tree = read_tree("(S (NN dog))")
        assert tree.n == 1
        assert set(tree.spans) <= {(0, 1)}

    def test_outermost_unary_label_wins(self):
        tree = read_tree("(S (VP (NP (DT the) (NN dog))) (VBZ runs))")
        assert tree.labels[(0, 2)] == "VP"

    def test_round_trip(self):
        tree = read_tree("(S (NP (DT a) (NN dog)) (VP (VBZ chases) (NP (DT the) (NN cat))))")
        again = read_tree(to_bracketed(tree.words, tree.labels))
        assert again.spans == tree.spans
        assert again.words == tree.words

    def test_brackets_in_words_are_escaped(self):
        text = to_bracketed(["(", "x", ")"], {(0, 2): "A"})
        assert read_tree(text, keep_punctuation=True).words == ("(", "x", ")")

    def test_punctuation_leaves_are_dropped(self):
        tree = read_tree("(S (`` ``) (NP (DT a) (NN dog)) (, ,) (VP (VBZ runs)) (. .))")
        assert tree.words == ("a", "dog", "runs")
        assert dict(tree.labels) == {(0, 2): "NP", (0, 3): "S", (2, 3): "VP"}

    def test_constituent_of_only_punctuation_vanishes(self):
        tree = read_tree("(S (NP (DT a) (NN dog)) (PRN (-LRB- -LRB-) (: --) (-RRB- -RRB-)) (VBZ runs))")
        assert tree.words == ("a", "dog", "runs")
        assert set(tree.spans) == {(0, 2), (0, 3)}

    def test_gold_words_match_captions(self, tmp_path):
        captions = read_captions(write_lines(tmp_path / "c.txt", ["a dog runs ."]))
        tree = read_tree("(S (NP (DT a) (NN dog)) (VP (VBZ runs)) (. .))")
        assert list(tree.words) == captions[0]

    def test_unbalanced_reports_line(self, tmp_path):
        path = write_lines(tmp_path / "g.trees", ["(S (NP a b)", "(S a (NP b c)))"])
        with pytest.raises(DataError, match=":1: unbalanced"):
            load_gold_trees(path)

    def test_parse_tree_serialisation(self):
        tree = ParseTree.build(3, [(0, 3), (1, 3)], {(0, 3): 0, (1, 3): 2})
        text = parse_tree_to_bracketed(tree, ["a", "b", "c"])
        assert text == "(NT0 a (NT2 b c))"
        assert read_tree(text).spans == frozenset({(0, 3), (1, 3)})


class TestSynthetic:
    def test_deterministic(self):
        a = generate_synthetic(default_toy_grammar(), 20, seed=3, image_dim=8)
        b = generate_synthetic(default_toy_grammar(), 20, seed=3, image_dim=8)
        assert a.sentences == b.sentences
        assert a.bracketed == b.bracketed
        np.testing.assert_array_equal(a.features.values, b.features.values)

    def test_noise_free_features_depend_on_concepts(self):
        corpus = generate_synthetic(default_toy_grammar(), 60, seed=1, noise_scale=0.0, image_dim=8)
        grammar = default_toy_grammar()
        seen = {}
        for words, row in zip(corpus.sentences, corpus.features.values):
            key = tuple(sorted(w for w in words if w in grammar.concepts))
            if key in seen:
                np.testing.assert_allclose(row, seen[key])
            seen[key] = row
            assert np.linalg.norm(row) == pytest.approx(1.0) or not key

    def test_trees_match_sentences(self):
        corpus = generate_synthetic(default_toy_grammar(), 10, seed=0, max_length=12)
        for words, tree, text in zip(corpus.sentences, corpus.trees, corpus.bracketed):
            assert 3 <= len(words) <= 12
            assert tree.words == tuple(words)
            assert (0, len(words)) in tree.spans
            assert read_tree(text).spans == tree.spans

    def test_likelihood_matches_inside(self):
        grammar = default_toy_grammar()
        rules = grammar.to_rule_probs()
        vocab = grammar.vocabulary()
        corpus = generate_synthetic(grammar, 6, seed=5, max_length=5)
        for words in corpus.sentences:
            ids = vocab.encode(words)
            _, log_z = inside(rules, ids)
            assert np.isfinite(log_z.item())
            total = sum(p for _, p in enumerate_trees(ids, rules))
            assert np.exp(log_z.item()) == pytest.approx(total, rel=1e-9)

    def test_unnormalised_grammar(self):
        grammar = default_toy_grammar()
        rules = list(grammar.rules)
        rules[0] = BinaryRule(lhs="S", left="NP", right="VP", prob=0.9)
        with pytest.raises(ConfigError):
            generate_synthetic(grammar.model_copy(update={"rules": rules}), 5, seed=0)
