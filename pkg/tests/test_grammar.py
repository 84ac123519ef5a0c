import numpy as np
import pytest

from vcpcfg.core.autodiff import Tape
from vcpcfg.core.grammar import GrammarParams, RuleProbs, compute_rule_probs, init_params
from vcpcfg.core.params import xavier_uniform
from vcpcfg.errors import ContractError, NumericError
from vcpcfg.utils.config import GrammarTopology


def small_topology(**overrides) -> GrammarTopology:
    sizes = dict(num_nonterminals=3, num_preterminals=4, vocab_size=7, symbol_dim=5, z_dim=2)
    sizes.update(overrides)
    return GrammarTopology(**sizes)


def rules_at(params: GrammarParams, z) -> RuleProbs:
    tape = Tape(recording=False)
    return compute_rule_probs(params.constants(tape), tape.constant(np.asarray(z, dtype=np.float64))).arrays()


class TestRuleProbs:
    def test_tables_are_normalised(self):
        topology = small_topology()
        rules = rules_at(init_params(topology, seed=0), [0.5, -1.0])
        assert rules.root.shape == (3,)
        assert rules.binary.shape == (3, 7, 7)
        assert rules.emission.shape == (4, 7)
        assert rules.max_normalization_error() < 1e-9

    def test_zero_weights_give_uniform_tables(self):
        topology = small_topology()
        params = init_params(topology, seed=0).map(lambda name, value: np.zeros_like(value))
        rules = rules_at(params, np.zeros(2))
        np.testing.assert_allclose(np.exp(rules.root), 1.0 / 3)
        np.testing.assert_allclose(np.exp(rules.binary), 1.0 / 49)
        np.testing.assert_allclose(np.exp(rules.emission), 1.0 / 7)

    def test_hand_set_emission_logits(self):
        topology = small_topology(num_nonterminals=1, num_preterminals=1, vocab_size=2, symbol_dim=1, z_dim=1)
        params = init_params(topology, seed=0).map(lambda name, value: np.zeros_like(value))
        params.preterm_emb[:] = 1.0
        params.term_out[1, 0] = np.log(3.0)
        rules = rules_at(params, [0.0])
        np.testing.assert_allclose(np.exp(rules.emission), [[0.25, 0.75]])

    def test_z_changes_the_grammar(self):
        params = init_params(small_topology(), seed=4)
        a = rules_at(params, [0.0, 0.0])
        b = rules_at(params, [2.0, -2.0])
        assert not np.allclose(a.binary, b.binary)

    def test_wrong_z_length(self):
        tape = Tape()
        params = init_params(small_topology(), seed=0).constants(tape)
        with pytest.raises(ContractError):
            compute_rule_probs(params, tape.constant(np.zeros(3)))

    def test_non_finite_logits_name_the_family(self):
        params = init_params(small_topology(), seed=0)
        params.rule_out[0, 0] = np.nan
        with pytest.raises(NumericError, match="binary"):
            rules_at(params, [0.0, 0.0])

    def test_from_probabilities_maps_zero_to_minus_inf(self):
        rules = RuleProbs.from_probabilities(np.array([1.0]), np.array([[[0.0, 1.0], [0.0, 0.0]]]),
                                             np.array([[1.0]]))
        assert rules.binary[0, 0, 0] == -np.inf
        assert rules.binary[0, 0, 1] == 0.0


class TestInitialisation:
    def test_same_seed_is_bitwise_identical(self):
        a = init_params(small_topology(), seed=11).as_dict()
        b = init_params(small_topology(), seed=11).as_dict()
        assert a.keys() == b.keys()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_different_seeds_differ(self):
        a = init_params(small_topology(), seed=1).as_dict()
        b = init_params(small_topology(), seed=2).as_dict()
        assert not np.array_equal(a["rule_out"], b["rule_out"])

    def test_xavier_bound(self):
        values = xavier_uniform(np.random.default_rng(0), (256, 256))
        bound = np.sqrt(6.0 / 512)
        assert bound == pytest.approx(0.10825, abs=1e-5)
        assert np.abs(values).max() <= bound
        assert np.abs(values).max() > 0.9 * bound

    def test_biases_start_at_zero(self):
        params = init_params(small_topology(), seed=0)
        assert not params.f_s.b1.any()
        assert not params.f_t.b2.any()
