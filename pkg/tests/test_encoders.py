import numpy as np
import pytest
from scipy.special import expit

from vcpcfg.core import autodiff as ad
from vcpcfg.core.autodiff import Tape
from vcpcfg.core.encoders import (Posterior, encode_posterior, encode_spans, init_span_encoder,
                                  init_variational_encoder, kl_gaussian, sample_z)
from vcpcfg.core.gradcheck import grad_check
from vcpcfg.errors import ContractError
from vcpcfg.utils.config import EncoderConfig

CONFIG = EncoderConfig(vocab_size=6, word_dim=3, hidden_dim=2, z_dim=2, joint_dim=4, image_dim=5, num_labels=3)


def lstm_single_step(weight: np.ndarray, bias: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Hidden state after one step from zero states."""
    hidden = bias.size // 4
    gates = weight @ np.concatenate([x, np.zeros(hidden)]) + bias
    i, _, g, o = (gates[k * hidden:(k + 1) * hidden] for k in range(4))
    c = expit(i) * np.tanh(g)
    return expit(o) * np.tanh(c)


def posterior(mu, log_var) -> Posterior:
    tape = Tape()
    return Posterior(mu=tape.constant(np.asarray(mu, dtype=np.float64)),
                     log_var=tape.constant(np.asarray(log_var, dtype=np.float64)))


class TestVariationalEncoder:
    def test_single_word_pools_its_own_state(self):
        params = init_variational_encoder(CONFIG, seed=0)
        post = encode_posterior(params.constants(Tape()), [4])
        x = params.embed[4]
        state = np.concatenate([lstm_single_step(params.forward.weight, params.forward.bias, x),
                                lstm_single_step(params.backward.weight, params.backward.bias, x)])
        out = params.out_weight @ state + params.out_bias
        np.testing.assert_allclose(post.mu.value, out[:2], atol=1e-12)
        np.testing.assert_allclose(post.log_var.value, out[2:], atol=1e-12)

    def test_word_order_matters(self):
        params = init_variational_encoder(CONFIG, seed=1).constants(Tape())
        a = encode_posterior(params, [1, 2, 3])
        b = encode_posterior(params, [2, 1, 3])
        assert not np.allclose(a.mu.value, b.mu.value)

    def test_deterministic(self):
        params = init_variational_encoder(CONFIG, seed=2)
        a = encode_posterior(params.constants(Tape()), [5, 0, 2])
        b = encode_posterior(params.constants(Tape()), [5, 0, 2])
        np.testing.assert_array_equal(a.mu.value, b.mu.value)
        np.testing.assert_array_equal(a.log_var.value, b.log_var.value)

    def test_empty_sentence(self):
        params = init_variational_encoder(CONFIG, seed=0).constants(Tape())
        with pytest.raises(ContractError):
            encode_posterior(params, [])


class TestReparameterisation:
    def test_zero_noise_is_the_mean(self):
        z = sample_z(posterior([0.3, -1.2], [0.5, 2.0]), np.zeros(2))
        np.testing.assert_allclose(z.value, [0.3, -1.2])

    def test_standard_posterior_passes_noise_through(self):
        z = sample_z(posterior([0.0, 0.0], [0.0, 0.0]), np.array([0.7, -0.1]))
        np.testing.assert_allclose(z.value, [0.7, -0.1])

    def test_scaled_noise(self):
        z = sample_z(posterior([1.0, 1.0], [np.log(4.0)] * 2), np.array([0.5, 0.5]))
        np.testing.assert_allclose(z.value, [2.0, 2.0])

    def test_noise_shape_mismatch(self):
        with pytest.raises(ContractError):
            sample_z(posterior([0.0, 0.0], [0.0, 0.0]), np.zeros(3))


class TestKL:
    def test_identical_distributions(self):
        assert kl_gaussian(posterior([0.0, 0.0], [0.0, 0.0])).item() == 0.0

    def test_shifted_mean(self):
        assert kl_gaussian(posterior([1.0], [0.0])).item() == pytest.approx(0.5)

    def test_wider_variance(self):
        assert kl_gaussian(posterior([0.0], [1.0])).item() == pytest.approx(0.5 * (np.e - 2.0), abs=1e-12)
        assert kl_gaussian(posterior([0.0], [1.0])).item() == pytest.approx(0.35914, abs=1e-5)

    def test_monte_carlo_agreement(self):
        eps = np.random.default_rng(0).standard_normal(1_000_000)
        z = np.sqrt(np.e) * eps
        # log q(z) - log p(z) for q = N(0, e)
        samples = -0.5 - 0.5 * eps ** 2 + 0.5 * z ** 2
        stderr = samples.std() / np.sqrt(samples.size)
        exact = kl_gaussian(posterior([0.0], [1.0])).item()
        assert abs(samples.mean() - exact) < 3 * stderr

    def test_non_negative(self, rng):
        for _ in range(20):
            post = posterior(rng.standard_normal(4), rng.standard_normal(4))
            assert kl_gaussian(post).item() >= 0.0


class TestSpanEncoder:
    def test_width_one_span_is_the_token_state(self):
        config = CONFIG.model_copy(update={"joint_dim": 4, "num_labels": 1})
        params = init_span_encoder(config, seed=0)
        params.label_weight[0] = np.eye(4)
        tape = Tape()
        out = encode_spans(params.constants(tape), [0, 3, 1], [(1, 2)], np.ones((1, 1)), tape=tape)
        x = params.embed[3]
        state = np.concatenate([lstm_single_step(params.forward.weight, params.forward.bias, x),
                                lstm_single_step(params.backward.weight, params.backward.bias, x)])
        np.testing.assert_allclose(out.value[0], state, atol=1e-12)

    def test_one_hot_posterior_uses_one_label_map(self):
        params = init_span_encoder(CONFIG, seed=3)
        spans = [(0, 2), (1, 4), (0, 4)]
        one_hot = np.zeros((3, 3))
        one_hot[:, 1] = 1.0
        tape = Tape()
        before = encode_spans(params.constants(tape), [1, 2, 3, 4], spans, one_hot, tape=tape).value
        params.label_weight[0] += 5.0
        params.label_weight[2] -= 5.0
        after = encode_spans(params.constants(tape), [1, 2, 3, 4], spans, one_hot, tape=tape).value
        np.testing.assert_allclose(before, after, rtol=0, atol=1e-12)

    def test_posterior_weighting_is_linear(self, rng):
        params = init_span_encoder(CONFIG, seed=4)
        tape = Tape()
        lifted = params.constants(tape)
        spans = [(0, 3), (2, 5)]
        weights = rng.dirichlet(np.ones(3), size=2)
        mixed = encode_spans(lifted, [0, 1, 2, 3, 4], spans, weights, tape=tape).value
        per_label = [encode_spans(lifted, [0, 1, 2, 3, 4], spans, np.tile(np.eye(3)[k], (2, 1)), tape=tape).value
                     for k in range(3)]
        expected = sum(weights[:, k:k + 1] * per_label[k] for k in range(3))
        np.testing.assert_allclose(mixed, expected, atol=1e-12)

    def test_span_sees_only_its_own_tokens(self):
        params = init_span_encoder(CONFIG, seed=5)
        tape = Tape()
        lifted = params.constants(tape)
        spans = [(1, 3), (2, 4)]
        posteriors = np.full((2, 3), 1.0 / 3)
        a = encode_spans(lifted, [0, 1, 2, 3, 4], spans, posteriors, tape=tape).value
        b = encode_spans(lifted, [5, 1, 2, 3, 5], spans, posteriors, tape=tape).value
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_output_rows_follow_input_order(self):
        params = init_span_encoder(CONFIG, seed=6)
        tape = Tape()
        lifted = params.constants(tape)
        posteriors = np.full((2, 3), 1.0 / 3)
        forward = encode_spans(lifted, [0, 1, 2, 3], [(0, 3), (1, 3)], posteriors, tape=tape).value
        swapped = encode_spans(lifted, [0, 1, 2, 3], [(1, 3), (0, 3)], posteriors, tape=tape).value
        np.testing.assert_allclose(forward, swapped[::-1], rtol=0, atol=1e-12)

    def test_empty_span_list(self):
        tape = Tape()
        out = encode_spans(init_span_encoder(CONFIG, seed=0).constants(tape), [1, 2], [], np.zeros((0, 3)), tape=tape)
        assert out.shape == (0, 4)

    def test_lstm_steps_per_span_token(self):
        tape = Tape()
        spans = [(0, 2), (1, 3), (2, 4), (0, 3)]
        encode_spans(init_span_encoder(CONFIG, seed=0).constants(tape), [1, 2, 3, 4], spans,
                     np.full((4, 3), 1.0 / 3), tape=tape)
        assert tape.counters["lstm_token_steps"] == 2 * sum(j - i for i, j in spans)

    def test_shared_embeddings(self):
        config = CONFIG.model_copy(update={"share_span_embeddings": True})
        params = init_span_encoder(config, seed=0)
        assert params.embed is None
        tape = Tape()
        with pytest.raises(ContractError):
            encode_spans(params.constants(tape), [1, 2], [(0, 2)], np.full((1, 3), 1.0 / 3), tape=tape)
        table = tape.constant(init_variational_encoder(config, seed=0).embed)
        out = encode_spans(params.constants(tape), [1, 2], [(0, 2)], np.full((1, 3), 1.0 / 3), tape=tape, embed=table)
        assert out.shape == (1, 4)

    def test_bad_posterior_shape(self):
        tape = Tape()
        with pytest.raises(ContractError):
            encode_spans(init_span_encoder(CONFIG, seed=0).constants(tape), [1, 2, 3], [(0, 2)],
                         np.ones((1, 2)), tape=tape)

    def test_gradients(self):
        template = init_span_encoder(CONFIG, seed=7)
        sentence, spans = [0, 3, 5, 2], [(0, 2), (1, 3), (1, 4)]
        posteriors = np.array([[0.2, 0.5, 0.3], [0.6, 0.2, 0.2], [0.1, 0.1, 0.8]])
        readout = np.random.default_rng(0).standard_normal((3, 4))

        def f(tape, p):
            params = template.map(lambda name, _: p[name])
            out = encode_spans(params, sentence, spans, posteriors, tape=tape)
            return ad.reduce_sum(ad.mul(out, readout))

        assert grad_check(f, template.as_dict(), max_coords=8) < 1e-4
