import numpy as np
import pytest

from scgseq import autodiff as ad
from scgseq.distributions import (
    EULER_GAMMA,
    RngStream,
    gumbel_noise,
    gumbel_softmax,
    inverse_cdf,
    sample_categorical,
    uniform,
)
from scgseq.oracle import finite_diff_gradient, max_relative_error


def softmax(x):
    e = np.exp(x - np.max(x))
    return e / e.sum()


class TestRngStream:
    def test_reproducible(self):
        a = RngStream(7, 0).uniforms(100)
        b = RngStream(7, 0).uniforms(100)
        assert np.array_equal(a, b)

    def test_streams_differ(self):
        assert not np.array_equal(RngStream(7, 0).uniforms(10), RngStream(7, 1).uniforms(10))

    def test_derive_is_deterministic_and_distinct(self):
        root = RngStream(3)
        assert np.array_equal(root.derive(5).uniforms(8), RngStream(3).derive(5).uniforms(8))
        assert not np.array_equal(root.derive(5).uniforms(8), root.derive(6).uniforms(8))

    def test_derive_leaves_parent_untouched(self):
        a, b = RngStream(1), RngStream(1)
        a.derive(0).uniforms(50)
        assert np.array_equal(a.uniforms(5), b.uniforms(5))

    def test_counter(self):
        r = RngStream(0)
        r.uniforms(3)
        r.uniform()
        assert r.counter == 4

    def test_uniform_helper(self):
        assert 0.0 < uniform(RngStream(0)) < 1.0


class TestUniform:
    def test_open_interval_and_mean(self):
        u = RngStream(11).uniforms(10 ** 6)
        assert u.min() > 0.0 and u.max() < 1.0
        assert abs(u.mean() - 0.5) <= 0.01

    @pytest.mark.parametrize("k", [0, 2 ** 52 - 1])
    def test_extremes_are_inside(self, k):
        class Stub:
            def integers(self, *args, **kwargs):
                return np.array([k])

        r = RngStream(0)
        r._gen = Stub()
        assert 0.0 < r.uniforms(1)[0] < 1.0


class TestInverseCdf:
    def test_boundaries(self):
        p = np.array([0.25, 0.5, 0.25])
        assert inverse_cdf(p, 0.1) == 0
        assert inverse_cdf(p, 0.25) == 1
        assert inverse_cdf(p, 0.74) == 1
        assert inverse_cdf(p, 0.99) == 2

    def test_skips_zero_mass(self):
        assert inverse_cdf(np.array([0.5, 0.5, 0.0]), 1.0 - 1e-17) == 1


class TestSampleCategorical:
    def test_near_deterministic(self):
        rng = RngStream(0)
        hits = 0
        for _ in range(10 ** 4):
            g = ad.Graph()
            hits += sample_categorical(g.constant([50.0, -50.0, -50.0, -50.0]), rng, 0).index == 0
        assert hits / 10 ** 4 >= 0.999

    def test_fair_coin_frequencies(self):
        rng = RngStream(1)
        p = np.array([0.5, 0.5])
        counts = np.bincount([rng.categorical(p) for _ in range(10 ** 5)], minlength=2)
        assert np.all(np.abs(counts / 10 ** 5 - 0.5) <= 0.01)

    @pytest.mark.parametrize("vocab", [3, 8])
    def test_frequencies_match_softmax(self, vocab):
        logits = np.random.default_rng(vocab).normal(size=vocab)
        p = softmax(logits)
        rng = RngStream(2, vocab)
        draws = [rng.categorical(p) for _ in range(10 ** 5)]
        freq = np.bincount(draws, minlength=vocab) / 10 ** 5
        assert np.max(np.abs(freq - p)) <= 0.01

    def test_registers_stochastic_node(self):
        g = ad.Graph()
        z = sample_categorical(g.constant([0.0, 1.0, 2.0]), RngStream(0), step=4)
        assert g.samples == [z]
        assert z.log_prob.stochastic and z.step == 4
        assert 0.0 < np.exp(z.log_prob.value) <= 1.0
        assert g.stochastic_count == 1

    def test_log_prob_gradient(self):
        store = ad.ParameterStore()
        logits = np.array([0.3, -1.2, 0.8, 0.0])
        store.add("l", logits)
        g = ad.Graph()
        z = sample_categorical(g.parameter(store, "l"), RngStream(4), 0)
        grad = g.backward(z.log_prob)["l"]
        np.testing.assert_allclose(grad, np.eye(4)[z.index] - softmax(logits), atol=1e-14)

        def lp(s):
            return float(np.log(softmax(s["l"].value)[z.index]))
        err, _, _ = max_relative_error({"l": grad}, finite_diff_gradient(lp, store))
        assert err <= 1e-6

    def test_rejects_matrix(self):
        g = ad.Graph()
        with pytest.raises(ad.ShapeError):
            sample_categorical(g.constant(np.zeros((2, 2))), RngStream(0), 0)

    def test_rejects_negative_step(self):
        with pytest.raises(ValueError):
            sample_categorical(ad.Graph().constant([0.0, 0.0]), RngStream(0), -1)


class TestGumbel:
    def test_noise_finite_and_mean(self):
        g = gumbel_noise(RngStream(5), 10 ** 6)
        assert np.all(np.isfinite(g))
        assert abs(g.mean() - EULER_GAMMA) <= 0.01

    def test_noise_needs_positive_n(self):
        with pytest.raises(ValueError):
            gumbel_noise(RngStream(0), 0)

    def test_gumbel_max_matches_categorical(self):
        logits = np.array([1.0, -0.5, 0.2, 0.0])
        n = 10 ** 5
        g = gumbel_noise(RngStream(6), n * 4).reshape(n, 4)
        gm = np.bincount(np.argmax(logits + g, axis=1), minlength=4) / n
        rng = RngStream(6, 1)
        p = softmax(logits)
        cat = np.bincount([rng.categorical(p) for _ in range(n)], minlength=4) / n
        assert np.max(np.abs(gm - cat)) <= 0.01
        assert np.max(np.abs(gm - p)) <= 0.01

    def test_straight_through_is_one_hot(self):
        rng = RngStream(0)
        for _ in range(20):
            g = ad.Graph()
            y = gumbel_softmax(g.constant([0.5, 0.1, -0.3]), 1.0, rng).value
            assert sorted(y.tolist()) == [0.0, 0.0, 1.0]

    def test_relaxed_sums_to_one(self):
        rng = RngStream(1)
        for tau in (0.1, 1.0, 5.0):
            y = gumbel_softmax(ad.Graph().constant([2.0, 0.0, -1.0]), tau, rng, False).value
            assert abs(y.sum() - 1.0) <= 1e-12

    def test_low_temperature_concentrates(self):
        rng = RngStream(2)
        peaks = [gumbel_softmax(ad.Graph().constant([5.0, 0.0, 0.0]), 0.01, rng, False).value.max()
                 for _ in range(100)]
        assert np.mean(np.array(peaks) > 0.99) >= 0.95

    def test_straight_through_forward_is_argmax_of_relaxation(self):
        noise = np.array([0.3, -0.2, 1.1])
        g = ad.Graph()
        logits = g.constant([0.0, 1.0, 0.5])
        hard = gumbel_softmax(logits, 0.7, None, True, noise=noise).value
        soft = gumbel_softmax(logits, 0.7, None, False, noise=noise).value
        assert np.argmax(hard) == np.argmax(soft)

    def test_registers_reparam_node(self):
        g = ad.Graph()
        y = gumbel_softmax(g.constant([0.0, 0.0]), 1.0, RngStream(0))
        assert g.reparam_nodes == [y]

    def test_frozen_noise_gradient(self):
        noise = gumbel_noise(RngStream(9), 3)
        w = np.array([1.0, -2.0, 0.5])
        store = ad.ParameterStore()
        store.add("l", np.array([0.2, -0.4, 0.9]))

        def forward(s, straight_through):
            g = ad.Graph()
            y = gumbel_softmax(g.parameter(s, "l"), 0.8, None, straight_through, noise=noise)
            return g, ad.reduce_sum(ad.mul(y, g.constant(w)))

        numeric = finite_diff_gradient(lambda s: float(forward(s, False)[1].value), store)
        for st in (False, True):
            g, root = forward(store, st)
            grad = g.backward(root, accumulate=False)
            assert np.all(np.isfinite(grad["l"]))
            err, _, _ = max_relative_error(grad, numeric)
            assert err <= 1e-4

    @pytest.mark.parametrize("tau", [0.0, -1.0])
    def test_rejects_bad_temperature(self, tau):
        with pytest.raises(ValueError):
            gumbel_softmax(ad.Graph().constant([0.0, 0.0]), tau, RngStream(0))
