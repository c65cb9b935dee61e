import numpy as np
import pytest

from scgseq import autodiff as ad
from scgseq.distributions import RngStream, sample_categorical
from scgseq.estimators import (
    Baseline,
    CostNode,
    EstimatorError,
    baseline_update,
    build_surrogate,
    downstream_costs,
    observed_return,
    reward_to_go,
    surrogate_full,
    surrogate_gumbel,
    surrogate_naive,
)
from scgseq.oracle import enumerate_exact_gradient, expected_estimator_gradient
from scgseq.seq2seq import DecodeRegime
from scgseq.toys import CategoricalToy, ChainToy

FEED = DecodeRegime("feed")
REWARD = DecodeRegime("reward", max_len=3)


def fake_samples(graph, steps):
    logits = graph.constant([0.0, 0.0])
    return [sample_categorical(logits, RngStream(t), t) for t in steps]


def cost(graph, value, step=None, differentiable=True):
    return CostNode(graph.constant(value), differentiable, step)


class TestDownstream:
    def test_per_step_costs(self):
        g = ad.Graph()
        z = fake_samples(g, [0, 1, 2])
        costs = [cost(g, 1.0, s) for s in range(3)]
        assert downstream_costs(costs, z[0]) == costs[1:]
        assert downstream_costs(costs, z[2]) == []

    def test_sequence_cost(self):
        g = ad.Graph()
        z = fake_samples(g, [0, 1, 2])
        bleu = cost(g, -0.4, None, False)
        for zt in z:
            assert downstream_costs([bleu], zt) == [bleu]

    def test_reward_to_go(self):
        g = ad.Graph()
        z = fake_samples(g, [0, 1])
        costs = [cost(g, 1.0, 0), cost(g, 2.0, 1), cost(g, 4.0, None, False)]
        assert reward_to_go(costs, z[0]) == 6.0
        assert reward_to_go(costs, z[1]) == 4.0

    def test_cost_must_be_scalar(self):
        with pytest.raises(ad.ShapeError):
            CostNode(ad.Graph().constant([1.0, 2.0]))


class TestSurrogates:
    def test_naive_rejects_reward(self):
        g = ad.Graph()
        with pytest.raises(EstimatorError):
            surrogate_naive([cost(g, 1.0, None, False)])

    def test_gumbel_needs_gumbel_mode(self):
        g = ad.Graph()
        with pytest.raises(EstimatorError):
            surrogate_gumbel([cost(g, 1.0, 0)])

    def test_unknown_estimator(self):
        g = ad.Graph()
        with pytest.raises(EstimatorError):
            build_surrogate("reinforce", [cost(g, 1.0, 0)])

    def test_full_score_only_for_reward(self):
        store = ad.ParameterStore()
        store.add("l", np.array([0.2, -0.1, 0.4]))
        g = ad.Graph()
        z = sample_categorical(g.parameter(store, "l"), RngStream(0), 0)
        R = cost(g, -0.3, None, False)
        loss = surrogate_full([R], [z], Baseline("ema", 0.9, 0.1))
        assert loss.value == pytest.approx(float(z.log_prob.value) * (-0.3 - 0.1))
        grad = g.backward(loss.root)["l"]
        p = np.exp(store["l"].value) / np.exp(store["l"].value).sum()
        np.testing.assert_allclose(grad, (np.eye(3)[z.index] - p) * (-0.4), atol=1e-14)

    def test_last_sample_without_downstream_contributes_nothing(self):
        g = ad.Graph()
        z = fake_samples(g, [0, 1])
        costs = [cost(g, 1.0, 0), cost(g, 2.0, 1)]
        loss = surrogate_full(costs, z)
        # one score term for z0; z1 has nothing downstream
        assert loss.value == pytest.approx(3.0 + float(z[0].log_prob.value) * 2.0)

    def test_teacher_forcing_full_equals_naive(self):
        toy = ChainToy(4, 3, seed=1)
        example = ([0], [3, 2, 1])
        g1, g2 = ad.Graph(), ad.Graph()
        c1, s1 = toy.run(g1, example, DecodeRegime("teacher"))
        c2, s2 = toy.run(g2, example, DecodeRegime("teacher"))
        assert s1 == [] and s2 == []
        naive = surrogate_naive(c1)
        full = surrogate_full(c2, s2, Baseline("ema", 0.9, 5.0))
        assert naive.value == full.value
        gn, gf = g1.backward(naive.root), g2.backward(full.root)
        for k in gn:
            assert np.array_equal(gn[k], gf[k])

    def test_naive_equals_gradient_without_score_terms(self):
        toy = ChainToy(4, 3, seed=2)
        example = ([0], [3, 2, 1])
        g = ad.Graph()
        costs, samples = toy.run(g, example, FEED, RngStream(5))
        naive = g.backward(surrogate_naive(costs).root, accumulate=False)
        manual = g.backward(ad.add_n([c.node for c in costs]), accumulate=False)
        for k in naive:
            assert np.array_equal(naive[k], manual[k])


class TestTwoOutcomeToy:
    """p = sigmoid(theta), cost(z) = z: the estimator expectation is p(1-p)."""

    @pytest.mark.parametrize("theta", [-1.3, 0.0, 0.7])
    def test_enumeration(self, theta):
        toy = CategoricalToy([0.0, theta], [0.0, 1.0])
        p = 1.0 / (1.0 + np.exp(-theta))
        expected = expected_estimator_gradient(toy, None, 1, FEED, "full")["theta"][1]
        assert expected == pytest.approx(p * (1 - p), abs=1e-14)

    def test_single_outcome_estimates(self):
        toy = CategoricalToy([0.0, 0.4], [0.0, 1.0])
        p = 1.0 / (1.0 + np.exp(-0.4))
        seen = {}
        for i in range(50):
            g = ad.Graph()
            costs, samples = toy.run(g, None, FEED, RngStream(0).derive(i))
            grad = g.backward(surrogate_full(costs, samples).root)["theta"][1]
            seen[samples[0].index] = grad
        assert seen[1] == pytest.approx(1.0 - p)
        assert seen[0] == pytest.approx(0.0)


class TestUnbiasedness:
    @pytest.mark.parametrize("regime", [FEED, REWARD], ids=["B", "C"])
    @pytest.mark.parametrize("b", [None, Baseline("ema", 0.99, 0.37)], ids=["none", "ema"])
    def test_chain_toy(self, regime, b):
        toy = ChainToy(4, 3, seed=3)
        example = ([0], [3, 1, 2])
        exact = enumerate_exact_gradient(toy, example, 3, regime)
        est = expected_estimator_gradient(toy, example, 3, regime, "full", b)
        for k in exact:
            assert np.max(np.abs(exact[k] - est[k])) <= 1e-8

    def test_naive_is_biased_on_categorical_toy(self):
        toy = CategoricalToy([0.5, -0.3, 0.1, 0.0], [1.0, -2.0, 3.0, 0.5])
        naive = expected_estimator_gradient(toy, None, 1, FEED, "naive")["theta"]
        full = expected_estimator_gradient(toy, None, 1, FEED, "full")["theta"]
        exact = toy.exact_gradient()
        assert np.all(naive == 0.0)
        assert np.max(np.abs(naive - exact)) >= 0.1
        assert np.max(np.abs(full - exact)) <= 1e-8


class TestBaseline:
    def test_decay_zero_tracks_last(self):
        b = Baseline("ema", 0.0)
        for r in (1.0, -3.0, 2.5):
            b = baseline_update(b, r)
            assert b.value == r

    def test_geometric_convergence(self):
        b = Baseline("ema", 0.99)
        for _ in range(2000):
            b = baseline_update(b, 4.0)
        assert b.value == pytest.approx(4.0 * (1 - 0.99 ** 2000))
        assert b.updates == 2000

    def test_order_dependent(self):
        def run(seq):
            b = Baseline("ema", 0.5)
            for r in seq:
                b = baseline_update(b, r)
            return b.value
        assert run([1.0, 2.0]) != run([2.0, 1.0])
        assert run([1.0, 2.0]) == run([1.0, 2.0])

    def test_none_offset_is_zero(self):
        assert Baseline("none", value=3.0).offset == 0.0

    def test_none_cannot_update(self):
        with pytest.raises(ValueError):
            baseline_update(Baseline("none"), 1.0)

    @pytest.mark.parametrize("decay", [1.0, -0.1])
    def test_bad_decay(self, decay):
        with pytest.raises(ValueError):
            Baseline("ema", decay)

    def test_non_finite(self):
        with pytest.raises(FloatingPointError):
            baseline_update(Baseline("ema", 0.5), np.inf)

    def test_observed_return_sequence_cost(self):
        g = ad.Graph()
        z = fake_samples(g, [0, 1, 2])
        assert observed_return([cost(g, -0.25, None, False)], z) == -0.25
