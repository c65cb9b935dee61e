import numpy as np
import pytest

from scgseq.autodiff import ParameterStore
from scgseq.optim import (
    BLEU_LR,
    CE_LR,
    AdamState,
    NonFiniteGradientError,
    adam_step,
    clip_global_norm,
    global_norm,
    sgd_step,
)


def store_with(value, grad=None):
    s = ParameterStore()
    s.add("w", np.array(value, dtype=float))
    if grad is not None:
        s["w"].grad = np.array(grad, dtype=float)
    return s


def reference_adam(w, grad_fn, steps, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Plain scalar Adam used as an independent oracle."""
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w = w - lr * (m / (1 - b1 ** t)) / ((v / (1 - b2 ** t)) ** 0.5 + eps)
        out.append(w)
    return out


class TestAdam:
    def test_defaults(self):
        assert CE_LR == 1e-3 and BLEU_LR == 1e-4
        s = AdamState()
        assert (s.beta1, s.beta2, s.eps) == (0.9, 0.999, 1e-8)

    def test_first_step_is_signed_lr(self):
        s = store_with([1.0, -2.0, 0.5], [3.0, -0.01, 1e3])
        adam_step(s, AdamState(lr=0.01))
        np.testing.assert_allclose(s["w"].value, [1.0 - 0.01, -2.0 + 0.01, 0.5 - 0.01], rtol=1e-6)

    def test_zero_gradient(self):
        s = store_with([1.0, 2.0], [0.0, 0.0])
        state = adam_step(s, AdamState())
        np.testing.assert_array_equal(s["w"].value, [1.0, 2.0])
        assert state.t == 1

    def test_zeroes_gradients(self):
        s = store_with([1.0], [2.0])
        adam_step(s, AdamState())
        assert s["w"].grad[0] == 0.0

    def test_quadratic_bowl(self):
        s = store_with(1.0)
        state = AdamState(lr=0.1)
        expected = reference_adam(1.0, lambda w: 2 * w, 20, 0.1)
        trajectory = []
        for k in range(20):
            s["w"].grad = 2.0 * s["w"].value
            adam_step(s, state)
            trajectory.append(float(s["w"].value))
        np.testing.assert_allclose(trajectory, expected, rtol=1e-12)
        # momentum carries w past the minimum at step 12; before that |w| shrinks every step
        crossing = next(k for k, w in enumerate(trajectory) if w < 0)
        assert crossing == 11
        assert np.all(np.diff(np.abs([1.0] + trajectory[:crossing])) < 0)
        assert max(abs(w) for w in trajectory) < 1.0

    def test_odd_symmetry(self):
        rng = np.random.default_rng(0)
        w, g = rng.normal(size=5), rng.normal(size=5)
        a, b = store_with(w, g), store_with(-w, -g)
        adam_step(a, AdamState(lr=0.05))
        adam_step(b, AdamState(lr=0.05))
        np.testing.assert_array_equal(a["w"].value, -b["w"].value)

    def test_moments(self):
        s = store_with([0.0, 0.0], [1.0, -1.0])
        state = adam_step(s, AdamState())
        assert np.all(state.v["w"] >= 0)
        assert state.m["w"].shape == (2,)

    def test_non_finite_aborts(self):
        s = store_with([1.0, 2.0], [np.nan, 0.0])
        with pytest.raises(NonFiniteGradientError, match="w"):
            adam_step(s, AdamState())
        np.testing.assert_array_equal(s["w"].value, [1.0, 2.0])

    def test_state_dict_round_trip(self):
        s = store_with([1.0], [0.5])
        state = adam_step(s, AdamState())
        fresh = AdamState()
        fresh.load_state_dict(state.state_dict())
        assert fresh.t == 1
        np.testing.assert_array_equal(fresh.m["w"], state.m["w"])


class TestClip:
    def test_scale_half(self):
        s = store_with([0.0, 0.0], [6.0, 8.0])
        assert clip_global_norm(s, 5.0) == pytest.approx(0.5)
        np.testing.assert_allclose(s["w"].grad, [3.0, 4.0])

    def test_below_threshold(self):
        s = store_with([0.0], [3.0])
        assert clip_global_norm(s, 5.0) == 1.0
        assert s["w"].grad[0] == 3.0

    def test_post_norm(self):
        rng = np.random.default_rng(1)
        s = ParameterStore()
        for k in range(4):
            s.add(f"p{k}", np.zeros(7))
            s[f"p{k}"].grad = rng.normal(scale=10, size=7)
        clip_global_norm(s, 5.0)
        assert global_norm(s) <= 5.0 + 1e-12

    def test_bad_max_norm(self):
        with pytest.raises(ValueError):
            clip_global_norm(store_with([0.0], [1.0]), 0.0)


class TestSgd:
    def test_single(self):
        s = store_with(1.0, 0.5)
        sgd_step(s, 0.1)
        assert float(s["w"].value) == pytest.approx(0.95)

    def test_zero_gradient(self):
        s = store_with(1.0, 0.0)
        sgd_step(s, 0.1)
        assert float(s["w"].value) == 1.0

    def test_additive(self):
        s = store_with(1.0)
        for _ in range(2):
            s["w"].grad = np.array(0.5)
            sgd_step(s, 0.1)
        assert float(s["w"].value) == pytest.approx(0.9)
