"""Ground truth by brute force: finite differences and path enumeration.

Nothing here calls the estimator code when computing exact quantities; the
exact gradient is the derivative of ``sum_path p(path) * cost(path)`` taken
directly, without any score-function identity.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import autodiff as ad
from .distributions import RngStream
from .estimators import Baseline, build_surrogate
from .seq2seq import DecodeRegime

MAX_PATHS = 10 ** 5


class EnumerationTooLarge(ValueError):
    pass


def finite_diff_gradient(loss_fn: Callable[[ad.ParameterStore], float], store: ad.ParameterStore,
                         eps: float = 1e-5, names=None) -> dict[str, np.ndarray]:
    """Central differences of ``loss_fn(store)`` for every coordinate."""
    out = {}
    for name in (store.names() if names is None else names):
        p = store[name]
        base = p.value.copy()
        grad = np.zeros_like(base)
        for idx in np.ndindex(base.shape):
            bumped = base.copy()
            bumped[idx] = base[idx] + eps
            p.value = bumped
            f_plus = loss_fn(store)
            bumped = base.copy()
            bumped[idx] = base[idx] - eps
            p.value = bumped
            f_minus = loss_fn(store)
            grad[idx] = (f_plus - f_minus) / (2.0 * eps)
        p.value = base
        out[name] = grad
    return out


def max_relative_error(a: dict, b: dict, floor: float = 1e-6) -> tuple[float, str, tuple]:
    """Largest ``|a-b| / max(|a|, |b|, floor)`` over all coordinates, and where.

    Coordinates smaller than ``floor`` in both maps are compared absolutely,
    since central differences cannot resolve them relatively.
    """
    worst, where = 0.0, ("", ())
    for name in a:
        x, y = np.asarray(a[name]), np.asarray(b[name])
        err = np.abs(x - y) / np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)
        if err.size and err.max() > worst:
            worst = float(err.max())
            where = (name, np.unravel_index(int(np.argmax(err)), err.shape))
    return worst, where[0], tuple(int(i) for i in where[1])


class _Branch(Exception):
    def __init__(self, width):
        self.width = width


class PathReplay:
    """Stands in for an RngStream and forces a given token path."""

    def __init__(self, path):
        self.path = tuple(path)
        self.pos = 0

    def categorical(self, probs) -> int:
        if self.pos >= len(self.path):
            raise _Branch(len(probs))
        tok = self.path[self.pos]
        self.pos += 1
        return tok


def _check_regime(regime: DecodeRegime, steps: int, example):
    if regime.kind == "teacher":
        return regime
    if regime.kind == "feed":
        if regime.mode != "hard":
            raise ValueError("enumeration needs hard sampling")
        if example is not None and len(example[1]) != steps:
            raise ValueError("feed regime runs exactly len(target) steps")
        return regime
    return replace(regime, max_len=steps)


def enumerate_paths(model, example, steps: int, regime: DecodeRegime):
    """Yield ``(path, graph, costs, samples)`` for every complete token path.

    Paths end early when the decode stops (<EOS> in the reward regime), so a
    short path carries the whole probability mass of its subtree.
    """
    if model.vocab_size ** steps > MAX_PATHS:
        raise EnumerationTooLarge(f"{model.vocab_size}^{steps} paths exceed {MAX_PATHS}")
    regime = _check_regime(regime, steps, example)
    stack = [()]
    while stack:
        path = stack.pop()
        graph = ad.Graph()
        replay = PathReplay(path)
        try:
            costs, samples = model.run(graph, example, regime, replay)
        except _Branch as b:
            stack.extend(path + (k,) for k in reversed(range(b.width)))
            continue
        yield path, graph, costs, samples


def path_log_prob(samples) -> float:
    return float(sum(float(z.log_prob.value) for z in samples))


def _total_cost(graph, costs) -> ad.Node:
    nodes = [c.node for c in costs]
    return ad.add_n(nodes) if nodes else graph.constant(0.0)


def enumerate_expected_loss(model, example, steps: int, regime: DecodeRegime) -> float:
    total = 0.0
    for _, _, costs, samples in enumerate_paths(model, example, steps, regime):
        total += np.exp(path_log_prob(samples)) * sum(c.value for c in costs)
    return total


def path_mass(model, example, steps: int, regime: DecodeRegime) -> float:
    return float(sum(np.exp(path_log_prob(s)) for _, _, _, s in
                     enumerate_paths(model, example, steps, regime)))


def enumerate_exact_gradient(model, example, steps: int, regime: DecodeRegime) -> dict[str, np.ndarray]:
    """Gradient of the exact expected loss, one backward per path.

    Each path contributes ``d/dparams [exp(sum log p) * total cost]``.
    """
    grad = {name: np.zeros_like(p.value) for name, p in model.store.items()}
    for _, graph, costs, samples in enumerate_paths(model, example, steps, regime):
        if samples:
            log_p = ad.add_n([z.log_prob for z in samples])
            term = ad.mul(ad.exp(log_p), _total_cost(graph, costs))
        else:
            term = _total_cost(graph, costs)
        for name, g in graph.backward(term, accumulate=False).items():
            grad[name] += g
    return grad


def expected_estimator_gradient(model, example, steps: int, regime: DecodeRegime,
                                estimator: str = "full", baseline: Baseline | None = None):
    """Exact expectation of an estimator: ``sum_path p(path) * estimate(path)``."""
    grad = {name: np.zeros_like(p.value) for name, p in model.store.items()}
    for _, graph, costs, samples in enumerate_paths(model, example, steps, regime):
        p = np.exp(path_log_prob(samples))
        loss = build_surrogate(estimator, costs, samples, baseline)
        for name, g in graph.backward(loss.root, accumulate=False).items():
            grad[name] += p * g
    return grad


def flatten(grads: dict, names) -> np.ndarray:
    return np.concatenate([np.ravel(grads[n]) for n in names])


def sample_gradient(model, example, regime: DecodeRegime, estimator: str, rng,
                    baseline: Baseline | None = None):
    """One Monte-Carlo gradient estimate; returns ``(grads, costs, samples)``."""
    graph = ad.Graph()
    costs, samples = model.run(graph, example, regime, rng)
    loss = build_surrogate(estimator, costs, samples, baseline)
    return graph.backward(loss.root, accumulate=False), costs, samples


@dataclass
class EstimatorStats:
    estimator: str
    baseline: str
    n_samples: int
    mean: np.ndarray
    variance: np.ndarray
    exact: np.ndarray
    names: list = field(default_factory=list)

    @property
    def bias(self) -> float:
        return float(np.max(np.abs(self.mean - self.exact)))

    @property
    def standard_error(self) -> np.ndarray:
        return np.sqrt(self.variance / self.n_samples)


@dataclass
class EnumerationReport:
    expected_loss: float
    exact_gradient: dict
    stats: dict = field(default_factory=dict)


def estimator_stats(model, example, estimator: str, n_samples: int, seed: int,
                    regime: DecodeRegime, exact: dict | None = None, steps: int | None = None,
                    baseline: Baseline | None = None) -> EstimatorStats:
    """Sample mean and unbiased variance of ``n_samples`` independent estimates.

    The i-th estimate draws from ``RngStream(seed).derive(i)``, so reports
    are reproducible and different estimators can share random numbers.
    """
    if n_samples < 2:
        raise ValueError("need at least two samples for a variance")
    names = model.store.names()
    if exact is None:
        exact = enumerate_exact_gradient(model, example, steps, regime)
    if estimator == "gumbel":
        run_regime = replace(regime, kind="feed", mode="gumbel")
    else:
        run_regime = regime
    base = RngStream(seed)
    rows = np.empty((n_samples, sum(model.store[n].value.size for n in names)))
    for i in range(n_samples):
        grads, _, _ = sample_gradient(model, example, run_regime, estimator, base.derive(i), baseline)
        rows[i] = flatten(grads, names)
    kind = "none" if baseline is None else baseline.kind
    return EstimatorStats(estimator, kind, n_samples, rows.mean(axis=0),
                          rows.var(axis=0, ddof=1), flatten(exact, names), names)


def converge_baseline(model, example, regime: DecodeRegime, seed: int, n_updates: int = 2000,
                      decay: float = 0.99) -> Baseline:
    """Run EMA updates on observed returns until the baseline has settled."""
    from .estimators import baseline_update, observed_return

    b = Baseline("ema", decay, 0.0)
    base = RngStream(seed, stream=1)
    for i in range(n_updates):
        graph = ad.Graph()
        costs, samples = model.run(graph, example, regime, base.derive(i))
        b = baseline_update(b, observed_return(costs, samples))
    return b
