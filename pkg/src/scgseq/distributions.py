"""Seeded random streams, categorical sampling nodes and Gumbel machinery."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

EULER_GAMMA = 0.5772156649015329
_TWO52 = float(2 ** 52)


class RngStream:
    """Counter-based random stream keyed by ``(seed, stream)``.

    Backed by Philox, so a stream is fully determined by its key and any
    number of streams can be derived without sharing state.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        self._gen = np.random.Generator(np.random.Philox(ss))
        self.counter = 0

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream={self.stream}, counter={self.counter})"

    def derive(self, stream: int) -> "RngStream":
        """Independent child stream; same arguments give the same child."""
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream, int(stream)))
        child = RngStream.__new__(RngStream)
        child.seed, child.stream, child.counter = self.seed, self.stream, 0
        child._gen = np.random.Generator(np.random.Philox(ss))
        return child

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` draws from the open interval (0, 1)."""
        k = self._gen.integers(0, 2 ** 52, size=n, dtype=np.int64)
        self.counter += n
        return (k.astype(np.float64) + 0.5) / _TWO52

    def uniform(self) -> float:
        return float(self.uniforms(1)[0])

    def categorical(self, probs: np.ndarray) -> int:
        return inverse_cdf(probs, self.uniform())

    def integers(self, low: int, high: int, size=None):
        self.counter += 1 if size is None else int(np.prod(size))
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        self.counter += n
        return self._gen.permutation(n)


def uniform(rng: RngStream) -> float:
    return rng.uniform()


def inverse_cdf(probs: np.ndarray, u: float) -> int:
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    if idx >= len(probs):
        idx = int(np.flatnonzero(probs > 0)[-1])
    return idx


@dataclass
class CategoricalSample:
    index: int
    log_prob: ad.Node
    step: int


def sample_categorical(logits: ad.Node, rng, step: int) -> CategoricalSample:
    """Draw a token from ``softmax(logits)`` and register a stochastic node.

    ``rng`` is anything with a ``categorical(probs) -> int`` method: an
    :class:`RngStream`, or a replay object that forces a chosen path.
    """
    if logits.value.ndim != 1:
        raise ad.ShapeError(f"categorical logits must be a vector, got {logits.value.shape}")
    if step < 0:
        raise ValueError("step must be non-negative")
    logp = ad.log_softmax(logits)
    index = int(rng.categorical(np.exp(logp.value)))
    if not 0 <= index < logits.value.shape[0]:
        raise IndexError(f"sampled index {index} outside vocabulary")
    log_prob = ad.pick(logp, index)
    log_prob.stochastic = True
    log_prob.extra = index
    sample = CategoricalSample(index, log_prob, step)
    logits.graph.samples.append(sample)
    return sample


def gumbel_noise(rng: RngStream, n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be at least 1")
    return -np.log(-np.log(rng.uniforms(n)))


def gumbel_softmax(logits: ad.Node, temperature: float, rng: RngStream,
                   straight_through: bool = True, noise: np.ndarray | None = None) -> ad.Node:
    """Relaxed categorical sample ``softmax((logits + g) / temperature)``.

    With ``straight_through`` the forward value is the one-hot argmax of the
    relaxed sample and the backward pass differentiates the relaxation.
    ``noise`` freezes the Gumbel draw (used by gradient checks).
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    if logits.value.ndim != 1:
        raise ad.ShapeError("gumbel_softmax needs a vector of logits")
    graph = logits.graph
    if noise is None:
        noise = gumbel_noise(rng, logits.value.shape[0])
    perturbed = ad.add(logits, graph.constant(noise))
    y = ad.softmax(ad.mul(perturbed, graph.constant(1.0 / temperature)))
    if straight_through:
        hard = np.zeros_like(y.value)
        hard[int(np.argmax(y.value))] = 1.0
        y = ad.straight_through(hard, y)
    graph.reparam_nodes.append(y)
    return y
