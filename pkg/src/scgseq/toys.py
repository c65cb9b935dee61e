"""Small stochastic models whose sample spaces can be enumerated.

They follow the same ``run(graph, example, regime, rng)`` protocol as
:class:`~scgseq.seq2seq.Seq2Seq`, so the oracle and the estimators treat
them interchangeably.
"""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .data import EOS
from .distributions import gumbel_softmax, sample_categorical
from .estimators import CostNode
from .metrics import bleu_sentence, cross_entropy
from .seq2seq import DecodeRegime


class CategoricalToy:
    """One draw ``z ~ Cat(softmax(theta))`` with cost ``values[z]``.

    The cost depends on ``theta`` only through the sample, so the naive
    gradient is identically zero while the true gradient is not.  In gumbel
    mode the cost is ``dot(y, values)`` for the relaxed sample ``y``.
    """

    def __init__(self, logits, values):
        logits = np.asarray(logits, dtype=np.float64)
        self.values = np.asarray(values, dtype=np.float64)
        if logits.shape != self.values.shape or logits.ndim != 1:
            raise ValueError("logits and values must be vectors of equal length")
        self.store = ad.ParameterStore()
        self.store.add("theta", logits)

    @property
    def vocab_size(self) -> int:
        return self.values.shape[0]

    def probs(self) -> np.ndarray:
        e = np.exp(self.store["theta"].value - self.store["theta"].value.max())
        return e / e.sum()

    def exact_gradient(self) -> np.ndarray:
        """Closed form ``p * (values - p . values)``."""
        p = self.probs()
        return p * (self.values - p @ self.values)

    def run(self, graph: ad.Graph, example=None, regime: DecodeRegime | None = None, rng=None):
        theta = graph.bound.get("theta")
        if theta is None:
            theta = graph.bound["theta"] = graph.parameter(self.store, "theta")
        if regime is not None and regime.kind == "feed" and regime.mode == "gumbel":
            y = gumbel_softmax(theta, regime.temperature, rng, regime.straight_through)
            cost = ad.reduce_sum(ad.mul(y, graph.constant(self.values)))
            return [CostNode(cost, True, 1)], []
        z = sample_categorical(theta, rng, 0)
        cost = graph.constant(self.values[z.index])
        differentiable = regime is None or regime.kind != "reward"
        return [CostNode(cost, differentiable, 1 if differentiable else None)], [z]


class ChainToy:
    """Autoregressive categorical chain, a miniature of the seq2seq decoder.

    ``logits_t = theta[prev] + pos[t]`` with ``prev`` the token fed from
    step ``t-1`` (token 1 at the start).  Regime ``feed`` scores each step
    by cross-entropy against the target; regime ``reward`` samples until
    <EOS> and scores ``-BLEU/100``.
    """

    def __init__(self, vocab: int = 4, steps: int = 3, seed: int = 0, scale: float = 1.0):
        rng = np.random.default_rng([seed, 0xC4A1])
        self.store = ad.ParameterStore()
        self.store.add("theta", rng.normal(0.0, scale, (vocab, vocab)))
        self.store.add("pos", rng.normal(0.0, scale, (steps, vocab)))
        self.vocab = vocab
        self.steps = steps

    @property
    def vocab_size(self) -> int:
        return self.vocab

    def _params(self, graph):
        if "chain" not in graph.bound:
            graph.bound["chain"] = graph.parameters(self.store)
        return graph.bound["chain"]

    def run(self, graph: ad.Graph, example, regime: DecodeRegime, rng=None):
        P = self._params(graph)
        _, tgt = example
        n = len(tgt) if regime.kind != "reward" else min(regime.max_len, self.steps)
        costs, samples, prev, hyp = [], [], 1, []
        for t in range(n):
            if isinstance(prev, ad.Node):
                row = ad.matmul(prev, P["theta"])
            else:
                row = ad.select_row(P["theta"], prev)
            logits = ad.add(row, ad.select_row(P["pos"], t))
            if regime.kind == "teacher":
                costs.append(cross_entropy(ad.log_softmax(logits), tgt[t], step=t))
                prev = tgt[t]
            elif regime.kind == "feed" and regime.mode == "gumbel":
                costs.append(cross_entropy(ad.log_softmax(logits), tgt[t], step=t))
                if t + 1 < n:
                    prev = gumbel_softmax(logits, regime.temperature, rng, regime.straight_through)
            else:
                z = sample_categorical(logits, rng, t)
                samples.append(z)
                if regime.kind == "feed":
                    costs.append(cross_entropy(z.log_prob.parents[0], tgt[t], step=t))
                elif z.index == EOS:
                    break
                else:
                    hyp.append(z.index)
                prev = z.index
        if regime.kind == "reward":
            ref = [t for t in tgt if t != EOS]
            reward = bleu_sentence(hyp, ref) / 100.0
            costs.append(CostNode(graph.constant(-reward), False, None))
        return costs, samples
