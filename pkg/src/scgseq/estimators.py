"""Surrogate losses whose plain backward pass yields a gradient estimator.

Costs are minimised.  ``naive`` ignores every path through a sampled token,
``full`` adds the score-function term for each stochastic node (with
reward-to-go and an optional baseline), ``gumbel`` backpropagates through a
reparameterised relaxation.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .distributions import CategoricalSample

ESTIMATORS = ("naive", "full", "gumbel")


class EstimatorError(ValueError):
    pass


@dataclass
class CostNode:
    """Scalar cost leaf.  ``step=None`` marks a sequence-level cost."""

    node: ad.Node
    differentiable: bool = True
    step: int | None = None

    def __post_init__(self):
        if self.node.value.ndim != 0:
            raise ad.ShapeError("cost nodes must be scalar")

    @property
    def value(self) -> float:
        return float(self.node.value)


@dataclass
class Baseline:
    kind: str = "none"
    decay: float = 0.99
    value: float = 0.0
    updates: int = field(default=0, compare=False)

    def __post_init__(self):
        if self.kind not in ("none", "ema"):
            raise ValueError(f"unknown baseline kind {self.kind!r}")
        if not 0.0 <= self.decay < 1.0:
            raise ValueError("decay must lie in [0, 1)")

    @property
    def offset(self) -> float:
        return self.value if self.kind == "ema" else 0.0


def baseline_update(baseline: Baseline, observed_return: float) -> Baseline:
    if baseline.kind != "ema":
        raise ValueError("only an ema baseline can be updated")
    value = baseline.decay * baseline.value + (1.0 - baseline.decay) * float(observed_return)
    if not np.isfinite(value):
        raise FloatingPointError("baseline became non-finite")
    return Baseline(baseline.kind, baseline.decay, value, baseline.updates + 1)


@dataclass
class SurrogateLoss:
    root: ad.Node
    kind: str

    @property
    def value(self) -> float:
        return float(self.root.value)


def downstream_costs(costs: list[CostNode], z: CategoricalSample) -> list[CostNode]:
    """Costs influenced by sample ``z``: later steps, plus sequence-level costs."""
    return [c for c in costs if c.step is None or c.step > z.step]


def reward_to_go(costs: list[CostNode], z: CategoricalSample) -> float:
    return float(sum(c.value for c in downstream_costs(costs, z)))


def _sum_costs(graph: ad.Graph, nodes: list[ad.Node]) -> ad.Node:
    if not nodes:
        return graph.constant(0.0)
    return nodes[0] if len(nodes) == 1 else ad.add_n(nodes)


def _graph_of(costs, samples=()):
    for c in costs:
        return c.node.graph
    for s in samples:
        return s.log_prob.graph
    raise EstimatorError("no costs and no samples to build a surrogate from")


def surrogate_naive(costs: list[CostNode]) -> SurrogateLoss:
    if any(not c.differentiable for c in costs):
        raise EstimatorError("naive gradient cannot handle a non-differentiable cost")
    graph = _graph_of(costs)
    return SurrogateLoss(_sum_costs(graph, [c.node for c in costs]), "naive")


def surrogate_full(costs: list[CostNode], samples: list[CategoricalSample],
                   baseline: Baseline | None = None) -> SurrogateLoss:
    graph = _graph_of(costs, samples)
    b = 0.0 if baseline is None else baseline.offset
    terms = [c.node for c in costs if c.differentiable]
    for z in samples:
        q = reward_to_go(costs, z)
        if not downstream_costs(costs, z):
            continue
        terms.append(ad.mul(z.log_prob, ad.detach(graph.constant(q - b))))
    return SurrogateLoss(_sum_costs(graph, terms), "full")


def surrogate_gumbel(costs: list[CostNode]) -> SurrogateLoss:
    graph = _graph_of(costs)
    if not graph.reparam_nodes:
        raise EstimatorError("gumbel surrogate needs a decode run in gumbel mode")
    if any(not c.differentiable for c in costs):
        raise EstimatorError("gumbel surrogate cannot handle a non-differentiable cost")
    return SurrogateLoss(_sum_costs(graph, [c.node for c in costs]), "gumbel")


def build_surrogate(kind: str, costs, samples=(), baseline=None) -> SurrogateLoss:
    if kind == "naive":
        return surrogate_naive(costs)
    if kind == "full":
        return surrogate_full(costs, list(samples), baseline)
    if kind == "gumbel":
        return surrogate_gumbel(costs)
    raise EstimatorError(f"unknown estimator {kind!r}")


def observed_return(costs: list[CostNode], samples: list[CategoricalSample]) -> float:
    """Per-sequence statistic tracked by the shared EMA baseline.

    The mean reward-to-go over the sequence's samples, which equals the
    sequence cost when the only cost is sequence-level.
    """
    if not samples:
        return float(sum(c.value for c in costs))
    return float(np.mean([reward_to_go(costs, z) for z in samples]))
