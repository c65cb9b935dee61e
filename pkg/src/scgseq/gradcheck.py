"""Finite-difference checks for every differentiable op and the tiny seq2seq."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .distributions import RngStream, gumbel_softmax
from .oracle import finite_diff_gradient, max_relative_error
from .seq2seq import DecodeRegime, ModelConfig, Seq2Seq, init_params

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_error: float
    param: str
    coord: tuple

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= TOLERANCE

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}\t{self.max_rel_error:.3e}\t{self.param}{list(self.coord)}\t{status}"


def _probe(graph, node, rng):
    """Random linear functional of ``node`` so every output coordinate matters."""
    w = rng.normal(size=node.value.shape)
    if node.value.ndim == 0:
        return ad.mul(node, graph.constant(w))
    return ad.reduce_sum(ad.mul(node, graph.constant(w)))


def check(name: str, store: ad.ParameterStore, build: Callable[[ad.Graph, dict], ad.Node],
          eps: float = 1e-5) -> CheckResult:
    """Compare backward() of ``build`` against central differences."""

    def loss(s):
        g = ad.Graph()
        return float(build(g, g.parameters(s)).value)

    g = ad.Graph()
    root = build(g, g.parameters(store))
    analytic = g.backward(root, accumulate=False)
    numeric = finite_diff_gradient(loss, store, eps)
    err, param, coord = max_relative_error(analytic, numeric)
    return CheckResult(name, err, param, coord)


def _store(**arrays) -> ad.ParameterStore:
    s = ad.ParameterStore()
    for k, v in arrays.items():
        s.add(k, v)
    return s


def op_cases(seed: int = 0):
    """(name, store, build) for each primitive and fused op."""
    rng = np.random.default_rng(seed)
    n = lambda *shape: rng.normal(size=shape)  # noqa: E731
    probe_seed = int(rng.integers(2 ** 31))

    def probed(fn):
        def build(g, P):
            return _probe(g, fn(g, P), np.random.default_rng(probe_seed))
        return build

    H, D, T = 3, 2, 4
    cases = [
        ("add", _store(a=n(2, 3), b=n(2, 3)), probed(lambda g, P: ad.add(P["a"], P["b"]))),
        ("sub", _store(a=n(3), b=n(3)), probed(lambda g, P: ad.sub(P["a"], P["b"]))),
        ("mul", _store(a=n(2, 2), b=n(2, 2)), probed(lambda g, P: ad.mul(P["a"], P["b"]))),
        ("mul_scalar", _store(a=n(3), s=n()), probed(lambda g, P: ad.mul(P["s"], P["a"]))),
        ("neg", _store(a=n(3)), probed(lambda g, P: ad.neg(P["a"]))),
        ("tanh", _store(a=n(2, 3)), probed(lambda g, P: ad.tanh(P["a"]))),
        ("sigmoid", _store(a=n(4)), probed(lambda g, P: ad.sigmoid(P["a"]))),
        ("exp", _store(a=n(3)), probed(lambda g, P: ad.exp(P["a"]))),
        ("log", _store(a=rng.uniform(0.5, 2.0, 4)), probed(lambda g, P: ad.log(P["a"]))),
        ("matmul_mm", _store(a=n(2, 3), b=n(3, 2)), probed(lambda g, P: ad.matmul(P["a"], P["b"]))),
        ("matmul_mv", _store(a=n(2, 3), b=n(3)), probed(lambda g, P: ad.matmul(P["a"], P["b"]))),
        ("matmul_vm", _store(a=n(3), b=n(3, 2)), probed(lambda g, P: ad.matmul(P["a"], P["b"]))),
        ("matmul_vv", _store(a=n(3), b=n(3)), probed(lambda g, P: ad.matmul(P["a"], P["b"]))),
        ("softmax", _store(a=n(5)), probed(lambda g, P: ad.softmax(P["a"]))),
        ("log_softmax", _store(a=n(5)), probed(lambda g, P: ad.log_softmax(P["a"]))),
        ("concat", _store(a=n(2), b=n(3)), probed(lambda g, P: ad.concat(P["a"], P["b"]))),
        ("stack_rows", _store(a=n(3), b=n(3)), probed(lambda g, P: ad.stack_rows([P["a"], P["b"]]))),
        ("select_row", _store(m=n(3, 2)), probed(lambda g, P: ad.select_row(P["m"], 1))),
        ("embedding_lookup", _store(m=n(4, 3)), probed(lambda g, P: ad.embedding_lookup(P["m"], 2))),
        ("pick", _store(a=n(4)), probed(lambda g, P: ad.pick(P["a"], 3))),
        ("slice", _store(a=n(5)), probed(lambda g, P: ad.slice_vec(P["a"], 1, 4))),
        ("reduce_sum", _store(a=n(2, 3)), probed(lambda g, P: ad.reduce_sum(P["a"]))),
        ("reduce_mean", _store(a=n(4)), probed(lambda g, P: ad.reduce_mean(P["a"]))),
        ("add_n", _store(a=n(3), b=n(3), c=n(3)),
         probed(lambda g, P: ad.add_n([P["a"], P["b"], P["c"]]))),
        ("lstm_cell", _store(x=n(D), s=n(2 * H), wi=n(4 * H, D), wh=n(4 * H, H), b=n(4 * H)),
         probed(lambda g, P: ad.lstm_cell(P["x"], P["s"], P["wi"], P["wh"], P["b"]))),
        ("attention", _store(h=n(H), enc=n(T, 2 * H), w=n(H, 2 * H)),
         probed(lambda g, P: ad.bilinear_attention(P["h"], P["enc"], P["w"],
                                                   np.array([True, True, False, True])))),
    ]
    noise_rng = RngStream(seed, stream=7)
    frozen = -np.log(-np.log(noise_rng.uniforms(4)))
    cases.append(("gumbel_softmax_relaxed", _store(a=n(4)),
                  probed(lambda g, P: gumbel_softmax(P["a"], 0.7, None, False, noise=frozen))))
    return cases


def tiny_model(seed: int = 0) -> Seq2Seq:
    """H=4, E=4, V=5 model with weights large enough for relative checks."""
    cfg = ModelConfig(src_vocab=5, tgt_vocab=5, emb=4, hidden=4)
    return Seq2Seq(cfg, init_params(cfg, seed, scale=0.5))


def model_cases(seed: int = 0):
    model = tiny_model(seed)
    example = ([4, 3, 4], [3, 4, 2])

    def build_for(regime):
        def build(g, P):
            g.bound[id(model.store)] = P
            rng = RngStream(seed, stream=3)
            costs, _ = model.run(g, example, regime, rng)
            return ad.add_n([c.node for c in costs])
        return build

    return [
        ("seq2seq_teacher", model.store, build_for(DecodeRegime("teacher"))),
        ("seq2seq_feed_hard_frozen", model.store, build_for(DecodeRegime("feed", "hard"))),
        ("seq2seq_feed_gumbel_relaxed_frozen", model.store,
         build_for(DecodeRegime("feed", "gumbel", 0.8, straight_through=False))),
    ]


def run_all(seed: int = 0, include_model: bool = True) -> list[CheckResult]:
    cases = op_cases(seed) + (model_cases(seed) if include_model else [])
    return [check(name, store, build) for name, store, build in cases]
