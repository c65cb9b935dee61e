"""Bidirectional-LSTM encoder, LSTM decoder with multiplicative attention.

The decoder runs in three regimes: teacher forcing, feeding its own samples
(hard tokens or Gumbel relaxations), and free sampling scored by BLEU.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import BOS, EOS, PAD, Vocab
from .distributions import gumbel_softmax, sample_categorical
from .estimators import CostNode
from .metrics import SENTENCE_BLEU, BleuConfig, bleu_sentence, cross_entropy

PRESETS = {
    "tiny": {"emb": 4, "hidden": 4},
    "desk": {"emb": 32, "hidden": 64},
    "paper": {"emb": 300, "hidden": 256},
}
INIT_SCALE = 0.08
FORGET_BIAS = 1.0


@dataclass(frozen=True)
class ModelConfig:
    src_vocab: int
    tgt_vocab: int
    emb: int = 32
    hidden: int = 64

    @classmethod
    def from_preset(cls, preset: str, src_vocab: int, tgt_vocab: int) -> "ModelConfig":
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}")
        return cls(src_vocab, tgt_vocab, **PRESETS[preset])


@dataclass(frozen=True)
class DecodeRegime:
    """``teacher`` (A), ``feed`` (B, mode hard|gumbel) or ``reward`` (C)."""

    kind: str = "teacher"
    mode: str = "hard"
    temperature: float = 1.0
    straight_through: bool = True
    max_len: int = 20

    def __post_init__(self):
        if self.kind not in ("teacher", "feed", "reward"):
            raise ValueError(f"unknown regime {self.kind!r}")
        if self.mode not in ("hard", "gumbel"):
            raise ValueError(f"unknown feed mode {self.mode!r}")
        if self.kind == "reward" and self.mode == "gumbel":
            raise ValueError("the reward regime samples hard tokens only")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if self.max_len < 1:
            raise ValueError("max_len must be at least 1")


TEACHER = DecodeRegime("teacher")


def _param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    E, H = cfg.emb, cfg.hidden
    shapes = {"enc.src_emb": (cfg.src_vocab, E)}
    for cell, d in (("enc.fwd", E), ("enc.bwd", E), ("dec.cell", E)):
        shapes[f"{cell}.W_ih"] = (4 * H, d)
        shapes[f"{cell}.W_hh"] = (4 * H, H)
        shapes[f"{cell}.b"] = (4 * H,)
    shapes.update({
        "enc.bridge.W": (H, 2 * H),
        "enc.bridge.b": (H,),
        "dec.tgt_emb": (cfg.tgt_vocab, E),
        "dec.att.W_a": (H, 2 * H),
        "dec.out.W": (cfg.tgt_vocab, 3 * H),
        "dec.out.b": (cfg.tgt_vocab,),
    })
    return shapes


def init_params(cfg: ModelConfig, seed: int = 0, zero: bool = False,
                scale: float = INIT_SCALE) -> ad.ParameterStore:
    """Uniform(-scale, scale) weights with forget-gate biases at 1.0."""
    rng = np.random.default_rng([seed, 0x5E9])
    store = ad.ParameterStore()
    H = cfg.hidden
    for name, shape in _param_shapes(cfg).items():
        if zero:
            value = np.zeros(shape)
        else:
            value = rng.uniform(-scale, scale, size=shape)
            if name.endswith(("fwd.b", "bwd.b", "cell.b")):
                value[H:2 * H] = FORGET_BIAS
        store.add(name, value)
    return store


class Seq2Seq:
    def __init__(self, cfg: ModelConfig, store: ad.ParameterStore | None = None, seed: int = 0):
        self.cfg = cfg
        self.store = init_params(cfg, seed) if store is None else store
        expected = _param_shapes(cfg)
        for name, shape in expected.items():
            if name not in self.store or self.store[name].value.shape != shape:
                raise ad.ShapeError(f"parameter {name} missing or not of shape {shape}")

    @property
    def vocab_size(self) -> int:
        return self.cfg.tgt_vocab

    def bind(self, graph: ad.Graph) -> dict[str, ad.Node]:
        """Parameter nodes of this model in ``graph`` (registered once)."""
        key = id(self.store)
        if key not in graph.bound:
            graph.bound[key] = graph.parameters(self.store)
        return graph.bound[key]

    def run(self, graph: ad.Graph, example, regime: DecodeRegime, rng=None):
        """Decode ``example = (src ids, label ids)`` and return ``(costs, samples)``."""
        src, tgt = example
        if regime.kind == "teacher":
            return forward_teacher(self, graph, src, tgt), []
        if regime.kind == "feed":
            return forward_feed_samples(self, graph, src, tgt, rng, regime.mode,
                                        regime.temperature, regime.straight_through)
        ref = [t for t in tgt if t != EOS]
        cost, samples = forward_reward(self, graph, src, ref, rng, regime.max_len)
        return [cost], samples


def lstm_step(P: dict, cell: str, x: ad.Node, h: ad.Node, c: ad.Node) -> tuple[ad.Node, ad.Node]:
    """Unpacked LSTM step: returns ``(h', c')``."""
    state = lstm_packed(P, cell, x, ad.concat(h, c))
    H = h.value.shape[0]
    return ad.slice_vec(state, 0, H), ad.slice_vec(state, H, 2 * H)


def lstm_packed(P: dict, cell: str, x: ad.Node, state: ad.Node) -> ad.Node:
    return ad.lstm_cell(x, state, P[f"{cell}.W_ih"], P[f"{cell}.W_hh"], P[f"{cell}.b"])


def encode(model: Seq2Seq, graph: ad.Graph, src) -> tuple[ad.Node, ad.Node]:
    """Return ``(enc_states T x 2H, packed decoder initial state [h0; c0])``."""
    if len(src) == 0:
        raise ValueError("empty source sequence")
    P = model.bind(graph)
    H = model.cfg.hidden
    emb = [ad.embedding_lookup(P["enc.src_emb"], int(t)) for t in src]
    zero = graph.constant(np.zeros(2 * H))
    fwd, bwd = [], [None] * len(src)
    state = zero
    for x in emb:
        state = lstm_packed(P, "enc.fwd", x, state)
        fwd.append(ad.slice_vec(state, 0, H))
    state = zero
    for t in range(len(src) - 1, -1, -1):
        state = lstm_packed(P, "enc.bwd", emb[t], state)
        bwd[t] = ad.slice_vec(state, 0, H)
    enc = ad.stack_rows([ad.concat(f, b) for f, b in zip(fwd, bwd)])
    finals = ad.concat(fwd[-1], bwd[0])
    h0 = ad.tanh(ad.add(ad.matmul(P["enc.bridge.W"], finals), P["enc.bridge.b"]))
    return enc, ad.concat(h0, graph.constant(np.zeros(H)))


def attention(model: Seq2Seq, graph: ad.Graph, h_dec: ad.Node, enc: ad.Node, src_mask=None):
    """Return ``(context, weights)`` of multiplicative attention."""
    P = model.bind(graph)
    ctx = ad.bilinear_attention(h_dec, enc, P["dec.att.W_a"], src_mask)
    return ctx, ctx.extra


def decode_step(model: Seq2Seq, graph: ad.Graph, prev, state: ad.Node, enc: ad.Node, src_mask=None):
    """One decoder step from a token id or a relaxed one-hot node.

    Returns ``(logits, packed state')``.
    """
    P = model.bind(graph)
    if isinstance(prev, ad.Node):
        x = ad.matmul(prev, P["dec.tgt_emb"])
    else:
        x = ad.embedding_lookup(P["dec.tgt_emb"], int(prev))
    state = lstm_packed(P, "dec.cell", x, state)
    h = ad.slice_vec(state, 0, model.cfg.hidden)
    ctx = ad.bilinear_attention(h, enc, P["dec.att.W_a"], src_mask)
    logits = ad.add(ad.matmul(P["dec.out.W"], ad.concat(h, ctx)), P["dec.out.b"])
    return logits, state


def forward_teacher(model: Seq2Seq, graph: ad.Graph, src, tgt) -> list[CostNode]:
    """Per-step cross-entropy with ground-truth inputs (<BOS> first)."""
    enc, state = encode(model, graph, src)
    costs, prev = [], BOS
    for t, y in enumerate(tgt):
        logits, state = decode_step(model, graph, prev, state, enc)
        costs.append(cross_entropy(ad.log_softmax(logits), int(y), step=t))
        prev = y
    return costs


def forward_feed_samples(model: Seq2Seq, graph: ad.Graph, src, tgt, rng, mode: str = "hard",
                         temperature: float = 1.0, straight_through: bool = True):
    """Cross-entropy against ``tgt`` while feeding the decoder its own samples.

    Runs exactly ``len(tgt)`` steps.  ``hard`` registers one stochastic node
    per step; ``gumbel`` feeds reparameterised relaxations instead.
    """
    if mode not in ("hard", "gumbel"):
        raise ValueError(f"unknown feed mode {mode!r}")
    enc, state = encode(model, graph, src)
    costs, samples, prev = [], [], BOS
    for t, y in enumerate(tgt):
        logits, state = decode_step(model, graph, prev, state, enc)
        if mode == "hard":
            z = sample_categorical(logits, rng, t)
            costs.append(cross_entropy(z.log_prob.parents[0], int(y), step=t))
            samples.append(z)
            prev = z.index
        else:
            costs.append(cross_entropy(ad.log_softmax(logits), int(y), step=t))
            if t + 1 < len(tgt):
                prev = gumbel_softmax(logits, temperature, rng, straight_through)
    return costs, samples


def forward_reward(model: Seq2Seq, graph: ad.Graph, src, ref, rng, max_len: int,
                   bleu_cfg: BleuConfig = SENTENCE_BLEU):
    """Sample until <EOS> or ``max_len``; cost is ``-BLEU/100`` (not differentiable)."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    enc, state = encode(model, graph, src)
    samples, hyp, prev = [], [], BOS
    for t in range(max_len):
        logits, state = decode_step(model, graph, prev, state, enc)
        z = sample_categorical(logits, rng, t)
        samples.append(z)
        if z.index == EOS:
            break
        hyp.append(z.index)
        prev = z.index
    reward = bleu_sentence(hyp, list(ref), bleu_cfg) / 100.0
    cost = CostNode(graph.constant(-reward), differentiable=False, step=None)
    cost.node.extra = hyp
    return cost, samples


def generate(model: Seq2Seq, src, max_len: int) -> list[int]:
    """Greedy decoding; never emits <PAD> or <BOS>; ties go to the lowest id."""
    if max_len < 1:
        raise ValueError("max_len must be at least 1")
    graph = ad.Graph()
    enc, state = encode(model, graph, src)
    out, prev = [], BOS
    for _ in range(max_len):
        logits, state = decode_step(model, graph, prev, state, enc)
        scores = logits.value.copy()
        scores[[PAD, BOS]] = -np.inf
        tok = int(np.argmax(scores))
        if tok == EOS:
            break
        out.append(tok)
        prev = tok
    return out


def teacher_ce(model: Seq2Seq, src, tgt) -> tuple[float, int]:
    """Summed teacher-forced cross-entropy and the number of target tokens."""
    costs = forward_teacher(model, ad.Graph(), src, tgt)
    return float(sum(c.value for c in costs)), len(costs)


def save_checkpoint(path, model: Seq2Seq, src_vocab: Vocab | None = None,
                    tgt_vocab: Vocab | None = None, meta: dict | None = None):
    path = Path(path)
    header = {
        "model": asdict(model.cfg),
        "src_vocab": None if src_vocab is None else src_vocab.to_list(),
        "tgt_vocab": None if tgt_vocab is None else tgt_vocab.to_list(),
        "meta": meta or {},
    }
    arrays = {f"p:{k}": v for k, v in model.store.state_dict().items()}
    with open(path, "wb") as fh:
        np.savez(fh, __header=np.array(json.dumps(header)), **arrays)


def load_checkpoint(path):
    """Return ``(model, src_vocab, tgt_vocab, meta)``."""
    with np.load(path, allow_pickle=False) as z:
        header = json.loads(str(z["__header"]))
        state = {k[2:]: z[k] for k in z.files if k.startswith("p:")}
    cfg = ModelConfig(**header["model"])
    store = ad.ParameterStore()
    for name, value in state.items():
        store.add(name, value)
    sv = None if header["src_vocab"] is None else Vocab.from_list(header["src_vocab"])
    tv = None if header["tgt_vocab"] is None else Vocab.from_list(header["tgt_vocab"])
    return Seq2Seq(cfg, store), sv, tv, header["meta"]
