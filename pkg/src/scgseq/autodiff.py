"""Reverse-mode automatic differentiation on an append-only tape.

Values are float64 numpy arrays of rank 0, 1 or 2.  A :class:`Graph` is
rebuilt for every example (define-by-run); trainable arrays live in a
:class:`ParameterStore` that outlives the graphs.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np

__all__ = [
    "ShapeError", "DomainError", "Node", "Graph", "Parameter", "ParameterStore",
    "add", "sub", "mul", "neg", "tanh", "sigmoid", "exp", "log", "matmul",
    "softmax", "log_softmax", "concat", "stack_rows", "select_row",
    "embedding_lookup", "pick", "slice_vec", "reduce_sum", "reduce_mean",
    "detach", "straight_through", "lstm_cell", "bilinear_attention", "add_n",
]


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


_graph_ids = itertools.count()


class Node:
    """Handle to one entry of a graph's tape."""

    __slots__ = ("graph", "index", "value", "parents", "backward_fn", "op",
                 "stochastic", "param_name", "extra")

    def __init__(self, graph, index, value, parents, backward_fn, op):
        self.graph = graph
        self.index = index
        self.value = value
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op
        self.stochastic = False
        self.param_name = None
        self.extra = None

    @property
    def shape(self):
        return self.value.shape

    def item(self) -> float:
        return float(self.value)

    def __repr__(self):
        return f"Node({self.op}#{self.index}, shape={self.value.shape})"

    def __add__(self, other):
        return add(self, _lift(self, other))

    def __radd__(self, other):
        return add(_lift(self, other), self)

    def __sub__(self, other):
        return sub(self, _lift(self, other))

    def __rsub__(self, other):
        return sub(_lift(self, other), self)

    def __mul__(self, other):
        return mul(self, _lift(self, other))

    def __rmul__(self, other):
        return mul(_lift(self, other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def _lift(node: Node, other) -> Node:
    if isinstance(other, Node):
        return other
    return node.graph.constant(other)


def _as_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    if arr.ndim > 2:
        raise ShapeError(f"rank {arr.ndim} tensors are not supported")
    return arr


class _Outer:
    """Lazily summed rank-one matrices ``sum_k outer(left_k, right_k)``.

    Weight gradients of recurrent steps are collected this way and formed with
    a single matrix product at the end of the sweep.
    """

    __slots__ = ("left", "right")

    def __init__(self, left, right):
        self.left = [left]
        self.right = [right]

    def merge(self, other: "_Outer") -> "_Outer":
        self.left.extend(other.left)
        self.right.extend(other.right)
        return self

    def dense(self) -> np.ndarray:
        if len(self.left) == 1:
            return np.outer(self.left[0], self.right[0])
        return np.stack(self.left, axis=1) @ np.stack(self.right)


def _accumulate(current, new):
    if current is None:
        return new
    if isinstance(current, _Outer):
        if isinstance(new, _Outer):
            return current.merge(new)
        current = current.dense()
    if isinstance(new, _Outer):
        new = new.dense()
    return current + new


def _dense(g):
    return g.dense() if isinstance(g, _Outer) else g


class Graph:
    """Append-only DAG; insertion order is a topological order."""

    def __init__(self):
        self.id = next(_graph_ids)
        self.nodes: list[Node] = []
        self.samples: list = []          # stochastic records, see distributions
        self.reparam_nodes: list[Node] = []
        self._params: dict[str, Node] = {}
        self._stores: dict[str, "ParameterStore"] = {}
        self.bound: dict = {}
        self.grads: list | None = None

    def __len__(self):
        return len(self.nodes)

    def _push(self, value, parents=(), backward_fn=None, op="op") -> Node:
        node = Node(self, len(self.nodes), value, tuple(parents), backward_fn, op)
        for p in node.parents:
            if p.graph is not self:
                raise ValueError("parent node belongs to another graph")
        self.nodes.append(node)
        return node

    # leaves

    def constant(self, values) -> Node:
        arr = _as_array(values)
        if not np.all(np.isfinite(arr)):
            raise ValueError("constant values must be finite")
        return self._push(arr, op="const")

    def parameter(self, store: "ParameterStore", name: str, init=None) -> Node:
        if name in self._params:
            raise KeyError(f"parameter {name!r} already registered in this graph")
        if name not in store:
            if init is None:
                raise KeyError(f"unknown parameter {name!r}")
            store.add(name, init)
        node = self._push(store[name].value, op="param")
        node.param_name = name
        self._params[name] = node
        self._stores[name] = store
        return node

    def parameters(self, store: "ParameterStore") -> dict[str, Node]:
        """Register every parameter of ``store`` and return name -> node."""
        return {name: self.parameter(store, name) for name in store.names()}

    @property
    def stochastic_count(self) -> int:
        return sum(1 for n in self.nodes if n.stochastic)

    # reverse sweep

    def backward(self, root: Node, accumulate: bool = True) -> dict[str, np.ndarray]:
        """Backpropagate from scalar ``root``.

        Returns the gradient of ``root`` for every parameter registered in the
        graph; with ``accumulate`` the same arrays are added into the stores.
        """
        if root.graph is not self:
            raise ValueError("root belongs to another graph")
        if root.value.ndim != 0:
            raise ShapeError(f"backward needs a scalar root, got shape {root.value.shape}")
        grads: list = [None] * len(self.nodes)
        grads[root.index] = np.ones((), dtype=np.float64)
        for i in range(root.index, -1, -1):
            g = grads[i]
            if g is None:
                continue
            node = self.nodes[i]
            if node.backward_fn is None:
                continue
            if isinstance(g, _Outer):
                g = grads[i] = g.dense()
            for parent, pg in zip(node.parents, node.backward_fn(g)):
                if pg is None:
                    continue
                j = parent.index
                grads[j] = _accumulate(grads[j], pg)
        grads = [_dense(g) for g in grads]
        self.grads = grads
        out = {}
        for name, node in self._params.items():
            g = grads[node.index]
            out[name] = np.zeros_like(node.value) if g is None else np.array(g)
            if accumulate:
                self._stores[name][name].grad += out[name]
        return out

    def grad_of(self, node: Node) -> np.ndarray:
        """Gradient of the last backward root with respect to ``node``."""
        if self.grads is None:
            raise RuntimeError("backward has not been run")
        g = self.grads[node.index]
        return np.zeros_like(node.value) if g is None else g


# elementwise


def _check_binary(a: Node, b: Node):
    if a.graph is not b.graph:
        raise ValueError("operands belong to different graphs")
    sa, sb = a.value.shape, b.value.shape
    if sa != sb and sa != () and sb != ():
        raise ShapeError(f"shape mismatch {sa} vs {sb}")


def _unbroadcast(g, shape):
    return np.sum(g) if shape == () and np.ndim(g) != 0 else g


def add(a: Node, b: Node) -> Node:
    _check_binary(a, b)
    sa, sb = a.value.shape, b.value.shape
    return a.graph._push(a.value + b.value, (a, b),
                         lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a: Node, b: Node) -> Node:
    _check_binary(a, b)
    sa, sb = a.value.shape, b.value.shape
    return a.graph._push(a.value - b.value, (a, b),
                         lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a: Node, b: Node) -> Node:
    _check_binary(a, b)
    av, bv = a.value, b.value
    return a.graph._push(av * bv, (a, b),
                         lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
                         "mul")


def add_n(nodes: Sequence[Node]) -> Node:
    """Sum of equally shaped nodes as a single tape entry."""
    if not nodes:
        raise ValueError("add_n needs at least one node")
    shape = nodes[0].value.shape
    for n in nodes:
        if n.value.shape != shape:
            raise ShapeError(f"shape mismatch {n.value.shape} vs {shape}")
    total = np.array(nodes[0].value)
    for n in nodes[1:]:
        total = total + n.value
    k = len(nodes)
    return nodes[0].graph._push(total, nodes, lambda g: (g,) * k, "add_n")


def neg(x: Node) -> Node:
    return x.graph._push(-x.value, (x,), lambda g: (-g,), "neg")


def tanh(x: Node) -> Node:
    y = np.tanh(x.value)
    return x.graph._push(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(v):
    return 0.5 * (np.tanh(0.5 * v) + 1.0)


def sigmoid(x: Node) -> Node:
    y = _sigmoid(x.value)
    return x.graph._push(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def exp(x: Node) -> Node:
    y = np.exp(x.value)
    return x.graph._push(y, (x,), lambda g: (g * y,), "exp")


def log(x: Node) -> Node:
    v = x.value
    if np.any(v <= 0):
        raise DomainError("log of a non-positive value")
    return x.graph._push(np.log(v), (x,), lambda g: (g / v,), "log")


# linear algebra


def matmul(a: Node, b: Node) -> Node:
    av, bv = a.value, b.value
    if av.ndim == 0 or bv.ndim == 0:
        raise ShapeError("matmul needs vector or matrix operands")
    if av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"inner dimensions differ: {av.shape} @ {bv.shape}")

    def backward(g):
        if av.ndim == 2 and bv.ndim == 2:
            return g @ bv.T, av.T @ g
        if av.ndim == 2:
            return _Outer(g, bv), av.T @ g
        if bv.ndim == 2:
            return bv @ g, _Outer(av, g)
        return g * bv, g * av

    return a.graph._push(av @ bv, (a, b), backward, "matmul")


# normalisation


def _require_vector(x: Node, what: str):
    if x.value.ndim != 1:
        raise ShapeError(f"{what} needs a vector, got shape {x.value.shape}")


def _softmax(v):
    e = np.exp(v - np.max(v))
    return e / e.sum()


def _log_softmax(v):
    shifted = v - np.max(v)
    return shifted - np.log(np.sum(np.exp(shifted)))


def softmax(x: Node) -> Node:
    _require_vector(x, "softmax")
    y = _softmax(x.value)
    return x.graph._push(y, (x,), lambda g: (y * (g - np.dot(g, y)),), "softmax")


def log_softmax(x: Node) -> Node:
    _require_vector(x, "log_softmax")
    y = _log_softmax(x.value)
    p = np.exp(y)
    return x.graph._push(y, (x,), lambda g: (g - p * np.sum(g),), "log_softmax")


# indexing and shape plumbing


def concat(*parts: Node) -> Node:
    for p in parts:
        _require_vector(p, "concat")
    sizes = [p.value.shape[0] for p in parts]
    bounds = np.cumsum([0] + sizes)
    value = np.concatenate([p.value for p in parts])
    return parts[0].graph._push(
        value, parts,
        lambda g: tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts))), "concat")


def stack_rows(rows: Sequence[Node]) -> Node:
    for r in rows:
        _require_vector(r, "stack_rows")
    value = np.stack([r.value for r in rows])
    return rows[0].graph._push(value, rows, lambda g: tuple(g), "stack_rows")


def slice_vec(x: Node, start: int, stop: int) -> Node:
    _require_vector(x, "slice_vec")
    n = x.value.shape[0]
    if not 0 <= start < stop <= n:
        raise IndexError(f"slice [{start}:{stop}] out of range for length {n}")

    def backward(g):
        out = np.zeros(n)
        out[start:stop] = g
        return (out,)

    return x.graph._push(x.value[start:stop], (x,), backward, "slice")


def select_row(m: Node, i: int) -> Node:
    v = m.value
    if v.ndim != 2:
        raise ShapeError("select_row needs a matrix")
    if not 0 <= i < v.shape[0]:
        raise IndexError(f"row {i} out of range for {v.shape[0]} rows")
    i = int(i)

    def backward(g):
        out = np.zeros_like(v)
        out[i] = g
        return (out,)

    return m.graph._push(v[i].copy(), (m,), backward, "select_row")


def embedding_lookup(table: Node, token_id: int) -> Node:
    node = select_row(table, token_id)
    node.op = "embedding"
    return node


def pick(x: Node, i: int) -> Node:
    """Scalar element ``x[i]`` of a vector."""
    _require_vector(x, "pick")
    n = x.value.shape[0]
    if not 0 <= i < n:
        raise IndexError(f"index {i} out of range for length {n}")
    i = int(i)

    def backward(g):
        out = np.zeros(n)
        out[i] = g
        return (out,)

    return x.graph._push(np.array(x.value[i]), (x,), backward, "pick")


def reduce_sum(x: Node) -> Node:
    shape = x.value.shape
    return x.graph._push(np.array(np.sum(x.value)), (x,),
                         lambda g: (np.full(shape, float(g)),), "sum")


def reduce_mean(x: Node) -> Node:
    shape = x.value.shape
    n = max(x.value.size, 1)
    value = np.array(np.sum(x.value) / n)
    return x.graph._push(value, (x,), lambda g: (np.full(shape, float(g) / n),), "mean")


def detach(x: Node) -> Node:
    if x.op == "detach":
        return x
    return x.graph._push(x.value, (), None, "detach")


def straight_through(hard, soft: Node) -> Node:
    """Forward value ``hard``; backward passes the gradient to ``soft`` unchanged."""
    hard = _as_array(hard)
    if hard.shape != soft.value.shape:
        raise ShapeError(f"shape mismatch {hard.shape} vs {soft.value.shape}")
    return soft.graph._push(hard, (soft,), lambda g: (g,), "straight_through")


# fused kernels


def lstm_cell(x: Node, state: Node, w_ih: Node, w_hh: Node, b: Node) -> Node:
    """One LSTM step on a packed state ``[h; c]``; returns packed ``[h'; c']``.

    Gate order is (input, forget, cell, output).
    """
    xv, sv, wi, wh, bv = x.value, state.value, w_ih.value, w_hh.value, b.value
    hidden = sv.shape[0] // 2
    if (wi.shape != (4 * hidden, xv.shape[0]) or wh.shape != (4 * hidden, hidden)
            or bv.shape != (4 * hidden,) or sv.shape != (2 * hidden,)):
        raise ShapeError(
            f"lstm shapes inconsistent: x{xv.shape} state{sv.shape} "
            f"W_ih{wi.shape} W_hh{wh.shape} b{bv.shape}")
    h, c = sv[:hidden], sv[hidden:]
    z = wi @ xv + wh @ h + bv
    sz = _sigmoid(z)
    ig, fg, og = sz[:hidden], sz[hidden:2 * hidden], sz[3 * hidden:]
    gg = np.tanh(z[2 * hidden:3 * hidden])
    c_new = fg * c + ig * gg
    tc = np.tanh(c_new)
    h_new = og * tc

    def backward(g):
        dh, dc_new = g[:hidden], g[hidden:]
        dc_new = dc_new + dh * og * (1.0 - tc * tc)
        dz = np.concatenate([
            dc_new * gg * ig * (1.0 - ig),
            dc_new * c * fg * (1.0 - fg),
            dc_new * ig * (1.0 - gg * gg),
            dh * tc * og * (1.0 - og),
        ])
        dstate = np.concatenate([wh.T @ dz, dc_new * fg])
        return wi.T @ dz, dstate, _Outer(dz, xv), _Outer(dz, h), dz

    return x.graph._push(np.concatenate([h_new, c_new]), (x, state, w_ih, w_hh, b),
                         backward, "lstm")


def bilinear_attention(h: Node, enc: Node, w_a: Node, mask=None) -> Node:
    """Context vector of multiplicative attention.

    ``score_t = h . (W_a enc_t)``; positions where ``mask`` is False get zero
    weight.  The attention weights are left in ``node.extra``.
    """
    hv, ev, wv = h.value, enc.value, w_a.value
    if ev.ndim != 2 or hv.ndim != 1 or wv.shape != (hv.shape[0], ev.shape[1]):
        raise ShapeError(f"attention shapes inconsistent: h{hv.shape} enc{ev.shape} W{wv.shape}")
    steps = ev.shape[0]
    keep = np.ones(steps, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if keep.shape != (steps,):
        raise ShapeError(f"mask shape {keep.shape} does not match {steps} positions")
    if not keep.any():
        raise ValueError("all attention positions are masked")
    u = wv.T @ hv
    scores = ev @ u
    weights = np.zeros(steps)
    weights[keep] = _softmax(scores[keep])
    context = weights @ ev

    def backward(g):
        da = ev @ g
        ds = weights * (da - np.dot(weights, da))
        du = ev.T @ ds
        d_enc = np.outer(weights, g) + np.outer(ds, u)
        return wv @ du, d_enc, _Outer(hv, du)

    node = h.graph._push(context, (h, enc, w_a), backward, "attention")
    node.extra = weights
    return node


# parameters


@dataclass
class Parameter:
    value: np.ndarray
    grad: np.ndarray
    slot: int


class ParameterStore:
    """Named trainable arrays with gradient accumulators."""

    def __init__(self):
        self._params: dict[str, Parameter] = {}

    def add(self, name: str, init) -> Parameter:
        if name in self._params:
            raise KeyError(f"duplicate parameter name {name!r}")
        value = _as_array(init).copy()
        if not np.all(np.isfinite(value)):
            raise ValueError(f"parameter {name!r} initialised with non-finite values")
        p = Parameter(value, np.zeros_like(value), len(self._params))
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name) -> bool:
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for p in self._params.values():
            p.grad = np.zeros_like(p.value)

    def grads(self) -> dict[str, np.ndarray]:
        return {k: p.grad.copy() for k, p in self._params.items()}

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.value.copy() for k, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]):
        missing = set(self._params) - set(state)
        if missing:
            raise KeyError(f"missing parameters: {sorted(missing)}")
        for k, p in self._params.items():
            v = np.asarray(state[k], dtype=np.float64)
            if v.shape != p.value.shape:
                raise ShapeError(f"{k}: expected {p.value.shape}, got {v.shape}")
            p.value = v.copy()
            p.grad = np.zeros_like(p.value)

    def copy(self) -> "ParameterStore":
        other = ParameterStore()
        for k, p in self._params.items():
            other.add(k, p.value)
        return other

    def num_elements(self) -> int:
        return sum(p.value.size for p in self._params.values())
