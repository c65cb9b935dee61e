"""Adam, SGD and global-norm gradient clipping over a ParameterStore."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterStore

CE_LR = 1e-3
BLEU_LR = 1e-4


class NonFiniteGradientError(FloatingPointError):
    pass


@dataclass
class AdamState:
    lr: float = CE_LR
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def state_dict(self) -> dict:
        out = {"__t": np.array(self.t)}
        for k in self.m:
            out[f"m:{k}"] = self.m[k]
            out[f"v:{k}"] = self.v[k]
        return out

    def load_state_dict(self, state: dict):
        self.t = int(state["__t"])
        self.m = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("m:")}
        self.v = {k[2:]: np.array(v) for k, v in state.items() if k.startswith("v:")}


def _check_finite(store: ParameterStore):
    bad = [name for name, p in store.items() if not np.all(np.isfinite(p.grad))]
    if bad:
        raise NonFiniteGradientError(f"non-finite gradient in {', '.join(bad)}")


def adam_step(store: ParameterStore, state: AdamState) -> AdamState:
    """One bias-corrected Adam update; gradients are zeroed afterwards."""
    _check_finite(store)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, p in store.items():
        g = p.grad
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.value = p.value - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    store.zero_grad()
    return state


def sgd_step(store: ParameterStore, lr: float) -> ParameterStore:
    _check_finite(store)
    for _, p in store.items():
        p.value = p.value - lr * p.grad
    store.zero_grad()
    return store


def global_norm(store: ParameterStore) -> float:
    return float(np.sqrt(sum(float(np.sum(p.grad * p.grad)) for _, p in store.items())))


def clip_global_norm(store: ParameterStore, max_norm: float) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``.

    Returns the scale factor that was applied (1.0 when nothing changed).
    """
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(store)
    if not np.isfinite(norm):
        raise NonFiniteGradientError("gradient norm is not finite")
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for _, p in store.items():
        p.grad = p.grad * scale
    return scale
