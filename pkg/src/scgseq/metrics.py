"""Cross-entropy cost nodes, BLEU and token accuracy."""
from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Sequence

from . import autodiff as ad
from .estimators import CostNode


@dataclass(frozen=True)
class BleuConfig:
    max_n: int = 4
    smoothing: str = "add_one"

    def __post_init__(self):
        if self.max_n < 1:
            raise ValueError("max_n must be at least 1")
        if self.smoothing not in ("none", "add_one"):
            raise ValueError(f"unknown smoothing {self.smoothing!r}")


SENTENCE_BLEU = BleuConfig()
UNSMOOTHED = BleuConfig(smoothing="none")


def cross_entropy(log_probs: ad.Node, target: int, step: int | None = None) -> CostNode:
    """``-log_probs[target]`` as a differentiable cost."""
    n = log_probs.value.shape[0]
    if not 0 <= target < n:
        raise IndexError(f"target {target} out of range for {n} classes")
    return CostNode(ad.neg(ad.pick(log_probs, target)), True, step)


def ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def ngram_stats(hyp: Sequence, ref: Sequence, max_n: int = 4) -> list[tuple[int, int]]:
    """(clipped matches, hypothesis n-gram count) for n = 1..max_n."""
    stats = []
    for n in range(1, max_n + 1):
        h, r = ngrams(hyp, n), ngrams(ref, n)
        matches = sum(min(c, r[g]) for g, c in h.items())
        stats.append((matches, max(len(hyp) - n + 1, 0)))
    return stats


def _bleu_from_stats(stats, hyp_len: int, ref_len: int, smoothing: str) -> float:
    if hyp_len == 0:
        return 0.0
    log_p = 0.0
    for n, (m, total) in enumerate(stats, start=1):
        if smoothing == "add_one" and n >= 2:
            m, total = m + 1, total + 1
        if m == 0 or total == 0:
            return 0.0
        log_p += math.log(m / total)
    log_bp = min(0.0, 1.0 - ref_len / hyp_len)
    return 100.0 * math.exp(log_bp + log_p / len(stats))


def bleu_sentence(hyp: Sequence, ref: Sequence, cfg: BleuConfig = SENTENCE_BLEU) -> float:
    stats = ngram_stats(list(hyp), list(ref), cfg.max_n)
    return _bleu_from_stats(stats, len(hyp), len(ref), cfg.smoothing)


def bleu_corpus(pairs: Sequence[tuple[Sequence, Sequence]], cfg: BleuConfig = UNSMOOTHED) -> float:
    """Corpus BLEU with n-gram counts and lengths pooled over ``(hyp, ref)`` pairs."""
    if len(pairs) == 0:
        raise ValueError("corpus BLEU needs at least one pair")
    pooled = [[0, 0] for _ in range(cfg.max_n)]
    hyp_len = ref_len = 0
    for hyp, ref in pairs:
        hyp, ref = list(hyp), list(ref)
        for k, (m, t) in enumerate(ngram_stats(hyp, ref, cfg.max_n)):
            pooled[k][0] += m
            pooled[k][1] += t
        hyp_len += len(hyp)
        ref_len += len(ref)
    return _bleu_from_stats(pooled, hyp_len, ref_len, "none")


def token_accuracy(hyp: Sequence, ref: Sequence) -> float:
    if len(ref) == 0:
        return 1.0 if len(hyp) == 0 else 0.0
    hits = sum(1 for a, b in zip(hyp, ref) if a == b)
    return hits / len(ref)
