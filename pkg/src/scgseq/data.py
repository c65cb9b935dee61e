"""Synthetic tasks, plain-text corpora, vocabularies and batching."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

PAD, BOS, EOS, UNK = 0, 1, 2, 3
SPECIALS = ("<PAD>", "<BOS>", "<EOS>", "<UNK>")
TASKS = ("copy", "reverse", "lexicon")


class CorpusError(ValueError):
    pass


class Vocab:
    """Token <-> id bijection with the four reserved ids first."""

    def __init__(self, tokens: Sequence[str] = ()):
        self.itos: list[str] = list(SPECIALS)
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(SPECIALS)}
        for t in tokens:
            if t in self.stoi:
                raise ValueError(f"duplicate token {t!r}")
            self.stoi[t] = len(self.itos)
            self.itos.append(t)

    def __len__(self):
        return len(self.itos)

    def __eq__(self, other):
        return isinstance(other, Vocab) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return self.itos[len(SPECIALS):]

    @classmethod
    def from_list(cls, tokens: Sequence[str]) -> "Vocab":
        return cls(tokens)


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[str], list[str]]]

    def __post_init__(self):
        for i, (s, t) in enumerate(self.pairs):
            if not s or not t:
                raise CorpusError(f"pair {i} has an empty side")

    def __len__(self):
        return len(self.pairs)

    @property
    def sources(self):
        return [s for s, _ in self.pairs]

    @property
    def targets(self):
        return [t for _, t in self.pairs]

    def subset(self, n: int) -> "ParallelCorpus":
        return ParallelCorpus(self.pairs[:n])


def tokenize(line: str) -> list[str]:
    return line.split()


def detokenize(tokens: Sequence[str]) -> str:
    return " ".join(tokens)


def lexicon_tables(vocab_size: int, seed: int, swap_prob: float = 0.5, identity: bool = False):
    """Token map and pair-swap table for the lexicon task.

    Both are fixed functions of the seed, so the target is a deterministic
    function of the source.
    """
    rng = np.random.default_rng([seed, 0x1E71C0])
    content = np.arange(4, vocab_size)
    mapping = dict(zip(content, content if identity else rng.permutation(content)))
    swap = rng.random((vocab_size, vocab_size)) < swap_prob
    return {int(k): int(v) for k, v in mapping.items()}, swap


def gen_task(kind: str, n: int, vocab_size: int, len_min: int, len_max: int, seed: int,
             swap_prob: float = 0.5, identity_lexicon: bool = False,
             table_seed: int | None = None) -> ParallelCorpus:
    """Generate ``n`` pairs over content tokens ``"4" .. str(vocab_size - 1)``.

    ``vocab_size`` counts the four reserved ids.  ``table_seed`` fixes the
    lexicon rule separately from the sentence draw so train and validation
    splits can share one rule.
    """
    if kind not in TASKS:
        raise CorpusError(f"unknown task {kind!r}")
    if vocab_size <= 4:
        raise CorpusError("vocab_size must exceed the 4 reserved ids")
    if len_min < 1 or len_max < len_min:
        raise CorpusError("need 1 <= len_min <= len_max")
    if n < 1:
        raise CorpusError("n must be positive")
    if not 0.0 <= swap_prob <= 1.0:
        raise CorpusError("swap_prob must lie in [0, 1]")
    rng = np.random.default_rng([seed, 0x5EED])
    if kind == "lexicon":
        mapping, swap = lexicon_tables(vocab_size, seed if table_seed is None else table_seed,
                                       swap_prob, identity_lexicon)
    pairs = []
    for _ in range(n):
        length = int(rng.integers(len_min, len_max + 1))
        src = [int(t) for t in rng.integers(4, vocab_size, size=length)]
        if kind == "copy":
            tgt = list(src)
        elif kind == "reverse":
            tgt = src[::-1]
        else:
            tgt = [mapping[t] for t in src]
            for i in range(0, len(tgt) - 1, 2):
                if swap[src[i], src[i + 1]]:
                    tgt[i], tgt[i + 1] = tgt[i + 1], tgt[i]
        pairs.append(([str(t) for t in src], [str(t) for t in tgt]))
    return ParallelCorpus(pairs)


def _read_lines(path) -> list[str]:
    text = Path(path).read_bytes().decode("utf-8")
    lines = text.replace("\r\n", "\n").split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    return lines


def load_parallel(src_path, tgt_path) -> ParallelCorpus:
    src, tgt = _read_lines(src_path), _read_lines(tgt_path)
    if len(src) != len(tgt):
        raise CorpusError(f"line count mismatch: {len(src)} source vs {len(tgt)} target")
    pairs = []
    for i, (s, t) in enumerate(zip(src, tgt), start=1):
        s_tok, t_tok = tokenize(s), tokenize(t)
        if not s_tok or not t_tok:
            raise CorpusError(f"empty line {i}")
        pairs.append((s_tok, t_tok))
    return ParallelCorpus(pairs)


def write_parallel(corpus: ParallelCorpus, src_path, tgt_path):
    Path(src_path).write_text("".join(detokenize(s) + "\n" for s in corpus.sources), encoding="utf-8")
    Path(tgt_path).write_text("".join(detokenize(t) + "\n" for t in corpus.targets), encoding="utf-8")


def build_vocab(sentences: Sequence[Sequence[str]], min_freq: int = 1,
                max_size: int | None = None) -> Vocab:
    """Frequency-descending vocabulary, ties broken lexicographically."""
    counts = Counter(t for s in sentences for t in s)
    ranked = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    if max_size is not None:
        ranked = ranked[:max(max_size - len(SPECIALS), 0)]
    return Vocab(ranked)


@dataclass
class Batch:
    src: np.ndarray
    src_lengths: np.ndarray
    src_mask: np.ndarray
    tgt_in: np.ndarray
    tgt_out: np.ndarray
    tgt_lengths: np.ndarray
    tgt_mask: np.ndarray

    def __len__(self):
        return self.src.shape[0]

    def example(self, i: int) -> tuple[list[int], list[int]]:
        """Unpadded (source ids, label ids ending in <EOS>) for row ``i``."""
        return (self.src[i, :self.src_lengths[i]].tolist(),
                self.tgt_out[i, :self.tgt_lengths[i]].tolist())


def _pad(rows: list[list[int]]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lengths = np.array([len(r) for r in rows], dtype=np.int64)
    out = np.full((len(rows), int(lengths.max())), PAD, dtype=np.int64)
    for i, r in enumerate(rows):
        out[i, :len(r)] = r
    mask = np.arange(out.shape[1])[None, :] < lengths[:, None]
    return out, lengths, mask


def make_batch(examples: Sequence[tuple[list[int], list[int]]]) -> Batch:
    """Pad encoded (source ids, target ids) pairs; targets get <BOS>/<EOS>."""
    src, src_len, src_mask = _pad([list(s) for s, _ in examples])
    tgt_in, _, _ = _pad([[BOS] + list(t) for _, t in examples])
    tgt_out, tgt_len, tgt_mask = _pad([list(t) + [EOS] for _, t in examples])
    return Batch(src, src_len, src_mask, tgt_in, tgt_out, tgt_len, tgt_mask)


def encode_corpus(corpus: ParallelCorpus, src_vocab: Vocab, tgt_vocab: Vocab):
    return [(src_vocab.encode(s), tgt_vocab.encode(t)) for s, t in corpus.pairs]


def batches(examples: Sequence[tuple[list[int], list[int]]], batch_size: int,
            seed: int | None = None, bucket: bool = False) -> Iterator[Batch]:
    """Chunk encoded examples into padded batches.

    With ``bucket`` examples are sorted by target length before chunking;
    with a ``seed`` the chunk order is shuffled reproducibly.
    """
    if batch_size < 1:
        raise ValueError("batch_size must be positive")
    order = list(range(len(examples)))
    if bucket:
        order.sort(key=lambda i: (len(examples[i][1]), i))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if seed is not None:
        perm = np.random.default_rng([seed, 0xBA7C]).permutation(len(chunks))
        chunks = [chunks[i] for i in perm]
    for chunk in chunks:
        yield make_batch([examples[i] for i in chunk])
