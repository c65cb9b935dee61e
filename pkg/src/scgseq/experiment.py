"""Experiment configuration and the training loop behind ``scgseq train``."""
from __future__ import annotations

import dataclasses
import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .data import (EOS, ParallelCorpus, batches, build_vocab, encode_corpus, gen_task,
                   load_parallel)
from .distributions import RngStream
from .estimators import Baseline, baseline_update, build_surrogate, observed_return
from .metrics import bleu_corpus, token_accuracy
from .optim import BLEU_LR, CE_LR, AdamState, NonFiniteGradientError, adam_step, clip_global_norm
from .seq2seq import (DecodeRegime, ModelConfig, Seq2Seq, generate, load_checkpoint,
                      save_checkpoint, teacher_ce)

log = logging.getLogger(__name__)

REGIMES = {"A": "teacher", "B": "feed", "C": "reward"}
SUMMARY_COLUMNS = ("regime", "estimator", "ce_train", "ce_eval_best", "bleu_train", "bleu_eval_best")
LOG_FIELDS = ("step", "train_ce", "val_ce", "train_bleu", "val_bleu", "wall_ms")


class ConfigError(ValueError):
    pass


class NumericFailure(FloatingPointError):
    pass


@dataclass
class TaskSpec:
    kind: str = "lexicon"
    n_train: int = 2000
    n_valid: int = 200
    vocab_size: int = 20
    len_min: int = 3
    len_max: int = 10
    seed: int = 0
    swap_prob: float = 0.5
    train_src: str | None = None
    train_tgt: str | None = None
    valid_src: str | None = None
    valid_tgt: str | None = None

    def load(self) -> tuple[ParallelCorpus, ParallelCorpus]:
        if self.train_src:
            if not (self.train_tgt and self.valid_src and self.valid_tgt):
                raise ConfigError("file-based tasks need train_src/train_tgt/valid_src/valid_tgt")
            return (load_parallel(self.train_src, self.train_tgt),
                    load_parallel(self.valid_src, self.valid_tgt))
        common = dict(vocab_size=self.vocab_size, len_min=self.len_min, len_max=self.len_max,
                      swap_prob=self.swap_prob, table_seed=self.seed)
        train = gen_task(self.kind, self.n_train, seed=2 * self.seed + 1, **common)
        valid = gen_task(self.kind, self.n_valid, seed=2 * self.seed + 2, **common)
        return train, valid


@dataclass
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    regime: str = "A"
    estimator: str = "naive"
    baseline: bool = False
    baseline_decay: float = 0.99
    preset: str = "desk"
    lr: float | None = None
    batch_size: int = 16
    max_steps: int = 3000
    eval_interval: int = 200
    patience: int = 5
    seed: int = 0
    tau: float = 1.0
    straight_through: bool = True
    clip_norm: float = 5.0
    max_len: int = 20
    train_eval_size: int = 200
    init_checkpoint: str | None = None
    cold_start: bool = False
    out_dir: str = "runs/default"

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        d = dict(d)
        task = d.pop("task", {})
        if isinstance(task, dict):
            tnames = {f.name for f in dataclasses.fields(TaskSpec)}
            if set(task) - tnames:
                raise ConfigError(f"unknown task fields: {sorted(set(task) - tnames)}")
            task = TaskSpec(**task)
        return cls(task=task, **d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @property
    def learning_rate(self) -> float:
        if self.lr is not None:
            return self.lr
        return BLEU_LR if self.regime == "C" else CE_LR

    @property
    def effective_estimator(self) -> str:
        # teacher forcing has no stochastic nodes: every estimator is plain backprop
        return "naive" if self.regime == "A" else self.estimator

    def decode_regime(self) -> DecodeRegime:
        mode = "gumbel" if self.regime == "B" and self.estimator == "gumbel" else "hard"
        return DecodeRegime(REGIMES[self.regime], mode, self.tau, self.straight_through,
                            self.max_len)

    def validate(self) -> "ExperimentConfig":
        if self.regime not in REGIMES:
            raise ConfigError(f"regime must be one of {sorted(REGIMES)}")
        if self.estimator not in ("naive", "full", "gumbel"):
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.regime == "C" and self.estimator != "full":
            raise ConfigError(f"estimator {self.estimator!r} cannot optimise a "
                              "non-differentiable cost; regime C needs 'full'")
        if self.baseline and self.effective_estimator != "full":
            raise ConfigError("a baseline only applies to the full estimator")
        if self.regime == "C" and not self.init_checkpoint and not self.cold_start:
            raise ConfigError("regime C starts from a CE-pretrained checkpoint; "
                              "set init_checkpoint or cold_start")
        if self.preset not in ("tiny", "desk", "paper"):
            raise ConfigError(f"unknown preset {self.preset!r}")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ConfigError("baseline_decay must lie in [0, 1)")
        for name in ("batch_size", "max_steps", "eval_interval", "max_len", "train_eval_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if not self.tau > 0 or not self.clip_norm > 0 or not self.learning_rate > 0:
            raise ConfigError("tau, clip_norm and lr must be positive")
        if self.task.kind not in ("copy", "reverse", "lexicon"):
            raise ConfigError(f"unknown task {self.task.kind!r}")
        if self.task.vocab_size <= 4 or self.task.len_min < 1 or self.task.len_max < self.task.len_min:
            raise ConfigError("invalid task ranges")
        return self


def evaluate(model: Seq2Seq, examples, max_len: int) -> dict:
    """Teacher-forced CE per token, corpus BLEU and token accuracy (greedy)."""
    ce_sum, n_tok, pairs, acc = 0.0, 0, [], 0.0
    for src, labels in examples:
        ce, n = teacher_ce(model, src, labels)
        ce_sum += ce
        n_tok += n
        ref = [t for t in labels if t != EOS]
        hyp = generate(model, src, max_len)
        pairs.append((hyp, ref))
        acc += token_accuracy(hyp, ref)
    return {"ce": ce_sum / n_tok, "bleu": bleu_corpus(pairs),
            "token_accuracy": acc / len(examples), "n": len(examples)}


def with_eos(examples):
    return [(s, t + [EOS]) for s, t in examples]


@dataclass
class RunResult:
    run_dir: Path
    summary: dict
    records: list
    model: Seq2Seq
    stopped_early: bool
    steps: int


def _write_summary(path: Path, summary: dict):
    header = "\t".join(SUMMARY_COLUMNS)
    row = "\t".join(repr(summary[c]) if isinstance(summary[c], float) else str(summary[c])
                    for c in SUMMARY_COLUMNS)
    path.write_text(header + "\n" + row + "\n")


def train(cfg: ExperimentConfig) -> RunResult:
    """Run one experiment and write its run directory.

    Raises :class:`ConfigError` for invalid configurations and
    :class:`NumericFailure` when a loss or gradient stops being finite.
    """
    cfg.validate()
    run_dir = Path(cfg.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))

    train_corpus, valid_corpus = cfg.task.load()
    if cfg.init_checkpoint:
        model, src_vocab, tgt_vocab, _ = load_checkpoint(cfg.init_checkpoint)
        if src_vocab is None or tgt_vocab is None:
            raise ConfigError("init checkpoint carries no vocabularies")
    else:
        src_vocab = build_vocab(train_corpus.sources)
        tgt_vocab = build_vocab(train_corpus.targets)
        mcfg = ModelConfig.from_preset(cfg.preset, len(src_vocab), len(tgt_vocab))
        model = Seq2Seq(mcfg, seed=cfg.seed)
    train_ex = with_eos(encode_corpus(train_corpus, src_vocab, tgt_vocab))
    valid_ex = with_eos(encode_corpus(valid_corpus, src_vocab, tgt_vocab))
    train_eval = train_ex[:cfg.train_eval_size]

    regime = cfg.decode_regime()
    estimator = cfg.effective_estimator
    baseline = Baseline("ema" if cfg.baseline else "none", cfg.baseline_decay)
    opt = AdamState(lr=cfg.learning_rate)
    sample_root = RngStream(cfg.seed, stream=1)
    order_rng = np.random.default_rng([cfg.seed, 0x0D])

    records, best, best_key, since_best = [], None, None, 0
    metrics_path = run_dir / "metrics.jsonl"
    metrics_path.write_text("")
    t0 = time.perf_counter()
    step, epoch, stopped_early, done = 0, 0, False, False
    example_counter = 0
    while not done:
        perm = order_rng.permutation(len(train_ex))
        shuffled = [train_ex[i] for i in perm]
        for batch in batches(shuffled, cfg.batch_size):
            returns = []
            for i in range(len(batch)):
                src, labels = batch.example(i)
                graph = ad.Graph()
                rng = sample_root.derive(example_counter)
                example_counter += 1
                costs, samples = model.run(graph, (src, labels), regime, rng)
                loss = build_surrogate(estimator, costs, samples, baseline)
                if not np.isfinite(loss.value):
                    raise NumericFailure(f"non-finite loss at step {step}")
                graph.backward(loss.root)
                returns.append(observed_return(costs, samples))
            for _, p in model.store.items():
                p.grad = p.grad / len(batch)
            try:
                clip_global_norm(model.store, cfg.clip_norm)
                adam_step(model.store, opt)
            except NonFiniteGradientError as e:
                raise NumericFailure(f"step {step}: {e}") from e
            if baseline.kind == "ema":
                for r in returns:
                    baseline = baseline_update(baseline, r)
            step += 1

            if step % cfg.eval_interval == 0 or step == cfg.max_steps:
                tr = evaluate(model, train_eval, cfg.max_len)
                va = evaluate(model, valid_ex, cfg.max_len)
                rec = {"step": step, "train_ce": tr["ce"], "val_ce": va["ce"],
                       "train_bleu": tr["bleu"], "val_bleu": va["bleu"],
                       "wall_ms": int(1000 * (time.perf_counter() - t0))}
                if not all(np.isfinite(rec[k]) for k in LOG_FIELDS):
                    raise NumericFailure(f"non-finite metrics at step {step}")
                records.append(rec)
                with open(metrics_path, "a") as fh:
                    fh.write(json.dumps(rec) + "\n")
                log.info("step %d val_ce %.4f val_bleu %.2f", step, va["ce"], va["bleu"])
                # direct BLEU optimisation stops on validation BLEU, the rest on CE
                key = -va["bleu"] if cfg.regime == "C" else va["ce"]
                if best_key is None or key < best_key:
                    best_key, best, since_best = key, rec, 0
                    save_checkpoint(run_dir / "best.npz", model, src_vocab, tgt_vocab,
                                    {"step": step})
                else:
                    since_best += 1
                if cfg.patience > 0 and since_best >= cfg.patience:
                    stopped_early = True
            if stopped_early or step >= cfg.max_steps:
                done = True
                break
        epoch += 1

    save_checkpoint(run_dir / "final.npz", model, src_vocab, tgt_vocab, {"step": step})
    summary = {
        "regime": cfg.regime,
        "estimator": estimator,
        "ce_train": best["train_ce"],
        "ce_eval_best": min(r["val_ce"] for r in records),
        "bleu_train": best["train_bleu"],
        "bleu_eval_best": max(r["val_bleu"] for r in records),
    }
    _write_summary(run_dir / "summary.tsv", summary)
    return RunResult(run_dir, summary, records, model, stopped_early, step)


def read_metrics(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
