"""Command line entry point: ``scgseq {gen-data,train,eval,gradcheck,estimator-bench}``.

Exit codes: 0 success, 1 configuration error, 2 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import typing
from pathlib import Path

import numpy as np

from .data import CorpusError, encode_corpus, gen_task, load_parallel, write_parallel
from .experiment import ConfigError, ExperimentConfig, TaskSpec, evaluate, train, with_eos
from .seq2seq import DecodeRegime, load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
MAX_BENCH_VOCAB, MAX_BENCH_STEPS = 4, 3


def _field_type(cls, f):
    hint = typing.get_type_hints(cls)[f.name]
    args = [a for a in typing.get_args(hint) if a is not type(None)]
    return args[0] if args else hint


def _add_dataclass_flags(parser, cls, prefix=""):
    for f in dataclasses.fields(cls):
        if f.name == "task":
            continue
        flag = "--" + (prefix + f.name).replace("_", "-")
        typ = _field_type(cls, f)
        dest = prefix + f.name
        if typ is bool:
            parser.add_argument(flag, dest=dest, action=argparse.BooleanOptionalAction, default=None)
        else:
            parser.add_argument(flag, dest=dest, type=typ, default=None)


def config_from_args(args) -> ExperimentConfig:
    """JSON config file (if any), then command-line overrides."""
    data = {}
    if args.config:
        data = json.loads(Path(args.config).read_text()) if Path(args.config).exists() else None
        if data is None:
            raise ConfigError(f"config file {args.config} not found")
    cfg = ExperimentConfig.from_dict(data)
    for f in dataclasses.fields(ExperimentConfig):
        if f.name != "task" and getattr(args, f.name, None) is not None:
            setattr(cfg, f.name, getattr(args, f.name))
    for f in dataclasses.fields(TaskSpec):
        v = getattr(args, "task_" + f.name, None)
        if v is not None:
            setattr(cfg.task, f.name, v)
    return cfg


def cmd_gen_data(args) -> int:
    corpus = gen_task(args.task, args.n, args.vocab_size, args.len_min, args.len_max, args.seed,
                      swap_prob=args.swap_prob, table_seed=args.table_seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_parallel(corpus, f"{out}.src", f"{out}.tgt")
    print(f"wrote {len(corpus)} pairs to {out}.src / {out}.tgt")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = config_from_args(args)
    result = train(cfg)
    print((result.run_dir / "summary.tsv").read_text(), end="")
    return EXIT_OK


def cmd_eval(args) -> int:
    model, src_vocab, tgt_vocab, _ = load_checkpoint(args.checkpoint)
    corpus = load_parallel(args.src, args.tgt)
    examples = with_eos(encode_corpus(corpus, src_vocab, tgt_vocab))
    m = evaluate(model, examples, args.max_len)
    print(json.dumps({"n": m["n"], "ce": m["ce"], "bleu": m["bleu"],
                      "token_accuracy": m["token_accuracy"]}))
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.seed)
    print("op\tmax_rel_error\tworst_coordinate\tstatus")
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return EXIT_OK if not failed else EXIT_NUMERIC


def bench_rows(toy: str, vocab: int, steps: int, regime: str, n_samples: int, seed: int,
               decay: float = 0.99) -> list[dict]:
    """Bias and variance of each estimator against the enumerated gradient."""
    from .oracle import converge_baseline, enumerate_exact_gradient, estimator_stats
    from .toys import CategoricalToy, ChainToy

    if vocab > MAX_BENCH_VOCAB or steps > MAX_BENCH_STEPS or vocab < 2 or steps < 1:
        raise ConfigError(f"bench toy must have 2 <= vocab <= {MAX_BENCH_VOCAB} "
                          f"and 1 <= steps <= {MAX_BENCH_STEPS}")
    rng = np.random.default_rng([seed, 0xBE7C])
    if toy == "categorical":
        model = CategoricalToy(rng.normal(size=vocab), rng.normal(3.0, 1.0, size=vocab))
        example, steps = None, 1
    elif toy == "chain":
        model = ChainToy(vocab, steps, seed)
        example = ([0], [int(t) for t in rng.integers(0, vocab, size=steps)])
    else:
        raise ConfigError(f"unknown toy {toy!r}")
    dec = DecodeRegime("feed" if regime == "B" else "reward", max_len=steps)
    exact = enumerate_exact_gradient(model, example, steps, dec)
    converged = converge_baseline(model, example, dec, seed, decay=decay)
    runs = [("full", None), ("full", converged)]
    if regime == "B":
        runs = [("naive", None)] + runs + [("gumbel", None)]
    rows = []
    for est, base in runs:
        s = estimator_stats(model, example, est, n_samples, seed, dec, exact=exact, baseline=base)
        rows.append({"estimator": est, "baseline": s.baseline, "n_samples": n_samples,
                     "bias": s.bias, "median_variance": float(np.median(s.variance)),
                     "mean_variance": float(np.mean(s.variance))})
    return rows


def cmd_estimator_bench(args) -> int:
    rows = bench_rows(args.toy, args.vocab, args.steps, args.regime, args.samples, args.seed)
    cols = list(rows[0])
    print("\t".join(cols))
    for r in rows:
        print("\t".join(f"{r[c]:.6g}" if isinstance(r[c], float) else str(r[c]) for c in cols))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="scgseq")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic parallel corpus")
    g.add_argument("--task", choices=["copy", "reverse", "lexicon"], default="lexicon")
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--vocab-size", type=int, default=20)
    g.add_argument("--len-min", type=int, default=3)
    g.add_argument("--len-max", type=int, default=10)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--table-seed", type=int, default=0)
    g.add_argument("--swap-prob", type=float, default=0.5)
    g.add_argument("--out", required=True, help="path prefix; writes PREFIX.src and PREFIX.tgt")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="run one experiment")
    t.add_argument("--config", help="JSON file with ExperimentConfig fields")
    _add_dataclass_flags(t, ExperimentConfig)
    _add_dataclass_flags(t, TaskSpec, prefix="task_")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="CE and corpus BLEU of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--src", required=True)
    e.add_argument("--tgt", required=True)
    e.add_argument("--max-len", type=int, default=20)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="finite-difference check of every op")
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_gradcheck)

    b = sub.add_parser("estimator-bench", help="bias/variance of estimators on an enumerable toy")
    b.add_argument("--toy", choices=["chain", "categorical"], default="chain")
    b.add_argument("--vocab", type=int, default=4)
    b.add_argument("--steps", type=int, default=3)
    b.add_argument("--regime", choices=["B", "C"], default="B")
    b.add_argument("--samples", type=int, default=1000)
    b.add_argument("--seed", type=int, default=0)
    b.set_defaults(func=cmd_estimator_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FloatingPointError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, CorpusError, OSError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
