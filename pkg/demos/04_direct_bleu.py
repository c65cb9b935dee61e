"""From cross-entropy to direct BLEU optimisation on the lexicon task.

1. Train with fed samples (regime B) for a few hundred steps.
2. Continue from that checkpoint with cost -BLEU/100, the full
   score-function estimator and an EMA baseline (regime C).

Both stages are shortened; the acceptance suite runs the full-length
version.  Expect a few minutes on one core.

    python demos/04_direct_bleu.py
"""
import logging
import tempfile
from pathlib import Path

from scgseq.experiment import ExperimentConfig, train

logging.basicConfig(level=logging.INFO, format="%(message)s")
task = dict(kind="lexicon", n_train=2000, n_valid=200, vocab_size=20, len_min=3, len_max=10, seed=0)

with tempfile.TemporaryDirectory() as out:
    out = Path(out)
    pre = train(ExperimentConfig.from_dict(dict(
        task=task, regime="B", estimator="naive", max_steps=800, eval_interval=200,
        out_dir=str(out / "B"))))
    print("regime B summary:", pre.summary)

    direct = train(ExperimentConfig.from_dict(dict(
        task=task, regime="C", estimator="full", baseline=True, max_steps=800, eval_interval=200,
        init_checkpoint=str(pre.run_dir / "best.npz"), out_dir=str(out / "C"))))
    print("regime C summary:", direct.summary)
    print(f"best validation BLEU: B {pre.summary['bleu_eval_best']:.2f} -> "
          f"C {direct.summary['bleu_eval_best']:.2f}")
