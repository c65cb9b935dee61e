"""Teacher-forced training of the attention model on the copy task.

Runs a shortened version of the regime-A experiment and prints the
validation curve, then greedily decodes a few validation sources.

    python demos/03_train_copy_task.py [max_steps]
"""
import logging
import sys
import tempfile

from scgseq.experiment import ExperimentConfig, TaskSpec, train
from scgseq.seq2seq import generate, load_checkpoint

logging.basicConfig(level=logging.INFO, format="%(message)s")
steps = int(sys.argv[1]) if len(sys.argv) > 1 else 1000

task = dict(kind="copy", n_train=2000, n_valid=200, vocab_size=20, len_min=3, len_max=10, seed=0)
with tempfile.TemporaryDirectory() as out:
    cfg = ExperimentConfig.from_dict(dict(task=task, regime="A", max_steps=steps,
                                          eval_interval=100, out_dir=out))
    result = train(cfg)
    print()
    print(f"{'step':>5} {'val CE':>8} {'val BLEU':>9}")
    for r in result.records:
        print(f"{r['step']:5d} {r['val_ce']:8.4f} {r['val_bleu']:9.2f}")

    # the best checkpoint carries its own vocabularies
    model, src_vocab, tgt_vocab, _ = load_checkpoint(result.run_dir / "best.npz")
    _, valid = TaskSpec(**task).load()
    print()
    for words, _ in valid.pairs[:5]:
        hyp = tgt_vocab.decode(generate(model, src_vocab.encode(words), 20))
        print(" ".join(words), "->", " ".join(hyp))
