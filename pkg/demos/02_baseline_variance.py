"""How much an EMA baseline shrinks score-function variance.

Shifting every cost by a constant leaves the expected gradient unchanged but
inflates the variance of the score-function estimate.  An exponential moving
average of observed returns tracks that constant and removes it.

    python demos/02_baseline_variance.py
"""
import numpy as np

from scgseq.oracle import converge_baseline, enumerate_exact_gradient, estimator_stats
from scgseq.seq2seq import DecodeRegime
from scgseq.toys import CategoricalToy, ChainToy

feed = DecodeRegime("feed")
reward = DecodeRegime("reward", max_len=3)

print(f"{'model':28s} {'baseline':>9s} {'var (none)':>11s} {'var (ema)':>10s}")
for shift in (0.0, 5.0, 20.0):
    toy = CategoricalToy([0.5, -0.3, 0.1, 0.0], np.array([1.0, -2.0, 3.0, 0.5]) + shift)
    exact = enumerate_exact_gradient(toy, None, 1, feed)
    b = converge_baseline(toy, None, feed, seed=0)
    plain = estimator_stats(toy, None, "full", 2000, 1, feed, exact=exact)
    based = estimator_stats(toy, None, "full", 2000, 1, feed, exact=exact, baseline=b)
    print(f"categorical, costs +{shift:<5} {b.value:9.3f} {np.median(plain.variance):11.3f} "
          f"{np.median(based.variance):10.3f}")

# A three-step chain scored by sentence BLEU: the regime used for direct BLEU training.
chain = ChainToy(4, 3, seed=0)
example = ([0], [3, 1, 3])
exact = enumerate_exact_gradient(chain, example, 3, reward)
b = converge_baseline(chain, example, reward, seed=0)
plain = estimator_stats(chain, example, "full", 2000, 1, reward, exact=exact)
based = estimator_stats(chain, example, "full", 2000, 1, reward, exact=exact, baseline=b)
print(f"{'chain, cost = -BLEU/100':28s} {b.value:9.3f} {np.median(plain.variance):11.4f} "
      f"{np.median(based.variance):10.4f}")
