"""Naive, score-function and Gumbel gradients on a four-way categorical toy.

A single draw z ~ Cat(softmax(theta)) pays cost values[z].  The cost only
depends on theta through the sample, so ignoring the sampling path (the
naive gradient) gives exactly zero.  The score-function estimator recovers
the true gradient in expectation; Gumbel-softmax trades a little bias for
lower variance.

    python demos/01_estimators_on_a_toy.py
"""
import numpy as np

from scgseq.oracle import enumerate_exact_gradient, estimator_stats, expected_estimator_gradient
from scgseq.seq2seq import DecodeRegime
from scgseq.toys import CategoricalToy

np.set_printoptions(precision=4, suppress=True)

toy = CategoricalToy([0.5, -0.3, 0.1, 0.0], [1.0, -2.0, 3.0, 0.5])
feed = DecodeRegime("feed")

print("probabilities         ", toy.probs())
exact = enumerate_exact_gradient(toy, None, 1, feed)["theta"]
print("exact gradient        ", exact)

# The expectation of each estimator, computed by summing over all four outcomes.
for kind in ("naive", "full"):
    g = expected_estimator_gradient(toy, None, 1, feed, kind)["theta"]
    print(f"E[{kind:5s}] (enumerated)", g, " max error", np.abs(g - exact).max())

# Gumbel estimates can't be enumerated (the noise is continuous), so sample them.
for tau in (2.0, 1.0, 0.5, 0.1):
    regime = DecodeRegime("feed", "gumbel", tau)
    s = estimator_stats(toy, None, "gumbel", 20000, seed=0, regime=regime, exact={"theta": exact})
    print(f"gumbel tau={tau:<4} mean", s.mean, f" bias {s.bias:.4f}  median var {np.median(s.variance):.3f}")

s = estimator_stats(toy, None, "full", 20000, seed=0, regime=feed, exact={"theta": exact})
print("full (sampled)     mean", s.mean, f" bias {s.bias:.4f}  median var {np.median(s.variance):.3f}")
