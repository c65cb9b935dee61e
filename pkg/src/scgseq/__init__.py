"""Stochastic computation graphs for a toy attention seq2seq model.

Submodules: ``autodiff`` (tape), ``distributions`` (sampling, Gumbel),
``estimators`` (surrogate losses), ``seq2seq`` (model), ``metrics``,
``optim``, ``data``, ``oracle`` (enumeration and finite differences),
``experiment`` (training loop) and ``cli``.
"""

__version__ = "0.1.0"
