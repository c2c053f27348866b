"""Scores of estimated mode posteriors against a ground-truth sequence."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .gaussian import ValidationError
from .smoother import ModeMarginals, MultiHypothesisSmoother

PROB_FLOOR = 1e-300


def _table(marginals) -> np.ndarray:
    return marginals.table if isinstance(marginals, ModeMarginals) else np.asarray(marginals, float)


def _truth(truth, rows: int) -> np.ndarray:
    t = np.asarray(truth, dtype=int).reshape(-1)
    if t.shape[0] != rows:
        raise ValidationError(f"truth has {t.shape[0]} entries, expected {rows}")
    return t


def nll_sequence(smoother: MultiHypothesisSmoother, truth: Sequence[int]) -> float:
    """``-log`` posterior of the true sequence; ``inf`` once it has been pruned."""
    t = _truth(truth, smoother.step_index - 1)
    leaf = smoother.find_leaf(t)
    if leaf is None:
        return math.inf
    return max(0.0, -leaf.log_posterior)


def cross_entropy(marginals, truth: Sequence[int]) -> float:
    table = _table(marginals)
    t = _truth(truth, table.shape[0])
    p = table[np.arange(t.shape[0]), t]
    return float(-np.sum(np.log(np.maximum(p, PROB_FLOOR))))


def accuracy(marginals, truth: Sequence[int]) -> float:
    table = _table(marginals)
    t = _truth(truth, table.shape[0])
    if t.shape[0] == 0:
        return 1.0
    return float(np.mean(np.argmax(table, axis=1) == t))
