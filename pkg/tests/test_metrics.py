import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_smoother.gaussian import ValidationError
from hybrid_smoother.metrics import accuracy, cross_entropy, nll_sequence
from hybrid_smoother.model import simulate
from hybrid_smoother.smoother import ModeMarginals, MultiHypothesisSmoother
from oracles import enumerate_posteriors, random_system


def _run(system, z, **kw):
    sm = MultiHypothesisSmoother(system, z0=z[0], **kw)
    for zk in z[1:]:
        sm.step(zk)
    return sm


class TestNll:
    def test_single_mode_is_zero(self):
        rng = np.random.default_rng(0)
        s = random_system(rng, n_modes=1)
        tr = simulate(s, 6, seed=0)
        assert nll_sequence(_run(s, tr.measurements), tr.modes) == 0.0

    def test_pruned_truth_is_infinite(self):
        rng = np.random.default_rng(1)
        s = random_system(rng, n=2, n_modes=2, m=2)
        tr = simulate(s, 6, seed=1)
        sm = _run(s, tr.measurements, leaf_cap=1)
        wrong = tuple(1 - m for m in sm.leaves[0].modes)
        assert nll_sequence(sm, wrong) == math.inf

    def test_matches_enumeration(self):
        rng = np.random.default_rng(2)
        s = random_system(rng, n=2, n_modes=2, m=1)
        tr = simulate(s, 4, seed=2)
        oracle = enumerate_posteriors(s, tr.measurements)
        sm = _run(s, tr.measurements)
        truth = tuple(int(m) for m in tr.modes)
        assert nll_sequence(sm, truth) == pytest.approx(-math.log(oracle[truth]), abs=1e-8)

    def test_length_checked(self):
        rng = np.random.default_rng(3)
        s = random_system(rng, n_modes=2)
        sm = _run(s, simulate(s, 4, seed=3).measurements)
        with pytest.raises(ValidationError):
            nll_sequence(sm, [0, 1])


class TestCrossEntropy:
    def test_one_hot_is_zero(self):
        table = np.eye(3)[[0, 2, 1, 1]]
        assert cross_entropy(table, [0, 2, 1, 1]) == 0.0

    def test_uniform(self):
        assert cross_entropy(np.full((10, 2), 0.5), [0, 1] * 5) == pytest.approx(10 * math.log(2))

    def test_worked_rows(self):
        table = np.array([[0.9, 0.1], [0.2, 0.8]])
        expected = -math.log(0.9) - math.log(0.8)
        assert cross_entropy(table, [0, 1]) == pytest.approx(expected, abs=1e-12)
        assert cross_entropy(ModeMarginals(table), [0, 1]) == pytest.approx(0.3285040669720361)

    def test_zero_probability_is_floored(self):
        assert math.isfinite(cross_entropy(np.array([[1.0, 0.0]]), [1]))


class TestAccuracy:
    def test_perfect_and_wrong(self):
        table = np.array([[0.9, 0.1], [0.2, 0.8]])
        assert accuracy(table, [0, 1]) == 1.0
        assert accuracy(table, [1, 0]) == 0.0

    def test_tie_goes_to_lowest_index(self):
        table = np.array([[0.5, 0.5], [0.5, 0.5], [0.4, 0.6]])
        assert accuracy(table, [0, 1, 1]) == pytest.approx(2 / 3)

    def test_empty(self):
        assert accuracy(np.zeros((0, 2)), []) == 1.0

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 20), st.integers(2, 4), st.integers(0, 2**31 - 1))
    def test_invariant_to_row_scaling_and_bounded(self, rows, k, seed):
        rng = np.random.default_rng(seed)
        table = rng.dirichlet(np.ones(k), size=rows)
        truth = rng.integers(0, k, rows)
        a = accuracy(table, truth)
        assert 0.0 <= a <= 1.0
        assert accuracy(table * rng.uniform(0.5, 2.0, (rows, 1)), truth) == a
        assert cross_entropy(table, truth) >= 0.0
