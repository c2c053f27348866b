import numpy as np
import pytest

from hybrid_smoother.gaussian import NoiseCovariance, ValidationError
from hybrid_smoother.harness import Phase, phase_schedule, run_monte_carlo, run_once
from hybrid_smoother.model import MarkovModePrior, ModeModel, SwitchingSystem
from hybrid_smoother.scenarios import aircraft_tracking


def _single_mode():
    mode = ModeModel("only", [[1.0]], NoiseCovariance([[0.1]]), h_observation=[[1.0]],
                     r_measurement=NoiseCovariance([[0.2]]))
    return SwitchingSystem((mode,), MarkovModePrior.sticky(1), [0.0], NoiseCovariance([[1.0]]))


def test_run_once_is_deterministic():
    a = run_once(aircraft_tracking(), steps=20, seed=4)
    b = run_once(aircraft_tracking(), steps=20, seed=4)
    np.testing.assert_array_equal(a.marginals, b.marginals)
    np.testing.assert_array_equal(a.map_states, b.map_states)
    assert a.summary() == b.summary()


def test_single_mode_scores_are_perfect():
    rep = run_once(_single_mode(), steps=15, seed=1)
    assert rep.cross_entropy == 0.0
    assert rep.accuracy == 1.0
    assert rep.nll_sequence == 0.0
    assert rep.peak_leaves == 1


def test_low_noise_map_accuracy():
    s = aircraft_tracking(noise_scale=1e-2)
    sched = phase_schedule(s, [("CV", 8), ("CT", 8), ("CV", 8)])
    rep = run_once(s, schedule=sched, theta=1e-3, seed=2)
    assert rep.map_accuracy == 1.0


def test_filter_mode_selects_filter_scores():
    rep = run_once(aircraft_tracking(), steps=15, seed=3, mode="filter")
    assert rep.accuracy == rep.accuracy_filter
    assert rep.filter_marginals.shape == (14, 2)
    np.testing.assert_allclose(rep.filter_marginals.sum(axis=1), 1.0)


def test_single_run_battery_equals_run_once():
    s = aircraft_tracking()
    mc = run_monte_carlo(s, steps=12, runs=1, base_seed=7)
    one = run_once(s, steps=12, seed=7)
    np.testing.assert_array_equal(mc.runs[0].marginals, one.marginals)
    assert mc.mean_accuracy_smoother == one.accuracy_smoother


def test_battery_aggregates_are_distributions():
    mc = run_monte_carlo(aircraft_tracking(), steps=10, runs=3, base_seed=0)
    assert [r.seed for r in mc.runs] == [0, 1, 2]
    np.testing.assert_allclose(mc.mean_marginals_smoother.sum(axis=1), 1.0)
    np.testing.assert_allclose(mc.mean_marginals_filter.sum(axis=1), 1.0)
    assert mc.summary()["runs"] == 3


def test_parallel_battery_matches_serial():
    s = aircraft_tracking()
    a = run_monte_carlo(s, steps=8, runs=2, jobs=2)
    b = run_monte_carlo(s, steps=8, runs=2, jobs=1)
    np.testing.assert_array_equal(a.mean_marginals_smoother, b.mean_marginals_smoother)


class TestPhaseSchedule:
    def test_expands_phases(self):
        sch = phase_schedule(aircraft_tracking(), [Phase("CV", 2), Phase("CT", 3)])
        assert list(sch.modes) == [0, 0, 1, 1, 1]
        assert sch.steps == 6
        assert sch.controls is None

    def test_control_override(self):
        sch = phase_schedule(aircraft_tracking(), [("CV", 1), ("CT", 2, (0.5, -0.5))])
        np.testing.assert_array_equal(sch.controls, [[0, 0], [0.5, -0.5], [0.5, -0.5]])

    def test_unknown_label(self):
        with pytest.raises(ValidationError):
            phase_schedule(aircraft_tracking(), [("XX", 2)])

    def test_bad_duration(self):
        with pytest.raises(ValidationError):
            phase_schedule(aircraft_tracking(), [("CV", 0)])

    def test_schedule_length_conflict(self):
        sch = phase_schedule(aircraft_tracking(), [("CV", 3)])
        with pytest.raises(ValidationError):
            run_once(aircraft_tracking(), steps=10, schedule=sch)
