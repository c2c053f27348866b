"""Acceptance criteria 1-10, one test each.

Every test records a ``criterion N: PASS|FAIL ...`` line; the lines are
printed together in the pytest terminal summary (and to stdout with ``-s``).
"""

import time

import numpy as np
import pytest

from hybrid_smoother.gaussian import (
    GaussianDensity,
    NoiseCovariance,
    eliminate_fragment,
    motion_factor,
    state_key,
)
from hybrid_smoother.harness import phase_schedule, run_monte_carlo
from hybrid_smoother.model import MarkovModePrior, SwitchingSystem, simulate
from hybrid_smoother.scenarios import (
    ContactToyParams,
    aircraft_tracking,
    contact_toy,
    gait_sequence,
    synthetic_base_motion,
)
from hybrid_smoother.smoother import MultiHypothesisSmoother
from oracles import (
    enumerate_posteriors,
    marginals_from_posteriors,
    pruned_enumeration,
    random_spd,
    random_system,
    rts_smoother,
    sequence_posterior_mean,
)

AIRCRAFT_PHASES = [("CV", 25), ("CT", 25), ("CV", 25), ("CT", 24)]


@pytest.fixture
def verdict(record_property):
    def report(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} {detail}"
        record_property("acceptance", line)
        print(line)
        assert ok, line

    return report


def _smooth(system, z, **kw):
    sm = MultiHypothesisSmoother(system, z0=z[0], **kw)
    for zk in z[1:]:
        sm.step(zk)
    return sm


def _oracle_errors(system, z):
    """Largest deviations (posterior, marginal, trajectory) from enumeration."""
    oracle = enumerate_posteriors(system, z)
    sm = _smooth(system, z, theta=0.0, lag=None)
    assert sm.n_leaves == len(oracle)
    post_err = traj_err = 0.0
    for leaf in sm.leaves:
        post_err = max(post_err, abs(leaf.probability - oracle[leaf.modes]))
        _, states = leaf.trajectory()
        traj_err = max(traj_err, np.max(np.abs(
            states - sequence_posterior_mean(system, leaf.modes, z))))
    slots = z.shape[0] - 1
    marg = marginals_from_posteriors(oracle, system.n_modes, slots)
    marg_err = float(np.max(np.abs(sm.mode_marginals().table - marg))) if slots else 0.0
    return post_err, marg_err, traj_err


def _kalman_errors(system, z):
    sm = _smooth(system, z)
    slots = z.shape[0] - 1
    means, covs = rts_smoother(system, [0] * slots, z)
    est = sm.map_estimate()
    return (float(np.max(np.abs(est.states - means))),
            float(np.max(np.abs(sm.leaves[0].density.covariance - covs[-1]))))


def _normalization_drift(make_system, rng, operations, leaf_cap=24):
    """Random step/prune/marginalize interleavings; worst deviation of any sum from 1."""
    worst = 0.0
    done = 0
    while done < operations:
        system = make_system(rng)
        z = simulate(system, 40, seed=int(rng.integers(2**31))).measurements
        sm = MultiHypothesisSmoother(system, z0=z[0], leaf_cap=leaf_cap)
        k = 1
        for _ in range(min(200, operations - done)):
            op = rng.choice(["step", "prune", "marginalize"], p=[0.6, 0.2, 0.2])
            if op == "step" and k < z.shape[0]:
                sm.step(z[k] if rng.random() > 0.1 else None)
                k += 1
            elif op == "prune":
                sm.prune(float(rng.choice([0.0, 1e-3, 0.05, 0.3, 0.9])))
            else:
                sm.marginalize(int(rng.integers(1, 5)),
                               "last_fork" if rng.random() < 0.3 else "lag")
            done += 1
            worst = max(worst, abs(sm.posteriors().sum() - 1.0))
            table = sm.mode_marginals().table
            if table.size:
                worst = max(worst, float(np.max(np.abs(table.sum(axis=1) - 1.0))))
    return worst


def _random_contact(rng, steps):
    trans, rot = synthetic_base_motion(steps, speed=rng.uniform(0.02, 0.1),
                                       yaw_rate=rng.uniform(-0.05, 0.05))
    params = ContactToyParams(
        mu_contact=0.01 * rng.standard_normal(3),
        sigma_contact=random_spd(rng, 3, 1e-3),
        mu_swing=0.05 * rng.standard_normal(3),
        sigma_swing=random_spd(rng, 3, 1e-2),
        base_translation=trans,
        base_rotation=rot,
        meas_cov=random_spd(rng, 3, 1e-2),
        self_transition=rng.uniform(0.6, 0.95),
        x0_mean=rng.standard_normal(3),
        x0_cov=random_spd(rng, 3, 0.1),
    )
    return contact_toy(params)


def _single_mode(system, index):
    return SwitchingSystem((system.modes[index],), MarkovModePrior.sticky(1),
                           system.x0_mean, system.x0_cov)


@pytest.fixture(scope="module")
def aircraft_battery():
    s = aircraft_tracking()
    start = time.perf_counter()
    mc = run_monte_carlo(s, theta=1e-3, runs=100, base_seed=0,
                         schedule=phase_schedule(s, AIRCRAFT_PHASES))
    return mc, time.perf_counter() - start


def test_criterion_01_oracle_equivalence(verdict):
    rng = np.random.default_rng(20240101)
    start = time.perf_counter()
    worst = np.zeros(3)
    for _ in range(50):
        n = int(rng.integers(1, 5))
        system = random_system(rng, n=n, n_modes=int(rng.choice([2, 3])),
                               m=int(rng.integers(1, n + 1)), p=int(rng.integers(1, 3)))
        steps = int(rng.integers(2, 7))
        z = simulate(system, steps, seed=int(rng.integers(2**31))).measurements
        worst = np.maximum(worst, _oracle_errors(system, z))
    elapsed = time.perf_counter() - start
    ok = worst[0] < 1e-8 and worst[1] < 1e-8 and worst[2] < 1e-7 and elapsed < 30
    verdict(1, ok, f"posterior {worst[0]:.1e}, marginal {worst[1]:.1e} (< 1e-8), "
                   f"trajectory {worst[2]:.1e} (< 1e-7), {elapsed:.1f} s (< 30 s)")


def test_criterion_02_kalman_reduction(verdict):
    rng = np.random.default_rng(2)
    worst = np.zeros(2)
    for _ in range(10):
        n = int(rng.integers(1, 5))
        system = random_system(rng, n=n, n_modes=1, m=int(rng.integers(1, n + 1)))
        z = simulate(system, int(rng.integers(2, 21)), seed=int(rng.integers(2**31))).measurements
        worst = np.maximum(worst, _kalman_errors(system, z))
    verdict(2, bool(np.all(worst < 1e-9)),
            f"trajectory {worst[0]:.1e}, terminal covariance {worst[1]:.1e} (< 1e-9)")


def test_criterion_03_aircraft_filter_accuracy(verdict, aircraft_battery):
    mc, elapsed = aircraft_battery
    acc = mc.mean_accuracy_filter
    verdict(3, acc > 0.90 and elapsed < 120,
            f"mean filter accuracy {acc:.4f} (> 0.90) over {len(mc.runs)} runs, {elapsed:.1f} s (< 120 s)")


def test_criterion_04_smoother_beats_filter(verdict, aircraft_battery):
    mc, _ = aircraft_battery
    sm, fl = mc.mean_accuracy_smoother, mc.mean_accuracy_filter
    verdict(4, sm >= fl, f"smoother {sm:.4f} >= filter {fl:.4f}")


def test_criterion_05_low_noise_map_recovery(verdict):
    s = aircraft_tracking(noise_scale=1e-2)
    sched = phase_schedule(s, AIRCRAFT_PHASES)
    exact = 0
    for seed in range(20):
        tr = simulate(s, sched.steps, mode_sequence=sched.modes, seed=seed)
        sm = _smooth(s, tr.measurements, theta=1e-3)
        exact += sm.map_estimate().mode_sequence == tuple(int(m) for m in tr.modes)
    verdict(5, exact == 20, f"MAP sequence exact on {exact}/20 runs")


def test_criterion_06_mode_constant_cancellation(verdict):
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(20):
        n = int(rng.integers(1, 5))
        system = random_system(rng, n=n, n_modes=int(rng.choice([2, 3])),
                               m=int(rng.integers(1, n + 1)), mode_dependent_noise=False)
        z = simulate(system, int(rng.integers(2, 7)), seed=int(rng.integers(2**31))).measurements
        a = _smooth(system, z)
        b = _smooth(system, z, include_mode_constant=False)
        worst = max(worst, float(np.max(np.abs(a.posteriors() - b.posteriors()))))
    verdict(6, worst <= 1e-12, f"max posterior difference {worst:.1e} (<= 1e-12)")


def test_criterion_07_normalization(verdict):
    def make(rng):
        n = int(rng.integers(1, 4))
        return random_system(rng, n=n, n_modes=int(rng.choice([2, 3])), m=int(rng.integers(1, n + 1)))

    worst = _normalization_drift(make, np.random.default_rng(7), 10_000)
    verdict(7, worst <= 1e-9, f"max |sum - 1| {worst:.1e} over 10^4 operations (<= 1e-9)")


def test_criterion_08_square_fragment_residual(verdict):
    rng = np.random.default_rng(8)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 7))
        prior = GaussianDensity.from_moments(state_key(0), rng.standard_normal(n),
                                             NoiseCovariance(random_spd(rng, n)))
        motion = motion_factor(state_key(0), state_key(1), rng.standard_normal((n, n)),
                               rng.standard_normal(n), NoiseCovariance(random_spd(rng, n)))
        worst = max(worst, eliminate_fragment(prior, motion).half_residual_sq)
    verdict(8, worst < 1e-10, f"max half_residual_sq {worst:.1e} over 100 fragments (< 1e-10)")


def test_criterion_09_pruning_regression(verdict):
    s = aircraft_tracking()
    sched = phase_schedule(s, [("CV", 4), ("CT", 4), ("CV", 3)])
    tr = simulate(s, 12, mode_sequence=sched.modes, seed=9)
    exact = _smooth(s, tr.measurements, theta=0.0).mode_marginals().table
    pruned_sm = _smooth(s, tr.measurements, theta=1e-3)
    pruned = pruned_sm.mode_marginals().table
    tv = float(np.max(0.5 * np.abs(exact - pruned).sum(axis=1)))
    # diagnostic: distance to an independent enumeration with the same pruning rule
    oracle = pruned_enumeration(s, tr.measurements, 1e-3)
    fidelity = max(abs(leaf.probability - oracle[leaf.modes]) for leaf in pruned_sm.leaves)
    verdict(9, tv < 1e-3, f"max per-row total variation {tv:.1e} (< 1e-3), K=12; "
                          f"pruned run vs pruned enumeration {fidelity:.1e}")


def test_criterion_10_contact_substitute(verdict):
    rng = np.random.default_rng(10)
    start = time.perf_counter()
    oracle_worst = np.zeros(3)
    for _ in range(20):
        steps = int(rng.integers(2, 7))
        system = _random_contact(rng, steps)
        z = simulate(system, steps, seed=int(rng.integers(2**31))).measurements
        oracle_worst = np.maximum(oracle_worst, _oracle_errors(system, z))
    kalman_worst = np.zeros(2)
    for i in range(10):
        steps = int(rng.integers(2, 21))
        system = _single_mode(_random_contact(rng, steps), i % 2)
        z = simulate(system, steps, seed=int(rng.integers(2**31))).measurements
        kalman_worst = np.maximum(kalman_worst, _kalman_errors(system, z))
    drift = _normalization_drift(lambda r: _random_contact(r, 40), rng, 10_000)
    gait = contact_toy(steps=31)
    tr = simulate(gait, 31, mode_sequence=gait_sequence(31), seed=10)
    gait_acc = float(np.mean(
        _smooth(gait, tr.measurements, theta=0.01).mode_marginals().argmax() == tr.modes))
    elapsed = time.perf_counter() - start
    ok = (oracle_worst[0] < 1e-8 and oracle_worst[1] < 1e-8 and oracle_worst[2] < 1e-7
          and np.all(kalman_worst < 1e-9) and drift <= 1e-9)
    verdict(10, ok, f"3D contact: oracle {oracle_worst.max():.1e}, Kalman {kalman_worst.max():.1e}, "
                    f"normalization {drift:.1e}; gait accuracy {gait_acc:.2f}, {elapsed:.1f} s")
