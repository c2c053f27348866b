"""Simulation-driven experiments: single runs and seeded Monte Carlo batteries."""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from .gaussian import ValidationError
from .metrics import accuracy, cross_entropy, nll_sequence
from .model import SimulationTrace, SwitchingSystem, simulate
from .smoother import Marginalization, MultiHypothesisSmoother

RunMode = Literal["smoother", "filter"]


@dataclass(frozen=True)
class Phase:
    mode: str
    duration: int
    control: Optional[tuple[float, ...]] = None


@dataclass(eq=False)
class Schedule:
    modes: np.ndarray
    controls: Optional[np.ndarray] = None

    @property
    def steps(self) -> int:
        """Number of states covered (one more than the mode slots)."""
        return self.modes.shape[0] + 1


def phase_schedule(system: SwitchingSystem, phases: Sequence) -> Schedule:
    """Expand ``(label, duration[, control])`` phases into per-slot modes/controls.

    Phases without an explicit control use their mode's own input.  The
    control array is only materialized when some phase overrides it.
    """
    modes: list[int] = []
    controls: list[np.ndarray] = []
    override = False
    for ph in phases:
        ph = ph if isinstance(ph, Phase) else Phase(*ph)
        if ph.duration < 1:
            raise ValidationError(f"phase {ph.mode!r}: duration must be >= 1")
        mi = system.mode_index(ph.mode)
        for _ in range(ph.duration):
            j = len(modes)
            modes.append(mi)
            if ph.control is not None:
                override = True
                controls.append(np.asarray(ph.control, dtype=float))
            else:
                controls.append(system.modes[mi].control(j))
    return Schedule(np.array(modes, dtype=int), np.array(controls) if override else None)


@dataclass(eq=False)
class RunReport:
    seed: int
    mode: RunMode
    truth: np.ndarray
    marginals: np.ndarray
    filter_marginals: np.ndarray
    map_modes: np.ndarray
    filter_modes: np.ndarray
    map_states: np.ndarray
    filter_means: np.ndarray
    nll_sequence: float
    cross_entropy_smoother: float
    accuracy_smoother: float
    cross_entropy_filter: float
    accuracy_filter: float
    map_accuracy: float
    peak_leaves: int
    wall_time_ms: float = field(default=0.0)

    @property
    def accuracy(self) -> float:
        return self.accuracy_filter if self.mode == "filter" else self.accuracy_smoother

    @property
    def cross_entropy(self) -> float:
        return self.cross_entropy_filter if self.mode == "filter" else self.cross_entropy_smoother

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "nll_sequence": self.nll_sequence,
            "cross_entropy_smoother": self.cross_entropy_smoother,
            "accuracy_smoother": self.accuracy_smoother,
            "cross_entropy_filter": self.cross_entropy_filter,
            "accuracy_filter": self.accuracy_filter,
            "map_accuracy": self.map_accuracy,
            "peak_leaves": self.peak_leaves,
        }


def run_trace(
    system: SwitchingSystem,
    trace: SimulationTrace,
    theta: float = 0.01,
    lag: Optional[int] = None,
    mode: RunMode = "smoother",
    leaf_cap: Optional[int] = None,
    marginalization: Marginalization = "lag",
    seed: int = 0,
    evidence: str = "joint",
) -> RunReport:
    """Run the smoother over an existing trace, recording filter output per step."""
    start = time.perf_counter()
    z = trace.measurements if system.m_meas else None
    sm = MultiHypothesisSmoother(
        system, theta=theta, lag=lag, leaf_cap=leaf_cap, marginalization=marginalization,
        z0=None if z is None else z[0], evidence=evidence,
    )
    slots = trace.steps - 1
    filt = np.zeros((slots, system.n_modes))
    means = np.zeros((trace.steps, system.n_state))
    means[0] = sm.leaves[0].density.mean
    peak = 1
    for k in range(1, trace.steps):
        sm.step(None if z is None else z[k])
        peak = max(peak, sm.n_leaves)
        filt[k - 1] = sm.newest_marginal()
        means[k] = sm.mixture_mean()
    marg = sm.mode_marginals().table
    best = sm.map_estimate()
    truth = np.asarray(trace.modes, dtype=int)
    elapsed = (time.perf_counter() - start) * 1e3
    map_modes = np.array(best.mode_sequence, dtype=int)
    return RunReport(
        seed=seed,
        mode=mode,
        truth=truth,
        marginals=marg,
        filter_marginals=filt,
        map_modes=map_modes,
        filter_modes=np.argmax(filt, axis=1) if slots else np.zeros(0, int),
        map_states=best.states,
        filter_means=means,
        nll_sequence=nll_sequence(sm, truth),
        cross_entropy_smoother=cross_entropy(marg, truth),
        accuracy_smoother=accuracy(marg, truth),
        cross_entropy_filter=cross_entropy(filt, truth),
        accuracy_filter=accuracy(filt, truth),
        map_accuracy=float(np.mean(map_modes == truth)) if slots else 1.0,
        peak_leaves=peak,
        wall_time_ms=elapsed,
    )


def run_once(
    system: SwitchingSystem,
    steps: Optional[int] = None,
    theta: float = 0.01,
    lag: Optional[int] = None,
    seed: int = 0,
    mode: RunMode = "smoother",
    schedule: Optional[Schedule] = None,
    leaf_cap: Optional[int] = None,
    marginalization: Marginalization = "lag",
    evidence: str = "joint",
) -> RunReport:
    """Simulate ``steps`` states (modes from ``schedule`` or sampled) and smooth them."""
    if schedule is not None:
        if steps is not None and steps != schedule.steps:
            raise ValidationError(f"schedule covers {schedule.steps} states, not {steps}")
        steps = schedule.steps
    if steps is None:
        raise ValidationError("either steps or a schedule is required")
    trace = simulate(
        system, steps,
        mode_sequence=None if schedule is None else schedule.modes,
        seed=seed,
        controls=None if schedule is None else schedule.controls,
    )
    return run_trace(system, trace, theta, lag, mode, leaf_cap, marginalization, seed, evidence)


@dataclass(eq=False)
class MonteCarloReport:
    base_seed: int
    runs: list[RunReport]

    def _mean(self, attr: str) -> float:
        return float(np.mean([getattr(r, attr) for r in self.runs]))

    @property
    def mean_marginals_smoother(self) -> np.ndarray:
        return np.mean([r.marginals for r in self.runs], axis=0)

    @property
    def mean_marginals_filter(self) -> np.ndarray:
        return np.mean([r.filter_marginals for r in self.runs], axis=0)

    @property
    def mean_accuracy_smoother(self) -> float:
        return self._mean("accuracy_smoother")

    @property
    def mean_accuracy_filter(self) -> float:
        return self._mean("accuracy_filter")

    @property
    def mean_cross_entropy_smoother(self) -> float:
        return self._mean("cross_entropy_smoother")

    @property
    def mean_cross_entropy_filter(self) -> float:
        return self._mean("cross_entropy_filter")

    @property
    def mean_map_accuracy(self) -> float:
        return self._mean("map_accuracy")

    def summary(self) -> dict:
        return {
            "runs": len(self.runs),
            "base_seed": self.base_seed,
            "mean_accuracy_smoother": self.mean_accuracy_smoother,
            "mean_accuracy_filter": self.mean_accuracy_filter,
            "mean_cross_entropy_smoother": self.mean_cross_entropy_smoother,
            "mean_cross_entropy_filter": self.mean_cross_entropy_filter,
            "mean_map_accuracy": self.mean_map_accuracy,
            "per_run": [r.summary() for r in self.runs],
        }


def _run_indexed(args) -> RunReport:
    system, kwargs = args
    return run_once(system, **kwargs)


def run_monte_carlo(
    system: SwitchingSystem,
    steps: Optional[int] = None,
    theta: float = 0.01,
    lag: Optional[int] = None,
    runs: int = 100,
    base_seed: int = 0,
    schedule: Optional[Schedule] = None,
    leaf_cap: Optional[int] = None,
    marginalization: Marginalization = "lag",
    evidence: str = "joint",
    jobs: int = 1,
) -> MonteCarloReport:
    """Independent runs with seeds ``base_seed + i``; ``jobs > 1`` uses processes."""
    if runs < 1:
        raise ValidationError("runs must be >= 1")
    if steps is None and schedule is None:
        raise ValidationError("either steps or a schedule is required")
    tasks = [
        (system, dict(steps=steps, theta=theta, lag=lag, seed=base_seed + i,
                      schedule=schedule, leaf_cap=leaf_cap,
                      marginalization=marginalization, evidence=evidence))
        for i in range(runs)
    ]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_run_indexed, tasks))
    else:
        reports = [_run_indexed(t) for t in tasks]
    return MonteCarloReport(base_seed, reports)
