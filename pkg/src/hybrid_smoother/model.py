"""Switching linear-Gaussian systems: definition, validation and simulation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gaussian import NoiseCovariance, ValidationError

_PROB_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ModeModel:
    """Dynamics ``x' = F x + B u + w`` and measurement ``z = H x + v`` of one mode.

    ``u_control`` is either a constant ``p``-vector or a per-step schedule of
    shape ``(steps, p)``; step ``j`` is the transition from ``x_j`` to
    ``x_{j+1}``.
    """

    label: str
    f_transition: np.ndarray
    q_process: NoiseCovariance
    b_control: Optional[np.ndarray] = None
    u_control: Optional[np.ndarray] = None
    h_observation: Optional[np.ndarray] = None
    r_measurement: Optional[NoiseCovariance] = None

    def __post_init__(self):
        f = np.atleast_2d(np.asarray(self.f_transition, dtype=float))
        object.__setattr__(self, "f_transition", f)
        n = f.shape[0]
        b = (
            np.zeros((n, 0))
            if self.b_control is None
            else np.asarray(self.b_control, dtype=float).reshape(n, -1)
        )
        object.__setattr__(self, "b_control", b)
        u = (
            np.zeros(b.shape[1])
            if self.u_control is None
            else np.asarray(self.u_control, dtype=float)
        )
        object.__setattr__(self, "u_control", u)
        if self.h_observation is not None:
            object.__setattr__(
                self, "h_observation", np.atleast_2d(np.asarray(self.h_observation, float))
            )

    @property
    def has_measurement(self) -> bool:
        return self.h_observation is not None

    def control(self, step: int) -> np.ndarray:
        u = self.u_control
        if u.ndim == 1:
            return u
        if not 0 <= step < u.shape[0]:
            raise IndexError(f"mode {self.label!r}: no control for step {step}")
        return u[step]

    def offset(self, step: int, u_override=None) -> np.ndarray:
        u = self.control(step) if u_override is None else np.asarray(u_override, float)
        return self.b_control @ u


@dataclass(frozen=True, eq=False)
class MarkovModePrior:
    initial: np.ndarray
    transition: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "initial", np.asarray(self.initial, dtype=float))
        object.__setattr__(self, "transition", np.atleast_2d(np.asarray(self.transition, dtype=float)))

    @classmethod
    def sticky(cls, n_modes: int, self_transition: float = 0.95) -> "MarkovModePrior":
        """Uniform initial distribution, ``self_transition`` on the diagonal."""
        if n_modes == 1:
            return cls(np.ones(1), np.ones((1, 1)))
        off = (1.0 - self_transition) / (n_modes - 1)
        trans = np.full((n_modes, n_modes), off)
        np.fill_diagonal(trans, self_transition)
        return cls(np.full(n_modes, 1.0 / n_modes), trans)


@dataclass(frozen=True, eq=False)
class SwitchingSystem:
    modes: tuple[ModeModel, ...]
    mode_prior: MarkovModePrior
    x0_mean: np.ndarray
    x0_cov: NoiseCovariance

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "x0_mean", np.asarray(self.x0_mean, dtype=float).reshape(-1))

    @property
    def n_state(self) -> int:
        return self.x0_mean.shape[0]

    @property
    def p_control(self) -> int:
        return self.modes[0].b_control.shape[1] if self.modes else 0

    @property
    def m_meas(self) -> int:
        h = self.modes[0].h_observation if self.modes else None
        return 0 if h is None else h.shape[0]

    @property
    def n_modes(self) -> int:
        return len(self.modes)

    @property
    def labels(self) -> list[str]:
        return [m.label for m in self.modes]

    def mode_index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise ValidationError(f"unknown mode label {label!r}") from None


def _check_stochastic(vec: np.ndarray, path: str, out: list[str]) -> None:
    if np.any(~np.isfinite(vec)) or np.any(vec < 0):
        out.append(f"{path}: entries must be finite and nonnegative")
    s = float(np.sum(vec))
    if abs(s - 1.0) > _PROB_TOL:
        out.append(f"{path} sums to {s:g}")


def validate(system: SwitchingSystem) -> list[str]:
    """Every invariant violation found in ``system``; empty when valid."""
    out: list[str] = []
    n = system.n_state
    if not system.modes:
        return ["modes: at least one mode is required"]
    labels = system.labels
    if len(set(labels)) != len(labels):
        out.append("modes: labels must be unique")
    if system.x0_cov.dim != n:
        out.append(f"x0_cov: dimension {system.x0_cov.dim} != n_state {n}")
    p, m = system.p_control, system.m_meas
    for i, mode in enumerate(system.modes):
        path = f"modes[{i}]"
        if mode.f_transition.shape != (n, n):
            out.append(f"{path}.F: shape {mode.f_transition.shape} != ({n}, {n})")
        if mode.b_control.shape != (n, p):
            out.append(f"{path}.B: shape {mode.b_control.shape} != ({n}, {p})")
        if mode.u_control.shape[-1:] != (p,) and not (p == 0 and mode.u_control.size == 0):
            out.append(f"{path}.u: trailing dimension must be {p}")
        if mode.q_process.dim != n:
            out.append(f"{path}.Q: dimension {mode.q_process.dim} != {n}")
        if mode.has_measurement != (m > 0):
            out.append(f"{path}: measurement channel must be present in every mode or none")
        elif mode.has_measurement:
            if mode.h_observation.shape != (m, n):
                out.append(f"{path}.H: shape {mode.h_observation.shape} != ({m}, {n})")
            if mode.r_measurement is None:
                out.append(f"{path}.R: missing measurement covariance")
            elif mode.r_measurement.dim != m:
                out.append(f"{path}.R: dimension {mode.r_measurement.dim} != {m}")
    k = system.n_modes
    prior = system.mode_prior
    if prior.initial.shape != (k,):
        out.append(f"mode_prior.initial: shape {prior.initial.shape} != ({k},)")
    else:
        _check_stochastic(prior.initial, "mode_prior.initial", out)
    if prior.transition.shape != (k, k):
        out.append(f"mode_prior.transition: shape {prior.transition.shape} != ({k}, {k})")
    else:
        for r, row in enumerate(prior.transition):
            _check_stochastic(row, f"mode_prior.transition: row {r}", out)
    return out


def require_valid(system: SwitchingSystem) -> None:
    problems = validate(system)
    if problems:
        raise ValidationError("invalid system: " + "; ".join(problems))


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    states: np.ndarray
    measurements: np.ndarray
    modes: np.ndarray
    seed: Optional[int] = None
    controls: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def steps(self) -> int:
        return self.states.shape[0]


def sample_modes(prior: MarkovModePrior, length: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(length, dtype=int)
    k = prior.initial.shape[0]
    for j in range(length):
        p = prior.initial if j == 0 else prior.transition[out[j - 1]]
        out[j] = rng.choice(k, p=p)
    return out


def simulate(
    system: SwitchingSystem,
    steps: int,
    mode_sequence: Optional[Sequence[int]] = None,
    seed: Optional[int] = None,
    controls: Optional[np.ndarray] = None,
) -> SimulationTrace:
    """Draw ``steps`` states and measurements.

    Noise is drawn from the un-floored covariances, so zero-variance
    directions are exactly noise free.  ``controls`` (shape ``(steps-1, p)``)
    replaces each mode's own control input, e.g. for phase schedules.
    """
    require_valid(system)
    if steps < 1:
        raise ValidationError("steps must be >= 1")
    rng = np.random.default_rng(seed)
    if mode_sequence is None:
        modes = sample_modes(system.mode_prior, steps - 1, rng)
    else:
        modes = np.asarray(mode_sequence, dtype=int).reshape(-1)
        if modes.shape[0] != steps - 1:
            raise ValidationError(f"mode sequence must have {steps - 1} entries")
        if np.any((modes < 0) | (modes >= system.n_modes)):
            raise ValidationError("mode index out of range")
    if controls is not None:
        controls = np.asarray(controls, dtype=float).reshape(steps - 1, -1)
    n, m = system.n_state, system.m_meas
    states = np.empty((steps, n))
    meas = np.empty((steps, m))

    def observe(k: int, mode: ModeModel) -> None:
        if m:
            v = mode.r_measurement.sample_factor @ rng.standard_normal(m)
            meas[k] = mode.h_observation @ states[k] + v

    states[0] = system.x0_mean + system.x0_cov.sample_factor @ rng.standard_normal(n)
    observe(0, system.modes[0])
    for j, mi in enumerate(modes):
        mode = system.modes[mi]
        u = None if controls is None else controls[j]
        w = mode.q_process.sample_factor @ rng.standard_normal(n)
        states[j + 1] = mode.f_transition @ states[j] + mode.offset(j, u) + w
        observe(j + 1, mode)
    return SimulationTrace(states, meas, modes, seed, controls)
