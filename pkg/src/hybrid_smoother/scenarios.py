"""Concrete switching systems: aircraft maneuvers, lane changes, foot contact."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .gaussian import NoiseCovariance, ValidationError
from .model import MarkovModePrior, ModeModel, SwitchingSystem


def aircraft_tracking(
    T: float = 1.0,
    ct_controls: Sequence[Sequence[float]] = ((1.5, 1.5),),
    noise_scale: float = 1.0,
    self_transition: float = 0.95,
    x0_mean: Sequence[float] = (0.0, 0.0, 0.0, 0.0),
    x0_std: float = 1.0,
) -> SwitchingSystem:
    """Constant-velocity / coordinated-turn aircraft model.

    State is ``[x, vx, y, vy]``; positions are observed.  Unit noise standard
    deviation on every process and measurement component, scaled by
    ``noise_scale``.  One CT mode is created per entry of ``ct_controls``
    (labelled ``CT``, or ``CT1``, ``CT2``... when there are several).
    """
    if not T > 0:
        raise ValidationError("sample period T must be positive")
    f = np.array(
        [[1, T, 0, 0], [0, 1, 0, 0], [0, 0, 1, T], [0, 0, 0, 1]], dtype=float
    )
    b = np.array([[T**2 / 2, 0], [T, 0], [0, T**2 / 2], [0, T]], dtype=float)
    h = np.array([[1, 0, 0, 0], [0, 0, 1, 0]], dtype=float)
    var = noise_scale**2
    q = NoiseCovariance(var * np.eye(4))
    r = NoiseCovariance(var * np.eye(2))
    controls = [np.zeros(2)] + [np.asarray(c, dtype=float) for c in ct_controls]
    labels = ["CV"] + (
        ["CT"] if len(ct_controls) == 1 else [f"CT{i + 1}" for i in range(len(ct_controls))]
    )
    modes = tuple(ModeModel(lab, f, q, b, u, h, r) for lab, u in zip(labels, controls))
    return SwitchingSystem(
        modes,
        MarkovModePrior.sticky(len(modes), self_transition),
        np.asarray(x0_mean, dtype=float),
        NoiseCovariance((x0_std * noise_scale) ** 2 * np.eye(4)),
    )


def lane_change(
    T: float = 0.1,
    sigma_ct: float = 0.02,
    sigma_cv: float = 0.5,
    sigma_meas: float = 0.05,
    self_transition: float = 0.95,
    x0_mean: Sequence[float] = (0.0, 0.0),
    x0_std: Sequence[float] = (1.0, 0.5),
) -> SwitchingSystem:
    """Lateral ``[position, velocity]`` with a hold mode and a drift mode.

    The hold mode zeroes lateral velocity and jitters position; the drift mode
    integrates velocity exactly and perturbs only velocity.  The zero
    variances are floored when whitened.
    """
    if not T > 0:
        raise ValidationError("sample period T must be positive")
    for name, s in (("sigma_ct", sigma_ct), ("sigma_cv", sigma_cv), ("sigma_meas", sigma_meas)):
        if not s > 0:
            raise ValidationError(f"{name} must be positive")
    h = np.array([[1.0, 0.0]])
    r = NoiseCovariance(np.array([[sigma_meas**2]]))
    ct = ModeModel(
        "CT",
        np.array([[1.0, 0.0], [0.0, 0.0]]),
        NoiseCovariance(np.diag([sigma_ct**2, 0.0])),
        h_observation=h,
        r_measurement=r,
    )
    cv = ModeModel(
        "CV",
        np.array([[1.0, T], [0.0, 1.0]]),
        NoiseCovariance(np.diag([0.0, sigma_cv**2])),
        h_observation=h,
        r_measurement=r,
    )
    return SwitchingSystem(
        (ct, cv),
        MarkovModePrior.sticky(2, self_transition),
        np.asarray(x0_mean, dtype=float),
        NoiseCovariance(np.diag(np.square(x0_std))),
    )


def _yaw(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


@dataclass
class ContactToyParams:
    """Foot-contact scenario.  Base poses are given per state index ``k``."""

    mu_contact: np.ndarray = field(default_factory=lambda: np.zeros(3))
    sigma_contact: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(3))
    mu_swing: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0]))
    sigma_swing: np.ndarray = field(default_factory=lambda: 1e-3 * np.eye(3))
    base_translation: Optional[np.ndarray] = None
    base_rotation: Optional[np.ndarray] = None
    meas_cov: np.ndarray = field(default_factory=lambda: 1e-4 * np.eye(3))
    self_transition: float = 0.8
    x0_mean: np.ndarray = field(default_factory=lambda: np.zeros(3))
    x0_cov: np.ndarray = field(default_factory=lambda: 1e-2 * np.eye(3))


def synthetic_base_motion(
    steps: int, speed: float = 0.05, yaw_rate: float = 0.01
) -> tuple[np.ndarray, np.ndarray]:
    """Base translating forward at ``speed`` per step while slowly turning."""
    yaw = yaw_rate * np.arange(steps)
    vel = speed * np.column_stack([np.cos(yaw), np.sin(yaw), np.zeros(steps)])
    trans = np.vstack([np.zeros(3), np.cumsum(vel[:-1], axis=0)])
    rot = np.stack([_yaw(a) for a in yaw])
    return trans, rot


def _spd(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    try:
        np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise ValidationError(f"{name} must be symmetric positive definite") from None
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ValidationError(f"{name} must be symmetric positive definite")
    return a


def contact_toy(params: Optional[ContactToyParams] = None, steps: int = 50) -> SwitchingSystem:
    """Two-mode foot position model (``contact``, ``swing``) in the odometry frame.

    In contact the foot drifts by ``mu_contact``; in swing it follows the base:
    the offset for the transition into ``k`` is
    ``t_k - t_{k-1} + R_k mu_swing``.  Foot positions are read directly with
    covariance ``meas_cov``.
    """
    p = params or ContactToyParams()
    sigma_c = _spd(p.sigma_contact, "sigma_contact")
    sigma_s = _spd(p.sigma_swing, "sigma_swing")
    meas = _spd(p.meas_cov, "meas_cov")
    trans, rot = p.base_translation, p.base_rotation
    if trans is None or rot is None:
        trans, rot = synthetic_base_motion(steps)
    trans = np.asarray(trans, dtype=float)
    rot = np.asarray(rot, dtype=float)
    if trans.shape[0] != rot.shape[0] or trans.shape[1:] != (3,) or rot.shape[1:] != (3, 3):
        raise ValidationError("base_translation must be (K, 3) and base_rotation (K, 3, 3)")
    swing_u = np.diff(trans, axis=0) + rot[1:] @ np.asarray(p.mu_swing, dtype=float)
    eye = np.eye(3)
    r = NoiseCovariance(meas)
    contact = ModeModel(
        "contact", eye, NoiseCovariance(sigma_c), eye, np.asarray(p.mu_contact, float), eye, r
    )
    swing = ModeModel("swing", eye, NoiseCovariance(sigma_s), eye, swing_u, eye, r)
    return SwitchingSystem(
        (contact, swing),
        MarkovModePrior.sticky(2, p.self_transition),
        np.asarray(p.x0_mean, dtype=float),
        NoiseCovariance(np.asarray(p.x0_cov, dtype=float)),
    )


def gait_sequence(steps: int, stance: int = 6, swing: int = 4, offset: int = 0) -> np.ndarray:
    """Alternating contact(0)/swing(1) mode sequence of length ``steps - 1``."""
    period = stance + swing
    j = (np.arange(steps - 1) + offset) % period
    return (j >= stance).astype(int)
