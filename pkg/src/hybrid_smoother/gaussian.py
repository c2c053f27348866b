"""Dense linear-Gaussian machinery in square-root information form.

Factors are stored as ``A x - b`` residuals together with a noise covariance.
Whitening premultiplies both by the inverse square root of the covariance so
that the negative log-density becomes ``0.5 * ||A_w x - b_w||^2``.  Elimination
of a chain fragment is a single Householder QR of the stacked whitened system.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Hashable, Optional, Sequence

import numpy as np
from scipy.linalg import solve_triangular

Key = tuple[int, Hashable]

DEFAULT_EPSILON_FLOOR = 1e-9
_SYMMETRY_RTOL = 1e-12
_NEGATIVE_EIG_TOL = 1e-10
_SINGULAR_DIAG_TOL = 1e-12


class ValidationError(ValueError):
    """Malformed input: bad shapes, non-symmetric covariances and the like."""


class SingularSystemError(np.linalg.LinAlgError):
    """A square-root information factor has a (numerically) zero pivot."""


def state_key(k: int) -> Key:
    return (int(k), "x")


def _as_matrix(a, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(a, dtype=float))
    if m.ndim != 2:
        raise ValidationError(f"{name}: expected a matrix, got shape {m.shape}")
    return m


def _as_vector(a, name: str) -> np.ndarray:
    v = np.asarray(a, dtype=float)
    if v.ndim == 0:
        v = v.reshape(1)
    if v.ndim != 1:
        raise ValidationError(f"{name}: expected a vector, got shape {v.shape}")
    return v


@dataclass(frozen=True, eq=False)
class NoiseCovariance:
    """Symmetric PSD covariance with an eigenvalue floor for whitening.

    Zero-variance directions (hard constraints) are floored to
    ``epsilon_floor`` so that the inverse square root always exists.
    """

    matrix: np.ndarray
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR

    def __post_init__(self):
        m = _as_matrix(self.matrix, "covariance")
        if m.shape[0] != m.shape[1]:
            raise ValidationError(f"covariance must be square, got {m.shape}")
        if not self.epsilon_floor > 0:
            raise ValidationError("epsilon_floor must be positive")
        scale = max(1.0, float(np.max(np.abs(m)))) if m.size else 1.0
        if np.max(np.abs(m - m.T), initial=0.0) > _SYMMETRY_RTOL * scale:
            raise ValidationError("covariance is not symmetric")
        if m.size and np.linalg.eigvalsh(m)[0] < -_NEGATIVE_EIG_TOL:
            raise ValidationError("covariance has a negative eigenvalue")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def isotropic(cls, dim: int, variance: float = 1.0, **kw) -> "NoiseCovariance":
        return cls(variance * np.eye(dim), **kw)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def _eig(self) -> tuple[np.ndarray, np.ndarray]:
        vals, vecs = np.linalg.eigh(self.matrix)
        return np.maximum(vals, self.epsilon_floor), vecs

    @cached_property
    def floored(self) -> np.ndarray:
        vals, vecs = self._eig
        return (vecs * vals) @ vecs.T

    @cached_property
    def whitening(self) -> np.ndarray:
        """Symmetric inverse square root of the floored covariance."""
        vals, vecs = self._eig
        w = (vecs / np.sqrt(vals)) @ vecs.T
        w.setflags(write=False)
        return w

    @cached_property
    def log_det_information(self) -> float:
        """log |Sigma^-1| of the floored covariance."""
        return float(-np.sum(np.log(self._eig[0])))

    @cached_property
    def sample_factor(self) -> np.ndarray:
        """Square root of the *un-floored* matrix, for drawing samples."""
        vals, vecs = np.linalg.eigh(self.matrix)
        return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass(frozen=True, eq=False)
class QuadraticFactor:
    """Residual ``sum_i A_i x_i - b`` weighted by ``noise``."""

    keys: tuple[Key, ...]
    blocks: tuple[np.ndarray, ...]
    rhs: np.ndarray
    noise: NoiseCovariance

    def __post_init__(self):
        blocks = tuple(_as_matrix(a, "jacobian block") for a in self.blocks)
        rhs = _as_vector(self.rhs, "rhs")
        keys = tuple(self.keys)
        if len(keys) != len(blocks):
            raise ValidationError("one jacobian block per key is required")
        if len(set(keys)) != len(keys):
            raise ValidationError("duplicate keys in factor")
        for k, a in zip(keys, blocks):
            if a.shape[0] != rhs.shape[0]:
                raise ValidationError(
                    f"block for {k} has {a.shape[0]} rows, rhs has {rhs.shape[0]}"
                )
        if self.noise.dim != rhs.shape[0]:
            raise ValidationError(
                f"noise dimension {self.noise.dim} != rhs length {rhs.shape[0]}"
            )
        object.__setattr__(self, "keys", keys)
        object.__setattr__(self, "blocks", blocks)
        object.__setattr__(self, "rhs", rhs)

    @property
    def rows(self) -> int:
        return self.rhs.shape[0]

    def block(self, key: Key) -> np.ndarray:
        return self.blocks[self.keys.index(key)]

    def error(self, values: dict) -> float:
        """Mahalanobis norm ``||A x - b||^2_Sigma`` (floored Sigma)."""
        r = sum(a @ values[k] for k, a in zip(self.keys, self.blocks)) - self.rhs
        return float(r @ np.linalg.solve(self.noise.floored, r))


def prior_factor(key: Key, mean, cov: NoiseCovariance) -> QuadraticFactor:
    mean = _as_vector(mean, "mean")
    return QuadraticFactor((key,), (np.eye(mean.size),), mean, cov)


def motion_factor(
    key_prev: Key, key_next: Key, f, offset, cov: NoiseCovariance
) -> QuadraticFactor:
    """``x_next - (F x_prev + offset)``, with ``offset = B u``."""
    f = _as_matrix(f, "F")
    return QuadraticFactor(
        (key_prev, key_next), (-f, np.eye(f.shape[0])), offset, cov
    )


def measurement_factor(key: Key, h, z, cov: NoiseCovariance) -> QuadraticFactor:
    return QuadraticFactor((key,), (_as_matrix(h, "H"),), z, cov)


def whiten(factor: QuadraticFactor) -> tuple[tuple[np.ndarray, ...], np.ndarray]:
    w = factor.noise.whitening
    return tuple(w @ a for a in factor.blocks), w @ factor.rhs


@dataclass(frozen=True, eq=False)
class GaussianConditional:
    """p(x_frontal | x_parent) = N(r^-1 (d - s x_parent), r^-1 r^-T)."""

    r_upper: np.ndarray
    s_cross: np.ndarray
    d_rhs: np.ndarray
    frontal_key: Key
    parent_key: Key

    def __post_init__(self):
        r = _as_matrix(self.r_upper, "r_upper")
        if r.shape[0] != r.shape[1]:
            raise ValidationError("r_upper must be square")
        if np.min(np.abs(np.diag(r))) <= _SINGULAR_DIAG_TOL:
            raise SingularSystemError(f"conditional on {self.frontal_key} is singular")

    @property
    def dim(self) -> int:
        return self.r_upper.shape[0]

    def mean(self, parent_value) -> np.ndarray:
        return solve_triangular(self.r_upper, self.d_rhs - self.s_cross @ parent_value)

    @cached_property
    def log_det_r(self) -> float:
        return float(np.sum(np.log(np.abs(np.diag(self.r_upper)))))

    def log_density(self, x, parent_value) -> float:
        e = self.r_upper @ x + self.s_cross @ parent_value - self.d_rhs
        return self.log_det_r - 0.5 * self.dim * np.log(2 * np.pi) - 0.5 * float(e @ e)


@dataclass(frozen=True, eq=False)
class GaussianDensity:
    """N(t^-1 v, t^-1 t^-T) with ``t`` square upper-triangular."""

    t_upper: np.ndarray
    v_rhs: np.ndarray
    key: Key

    def __post_init__(self):
        t = _as_matrix(self.t_upper, "t_upper")
        if t.shape[0] != t.shape[1] or t.shape[0] != np.size(self.v_rhs):
            raise ValidationError("t_upper must be square and match v_rhs")
        if np.min(np.abs(np.diag(t))) <= _SINGULAR_DIAG_TOL:
            raise SingularSystemError(f"density on {self.key} is singular")

    @classmethod
    def from_moments(cls, key: Key, mean, cov: NoiseCovariance) -> "GaussianDensity":
        return density_from_factors(key, [prior_factor(key, mean, cov)])

    @property
    def dim(self) -> int:
        return self.t_upper.shape[0]

    @cached_property
    def mean(self) -> np.ndarray:
        return solve_triangular(self.t_upper, self.v_rhs)

    @cached_property
    def covariance(self) -> np.ndarray:
        t_inv = solve_triangular(self.t_upper, np.eye(self.dim))
        return t_inv @ t_inv.T

    @cached_property
    def log_det_t(self) -> float:
        return float(np.sum(np.log(np.abs(np.diag(self.t_upper)))))

    def log_density(self, x) -> float:
        e = self.t_upper @ x - self.v_rhs
        return self.log_det_t - 0.5 * self.dim * np.log(2 * np.pi) - 0.5 * float(e @ e)


@dataclass(frozen=True, eq=False)
class EliminationResult:
    conditional: GaussianConditional
    density: GaussianDensity
    half_residual_sq: float
    log_det_t: float


def _r_factor(augmented: np.ndarray) -> np.ndarray:
    # LAPACK geqrf: Householder reflections, only R is formed.
    return np.linalg.qr(augmented, mode="r")


def density_from_factors(key: Key, factors: Sequence[QuadraticFactor]) -> GaussianDensity:
    """Square-root information density from unary factors on ``key``."""
    rows = []
    for f in factors:
        if f.keys != (key,):
            raise ValidationError(f"factor is not unary on {key}")
        (a,), b = whiten(f)
        rows.append(np.column_stack([a, b]))
    r = _r_factor(np.vstack(rows))
    n = r.shape[1] - 1
    if r.shape[0] < n:
        raise SingularSystemError(f"too few rows to determine {key}")
    return GaussianDensity(r[:n, :n], r[:n, n], key)


def _trusted(cls, **attrs):
    # Skip __post_init__ for objects whose invariants were checked in bulk.
    obj = object.__new__(cls)
    obj.__dict__.update(attrs)
    return obj


def eliminate_fragment(
    prior: GaussianDensity,
    motion: QuadraticFactor,
    measurement: Optional[QuadraticFactor] = None,
) -> EliminationResult:
    """Eliminate ``prior(x_prev) * motion(x_prev, x_next) * measurement(x_next)``.

    Returns the conditional on ``x_prev`` given ``x_next``, the new density on
    ``x_next``, half the squared residual at the minimum, and ``log|det T|``.
    """
    return eliminate_fragments([prior], motion, measurement)[0]


def eliminate_fragments(
    priors: Sequence[GaussianDensity],
    motion: QuadraticFactor,
    measurement: Optional[QuadraticFactor] = None,
) -> list[EliminationResult]:
    """:func:`eliminate_fragment` for many priors on the same key, in one batched QR."""
    if not priors:
        return []
    prev = priors[0].key
    n = priors[0].dim
    if any(p.key != prev or p.dim != n for p in priors):
        raise ValidationError("batched priors must share key and dimension")
    if len(motion.keys) != 2 or prev not in motion.keys:
        raise ValidationError("motion factor must connect the prior's key to a new key")
    nxt = motion.keys[1] if motion.keys[0] == prev else motion.keys[0]
    a_prev = motion.block(prev)
    a_next = motion.block(nxt)
    if a_prev.shape[1] != n or a_next.shape[1] != n or motion.rows != n:
        raise ValidationError("motion factor dimensions do not match the prior")
    w = motion.noise.whitening
    fixed = [np.column_stack([w @ a_prev, w @ a_next, w @ motion.rhs])]
    if measurement is not None:
        if measurement.keys != (nxt,):
            raise ValidationError("measurement must be unary on the new state")
        (h,), z = whiten(measurement)
        if h.shape[1] != n:
            raise ValidationError("measurement jacobian has wrong column count")
        fixed.append(np.column_stack([np.zeros((h.shape[0], n)), h, z]))
    fixed = np.vstack(fixed)
    batch = len(priors)
    aug = np.zeros((batch, n + fixed.shape[0], 2 * n + 1))
    aug[:, :n, :n] = [p.t_upper for p in priors]
    aug[:, :n, 2 * n] = [p.v_rhs for p in priors]
    aug[:, n:, :] = fixed
    r = _r_factor(aug)
    r_upper, s_cross, d_rhs = r[:, :n, :n], r[:, :n, n : 2 * n], r[:, :n, 2 * n]
    t_upper, v_rhs = r[:, n : 2 * n, n : 2 * n], r[:, n : 2 * n, 2 * n]
    diag_r = np.abs(np.diagonal(r_upper, axis1=1, axis2=2))
    diag_t = np.abs(np.diagonal(t_upper, axis1=1, axis2=2))
    if np.min(diag_t) <= _SINGULAR_DIAG_TOL:
        raise SingularSystemError(f"posterior on {nxt} is singular")
    if np.min(diag_r) <= _SINGULAR_DIAG_TOL:
        raise SingularSystemError(f"conditional on {prev} is singular")
    e = r[:, 2 * n, 2 * n] if r.shape[1] > 2 * n else np.zeros(batch)
    log_det_r = np.sum(np.log(diag_r), axis=1)
    log_det_t = np.sum(np.log(diag_t), axis=1)
    out = []
    for i in range(batch):
        cond = _trusted(
            GaussianConditional, r_upper=r_upper[i], s_cross=s_cross[i], d_rhs=d_rhs[i],
            frontal_key=prev, parent_key=nxt, log_det_r=float(log_det_r[i]),
        )
        dens = _trusted(
            GaussianDensity, t_upper=t_upper[i], v_rhs=v_rhs[i], key=nxt,
            log_det_t=float(log_det_t[i]),
        )
        out.append(EliminationResult(cond, dens, 0.5 * float(e[i]) ** 2, float(log_det_t[i])))
    return out


def stack_factors(
    factors: Sequence[QuadraticFactor], order: Sequence[Key]
) -> tuple[np.ndarray, np.ndarray, dict[Key, slice]]:
    """Whitened dense Jacobian and rhs for ``factors`` under column ``order``."""
    dims: dict[Key, int] = {}
    for f in factors:
        for k, a in zip(f.keys, f.blocks):
            if dims.setdefault(k, a.shape[1]) != a.shape[1]:
                raise ValidationError(f"inconsistent dimension for {k}")
    missing = set(dims) - set(order)
    if missing:
        raise ValidationError(f"variables missing from order: {sorted(missing)}")
    cols, start = {}, 0
    for k in order:
        if k not in dims:
            raise ValidationError(f"{k} in order but not in any factor")
        cols[k] = slice(start, start + dims[k])
        start += dims[k]
    a_rows, b_rows = [], []
    for f in factors:
        blocks, b = whiten(f)
        row = np.zeros((f.rows, start))
        for k, a in zip(f.keys, blocks):
            row[:, cols[k]] = a
        a_rows.append(row)
        b_rows.append(b)
    return np.vstack(a_rows), np.concatenate(b_rows), cols


def solve_batch(
    factors: Sequence[QuadraticFactor], order: Sequence[Key]
) -> tuple[dict[Key, np.ndarray], np.ndarray]:
    """Minimize the summed whitened least-squares objective.

    Returns the MAP value per key and the information matrix ``A_w^T A_w``
    with columns in ``order``.
    """
    a, b, cols = stack_factors(factors, order)
    ncols = a.shape[1]
    if a.shape[0] < ncols:
        raise SingularSystemError("fewer rows than unknowns")
    r = _r_factor(np.column_stack([a, b]))
    if np.min(np.abs(np.diag(r[:ncols, :ncols]))) <= _SINGULAR_DIAG_TOL * max(
        1.0, np.max(np.abs(r))
    ):
        raise SingularSystemError("stacked jacobian is rank deficient")
    x = solve_triangular(r[:ncols, :ncols], r[:ncols, ncols])
    return {k: x[s] for k, s in cols.items()}, a.T @ a


def back_substitute(
    chain: Sequence[GaussianConditional],
    terminal_mean,
    terminal_key: Optional[Key] = None,
) -> list[np.ndarray]:
    """Means from oldest to newest, given conditionals ordered oldest first."""
    terminal_mean = _as_vector(terminal_mean, "terminal_mean")
    for older, newer in zip(chain, chain[1:]):
        if older.parent_key != newer.frontal_key:
            raise ValidationError(
                f"broken chain: {older.parent_key} is not followed by {newer.frontal_key}"
            )
    if chain and terminal_key is not None and chain[-1].parent_key != terminal_key:
        raise ValidationError("terminal key does not match the newest conditional")
    out = [terminal_mean]
    for cond in reversed(chain):
        out.append(cond.mean(out[-1]))
    out.reverse()
    return out
