"""Incremental multi-hypothesis smoother over a tree of Gaussian conditionals.

Every leaf is one mode-sequence hypothesis.  It holds the square-root
information density on the newest state and points at the newest conditional
on its branch; walking ``parent`` links towards the root visits the older
conditionals, which are shared between hypotheses with a common prefix.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .gaussian import (
    EliminationResult,
    GaussianConditional,
    GaussianDensity,
    QuadraticFactor,
    ValidationError,
    back_substitute,
    density_from_factors,
    eliminate_fragments,
    measurement_factor,
    motion_factor,
    prior_factor,
    state_key,
)
from .model import SwitchingSystem, require_valid

log = logging.getLogger(__name__)

Marginalization = Literal["lag", "last_fork"]
Evidence = Literal["joint", "terminal"]


class TreeNode:
    """One eliminated conditional ``p(x_t | x_{t+1})`` under mode ``mode``."""

    __slots__ = ("conditional", "mode", "parent", "timestep")

    def __init__(self, conditional: GaussianConditional, mode: int,
                 parent: Optional["TreeNode"], timestep: int):
        self.conditional = conditional
        self.mode = mode
        self.parent = parent
        self.timestep = timestep

    def branch(self) -> list["TreeNode"]:
        """Nodes from the (possibly cut) root down to ``self``."""
        out = []
        node: Optional[TreeNode] = self
        while node is not None:
            out.append(node)
            node = node.parent
        out.reverse()
        return out


@dataclass(eq=False)
class Leaf:
    density: GaussianDensity
    tail_node: Optional[TreeNode]
    log_posterior: float
    log_tau: float
    modes: tuple[int, ...] = ()

    @property
    def probability(self) -> float:
        return math.exp(self.log_posterior)

    def trajectory(self) -> tuple[int, np.ndarray]:
        """First retained timestep and the back-substituted state means."""
        if self.tail_node is None:
            return self.density.key[0], self.density.mean[None, :]
        nodes = self.tail_node.branch()
        means = back_substitute(
            [nd.conditional for nd in nodes], self.density.mean, self.density.key
        )
        return nodes[0].timestep, np.array(means)


@dataclass
class StepReport:
    step: int
    leaves_before: int
    leaves_after_prune: int
    leaves_after_extend: int
    leaves_after_cap: int
    kept_best_only: bool
    # per mode: number of children and the largest log-tau increment among them
    mode_children: list[int] = field(default_factory=list)
    mode_max_log_tau: list[float] = field(default_factory=list)


@dataclass
class ModeMarginals:
    table: np.ndarray  # (K-1, |M|); row j is the mode governing x_j -> x_{j+1}

    def argmax(self) -> np.ndarray:
        return np.argmax(self.table, axis=1)


@dataclass
class MapEstimate:
    mode_sequence: tuple[int, ...]
    first_timestep: int
    states: np.ndarray
    log_posterior: float


@dataclass
class FilterEstimate:
    current_mode: int
    mean: np.ndarray
    covariance: np.ndarray


def _lex_best(leaves: Sequence[Leaf]) -> int:
    """Index of the highest-posterior leaf, ties to the smallest mode sequence."""
    best = 0
    for i in range(1, len(leaves)):
        a, b = leaves[i], leaves[best]
        if a.log_posterior > b.log_posterior or (
            a.log_posterior == b.log_posterior and a.modes < b.modes
        ):
            best = i
    return best


class MultiHypothesisSmoother:
    """Hybrid smoother keeping one leaf per surviving mode-sequence hypothesis.

    Args:
        system: switching linear-Gaussian model.
        theta: leaves whose normalized posterior is below this are not
            extended.
        lag: number of conditionals kept behind the newest state; ``None``
            keeps the whole tree.
        leaf_cap: optional hard bound on the number of leaves.
        marginalization: ``"lag"`` cuts the tree ``lag`` levels back,
            ``"last_fork"`` drops everything older than the youngest node
            shared by all leaves (``lag`` is then ignored).
        z0: optional measurement of the initial state, folded into the prior
            using the first mode's measurement model.
        include_mode_constant: add ``0.5 log|Q^-1 R^-1|`` per mode.
        evidence: ``"joint"`` scores each extension by the exact marginal
            likelihood of the new measurement; ``"terminal"`` keeps only the
            residual, ``|T|`` and mode-constant terms.
    """

    def __init__(
        self,
        system: SwitchingSystem,
        theta: float = 0.0,
        lag: Optional[int] = None,
        leaf_cap: Optional[int] = None,
        marginalization: Marginalization = "lag",
        z0=None,
        include_mode_constant: bool = True,
        evidence: Evidence = "joint",
    ):
        require_valid(system)
        if not 0.0 <= theta < 1.0:
            raise ValidationError("theta must lie in [0, 1)")
        if lag is not None and lag < 1:
            raise ValidationError("lag must be a positive integer or None")
        if leaf_cap is not None and leaf_cap < 1:
            raise ValidationError("leaf_cap must be positive")
        if marginalization not in ("lag", "last_fork"):
            raise ValidationError(f"unknown marginalization policy {marginalization!r}")
        if evidence not in ("joint", "terminal"):
            raise ValidationError(f"unknown evidence rule {evidence!r}")
        self.system = system
        self.theta = theta
        self.lag = lag
        self.leaf_cap = leaf_cap
        self.marginalization = marginalization
        self.include_mode_constant = include_mode_constant
        self.evidence = evidence

        key0 = state_key(0)
        factors: list[QuadraticFactor] = [prior_factor(key0, system.x0_mean, system.x0_cov)]
        if z0 is not None:
            mode0 = system.modes[0]
            factors.append(
                measurement_factor(key0, mode0.h_observation, self._check_z(z0), mode0.r_measurement)
            )
        self.leaves: list[Leaf] = [Leaf(density_from_factors(key0, factors), None, 0.0, 0.0)]
        self.step_index = 1

        with np.errstate(divide="ignore"):
            self._log_initial = np.log(system.mode_prior.initial)
            self._log_transition = np.log(system.mode_prior.transition)
        self._log_info_q = np.array([m.q_process.log_det_information for m in system.modes])
        self._log_info_r = np.array(
            [m.r_measurement.log_det_information if m.has_measurement else 0.0
             for m in system.modes]
        )

    # -- helpers -----------------------------------------------------------

    def _check_z(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float).reshape(-1)
        if self.system.m_meas == 0 or z.shape[0] != self.system.m_meas:
            raise ValidationError(
                f"measurement has {z.shape[0]} entries, system expects {self.system.m_meas}"
            )
        return z

    def _normalize(self) -> None:
        lp = np.array([leaf.log_posterior for leaf in self.leaves])
        shift = logsumexp(lp)
        for leaf in self.leaves:
            leaf.log_posterior -= shift

    def _log_increment(self, mode: int, prev: GaussianDensity,
                       res: EliminationResult, measured: bool) -> float:
        bracket = res.half_residual_sq + res.log_det_t
        if self.evidence == "joint":
            bracket += res.conditional.log_det_r - prev.log_det_t
        if self.include_mode_constant:
            c = self._log_info_q[mode] + (self._log_info_r[mode] if measured else 0.0)
            bracket -= 0.5 * c
        return -bracket

    @property
    def n_leaves(self) -> int:
        return len(self.leaves)

    @property
    def newest_timestep(self) -> int:
        return self.step_index - 1

    # -- pruning and marginalization -------------------------------------

    def prune(self, theta: Optional[float] = None) -> bool:
        """Drop leaves below ``theta`` and renormalize.

        Returns True when every leaf fell below ``theta`` and only the best
        one was kept.
        """
        theta = self.theta if theta is None else theta
        if theta <= 0.0:
            return False
        kept = [leaf for leaf in self.leaves if leaf.probability >= theta]
        guard = not kept
        if guard:
            best = self.leaves[_lex_best(self.leaves)]
            log.warning(
                "theta=%g removes every leaf; keeping the best (p=%.3g)", theta, best.probability
            )
            kept = [best]
        self.leaves = kept
        self._normalize()
        return guard

    def _apply_cap(self) -> None:
        if self.leaf_cap is None or len(self.leaves) <= self.leaf_cap:
            return
        order = sorted(range(len(self.leaves)),
                       key=lambda i: (-self.leaves[i].log_posterior, self.leaves[i].modes))
        keep = sorted(order[: self.leaf_cap])
        self.leaves = [self.leaves[i] for i in keep]
        self._normalize()

    def marginalize(self, lag: Optional[int] = None,
                    policy: Optional[Marginalization] = None) -> None:
        """Forget stored conditionals; scores and leaf densities are untouched."""
        policy = policy or self.marginalization
        if policy == "last_fork":
            self._drop_before_last_fork()
            return
        lag = self.lag if lag is None else lag
        if lag is None:
            return
        if lag < 1:
            raise ValidationError("lag must be positive")
        oldest = self.newest_timestep - lag
        for leaf in self.leaves:
            node = leaf.tail_node
            if node is None:
                continue
            while node.parent is not None and node.parent.timestep >= oldest:
                node = node.parent
            node.parent = None

    def _drop_before_last_fork(self) -> None:
        frontier = {id(leaf.tail_node): leaf.tail_node for leaf in self.leaves
                    if leaf.tail_node is not None}
        while len(frontier) > 1:
            parents = {}
            for node in frontier.values():
                if node.parent is None:
                    return
                parents[id(node.parent)] = node.parent
            frontier = parents
        if frontier:
            next(iter(frontier.values())).parent = None

    # -- stepping ----------------------------------------------------------

    def step(self, z=None, u=None) -> StepReport:
        """Consume measurement ``z`` of the next state and mode slot ``K-1``."""
        system = self.system
        if z is not None:
            z = self._check_z(z)
        j = self.step_index - 1
        k_prev, k_next = state_key(j), state_key(j + 1)
        before = len(self.leaves)
        guard = self.prune()
        after_prune = len(self.leaves)

        motions, meas = [], []
        for mode in system.modes:
            motions.append(
                motion_factor(k_prev, k_next, mode.f_transition, mode.offset(j, u), mode.q_process)
            )
            meas.append(
                None if z is None
                else measurement_factor(k_next, mode.h_observation, z, mode.r_measurement)
            )

        n_modes = system.n_modes
        log_priors = [
            self._log_initial if not leaf.modes else self._log_transition[leaf.modes[-1]]
            for leaf in self.leaves
        ]
        results: list[dict[int, EliminationResult]] = [{} for _ in self.leaves]
        for mi in range(n_modes):
            idx = [i for i, lp in enumerate(log_priors) if lp[mi] > -math.inf]
            batch = eliminate_fragments([self.leaves[i].density for i in idx], motions[mi], meas[mi])
            for i, res in zip(idx, batch):
                results[i][mi] = res

        counts = [0] * n_modes
        best_tau = [-math.inf] * n_modes
        children: list[Leaf] = []
        for leaf, log_prior, per_mode in zip(self.leaves, log_priors, results):
            for mi in sorted(per_mode):
                res = per_mode[mi]
                inc = self._log_increment(mi, leaf.density, res, z is not None)
                node = TreeNode(res.conditional, mi, leaf.tail_node, j)
                children.append(Leaf(
                    res.density, node,
                    leaf.log_posterior + log_prior[mi] + inc,
                    leaf.log_tau + inc,
                    leaf.modes + (mi,),
                ))
                counts[mi] += 1
                best_tau[mi] = max(best_tau[mi], inc)
        if not children:
            raise ValidationError("no mode is reachable from the surviving leaves")
        self.leaves = children
        self._normalize()
        extended = len(self.leaves)
        self._apply_cap()
        self.step_index += 1
        self.marginalize()
        return StepReport(j + 1, before, after_prune, extended, len(self.leaves),
                          guard, counts, best_tau)

    # -- queries -------------------------------------------------------------

    def posteriors(self) -> np.ndarray:
        return np.exp([leaf.log_posterior for leaf in self.leaves])

    def mode_marginals(self) -> ModeMarginals:
        slots = self.step_index - 1
        table = np.zeros((slots, self.system.n_modes))
        if slots == 0:
            return ModeMarginals(table)
        seqs = np.array([leaf.modes for leaf in self.leaves], dtype=int)
        w = self.posteriors()
        cols = np.arange(slots)
        for i in range(len(self.leaves)):
            table[cols, seqs[i]] += w[i]
        table /= table.sum(axis=1, keepdims=True)
        return ModeMarginals(table)

    def newest_marginal(self) -> np.ndarray:
        """Distribution of the newest mode slot (the online filter output)."""
        row = np.zeros(self.system.n_modes)
        for leaf in self.leaves:
            if leaf.modes:
                row[leaf.modes[-1]] += leaf.probability
        return row / row.sum() if row.sum() > 0 else row

    def best_leaf(self) -> Leaf:
        return self.leaves[_lex_best(self.leaves)]

    def find_leaf(self, modes: Sequence[int]) -> Optional[Leaf]:
        target = tuple(int(m) for m in modes)
        for leaf in self.leaves:
            if leaf.modes == target:
                return leaf
        return None

    def map_estimate(self) -> MapEstimate:
        leaf = self.best_leaf()
        first, states = leaf.trajectory()
        return MapEstimate(leaf.modes, first, states, leaf.log_posterior)

    def filter_estimate(self) -> FilterEstimate:
        mode = int(np.argmax(self.newest_marginal())) if self.step_index > 1 else 0
        w = self.posteriors()
        mean = self.mixture_mean()
        dev = np.array([leaf.density.mean for leaf in self.leaves]) - mean
        covs = np.array([leaf.density.covariance for leaf in self.leaves])
        cov = np.einsum("l,lij->ij", w, covs) + (w[:, None] * dev).T @ dev
        return FilterEstimate(mode, mean, cov)

    def mixture_mean(self) -> np.ndarray:
        w = self.posteriors()
        return w @ np.array([leaf.density.mean for leaf in self.leaves])
