"""Tabular MDPs, occupancy measures and the block matrices built on them.

Every matrix in the package shares one flattening convention for
state-action pairs: ``sa = s * n_actions + a``.
"""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass
from typing import Any

import numpy as np
from scipy import linalg

from gaillab.errors import DimensionMismatch, InvalidMdp, InvalidPolicy, SingularSystem

log = logging.getLogger(__name__)

ROW_TOL = 1e-12
POLICY_TOL = 1e-10
COND_WARN = 1e10


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class TabularMdp:
    """Finite MDP over a gridded continuous action set.

    ``transition[s, a, s']`` is the probability of moving to ``s'`` after
    playing grid action ``a`` in ``s``. ``action_grid`` has shape
    ``(n_actions, action_dim)``.
    """

    n_states: int
    action_grid: np.ndarray
    transition: np.ndarray
    gamma: float
    mu0: np.ndarray

    def __post_init__(self):
        grid = np.asarray(self.action_grid, dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        object.__setattr__(self, "action_grid", _frozen(grid))
        object.__setattr__(self, "transition", _frozen(self.transition))
        object.__setattr__(self, "mu0", _frozen(self.mu0))
        object.__setattr__(self, "gamma", float(self.gamma))

        S, A = int(self.n_states), len(grid)
        if S < 1 or A < 1:
            raise InvalidMdp("n_states and the action grid must be nonempty")
        if grid.ndim != 2:
            raise InvalidMdp("action_grid must be a list of points")
        if len({tuple(p) for p in grid.tolist()}) != A:
            raise InvalidMdp("action_grid points must be distinct")
        if self.transition.shape != (S, A, S):
            raise DimensionMismatch(
                f"transition has shape {self.transition.shape}, expected {(S, A, S)}"
            )
        if np.any(self.transition < 0) or np.any(
            np.abs(self.transition.sum(axis=2) - 1.0) > ROW_TOL
        ):
            raise InvalidMdp("every transition row must be a probability vector")
        if self.mu0.shape != (S,):
            raise DimensionMismatch(f"mu0 has shape {self.mu0.shape}, expected {(S,)}")
        if np.any(self.mu0 < 0) or abs(self.mu0.sum() - 1.0) > ROW_TOL:
            raise InvalidMdp("mu0 must be a probability vector")
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidMdp(f"gamma must lie in [0, 1), got {self.gamma}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, TabularMdp):
            return NotImplemented
        return (self.n_states == other.n_states and self.gamma == other.gamma
                and np.array_equal(self.action_grid, other.action_grid)
                and np.array_equal(self.transition, other.transition)
                and np.array_equal(self.mu0, other.mu0))

    def __hash__(self) -> int:
        return hash((self.n_states, self.gamma, self.transition.tobytes(), self.mu0.tobytes()))

    @property
    def n_actions(self) -> int:
        return self.action_grid.shape[0]

    @property
    def action_dim(self) -> int:
        return self.action_grid.shape[1]

    @property
    def n_pairs(self) -> int:
        return self.n_states * self.n_actions

    def transition_matrix(self) -> np.ndarray:
        """P with ``P[sa, s'] = p(s' | s, a)``, shape ``(|S||A|, |S|)``."""
        return self.transition.reshape(self.n_pairs, self.n_states)

    def to_dict(self) -> dict[str, Any]:
        return {
            "n_states": self.n_states,
            "action_grid": self.action_grid.tolist(),
            "transition": self.transition.tolist(),
            "gamma": self.gamma,
            "mu0": self.mu0.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> TabularMdp:
        missing = {"n_states", "action_grid", "transition", "gamma"} - set(doc)
        if missing:
            raise InvalidMdp(f"missing MDP keys: {sorted(missing)}")
        S = int(doc["n_states"])
        mu0 = doc.get("mu0")
        if mu0 is None:
            mu0 = np.eye(S)[0]
        return cls(S, doc["action_grid"], doc["transition"], doc["gamma"], mu0)

    @classmethod
    def from_json(cls, text: str) -> TabularMdp:
        return cls.from_dict(json.loads(text))

    def fingerprint(self) -> str:
        """Stable identifier used to refuse comparing runs on different MDPs."""
        import hashlib

        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class PolicyTable:
    probs: np.ndarray

    def __post_init__(self):
        probs = _frozen(self.probs)
        object.__setattr__(self, "probs", probs)
        if probs.ndim != 2:
            raise InvalidPolicy("policy table must be |S| x |A|")
        if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > POLICY_TOL):
            raise InvalidPolicy("policy rows must be probability vectors")

    @property
    def shape(self) -> tuple[int, int]:
        return self.probs.shape

    @classmethod
    def deterministic(cls, action_indices, n_actions: int) -> PolicyTable:
        idx = np.asarray(action_indices, dtype=int)
        return cls(np.eye(n_actions)[idx])

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> PolicyTable:
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(frozen=True, eq=False)
class OccupancyMeasures:
    """Discounted state-action distribution ``rho`` and its state marginal ``d``."""

    rho: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", _frozen(self.rho))
        object.__setattr__(self, "d", _frozen(self.d))

    def table(self, n_actions: int) -> np.ndarray:
        return self.rho.reshape(-1, n_actions)


@dataclass(frozen=True)
class IndexedPair:
    s: int
    a: int
    n_actions: int

    def __post_init__(self):
        if not 0 <= self.a < self.n_actions or self.s < 0:
            raise IndexError(f"pair ({self.s}, {self.a}) out of range")

    @property
    def sa(self) -> int:
        return self.s * self.n_actions + self.a

    @classmethod
    def from_flat(cls, sa: int, n_actions: int) -> IndexedPair:
        s, a = divmod(int(sa), n_actions)
        return cls(s, a, n_actions)


def _check_compatible(mdp: TabularMdp, policy: PolicyTable) -> None:
    if policy.shape != (mdp.n_states, mdp.n_actions):
        raise DimensionMismatch(
            f"policy shape {policy.shape} does not match MDP {(mdp.n_states, mdp.n_actions)}"
        )


def expand_policy_matrix(policy: PolicyTable) -> np.ndarray:
    """Block-diagonal Pi, shape ``(|S|, |S||A|)``; row s holds pi(.|s) in block s."""
    S, A = policy.shape
    Pi = np.zeros((S, S * A))
    for s in range(S):
        Pi[s, s * A:(s + 1) * A] = policy.probs[s]
    return Pi


def marginalization_matrix(n_states: int, n_actions: int) -> np.ndarray:
    if n_states < 1 or n_actions < 1:
        raise DimensionMismatch("dimensions must be positive")
    return np.kron(np.eye(n_states), np.ones((1, n_actions)))


def resolvent(mdp: TabularMdp, policy: PolicyTable) -> np.ndarray:
    """Psi = I - gamma P Pi, the |S||A| x |S||A| state-action resolvent."""
    _check_compatible(mdp, policy)
    P = mdp.transition_matrix()
    Pi = expand_policy_matrix(policy)
    return np.eye(mdp.n_pairs) - mdp.gamma * P @ Pi


def factor_resolvent(mdp: TabularMdp, policy: PolicyTable):
    """LU factors of Psi; raises SingularSystem when the solve is unusable."""
    psi = resolvent(mdp, policy)
    cond = np.linalg.cond(psi)
    if not np.isfinite(cond) or cond * np.finfo(float).eps >= 1.0:
        raise SingularSystem("resolvent I - gamma P Pi is singular", cond)
    if cond > COND_WARN:
        warnings.warn(f"ill-conditioned resolvent, cond={cond:.3e}", RuntimeWarning, stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("error", linalg.LinAlgWarning)
        try:
            return linalg.lu_factor(psi, check_finite=True)
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError) as exc:
            raise SingularSystem(str(exc), cond) from exc


def occupancy_measures(mdp: TabularMdp, policy: PolicyTable, lu=None) -> OccupancyMeasures:
    """Exact discounted occupancy by a direct solve.

    rho satisfies ``rho = (1-gamma) rho0 + gamma (P Pi)^T rho`` with
    ``rho0[sa] = mu0[s] pi(a|s)``, i.e. ``Psi^T rho = (1-gamma) Pi^T mu0``.
    """
    _check_compatible(mdp, policy)
    if lu is None:
        lu = factor_resolvent(mdp, policy)
    rho0 = (mdp.mu0[:, None] * policy.probs).ravel()
    rho = linalg.lu_solve(lu, (1.0 - mdp.gamma) * rho0, trans=1)
    # round-off can leave entries like -1e-18
    rho = np.where(rho < 0, 0.0, rho)
    d = marginalization_matrix(mdp.n_states, mdp.n_actions) @ rho
    return OccupancyMeasures(rho, d)


def occupancy_oracle_rollout(mdp: TabularMdp, policy: PolicyTable, horizon: int) -> OccupancyMeasures:
    """Truncated series (1-gamma) sum_{t<=H} gamma^t Pr(s_t, a_t) by exact propagation.

    Independent of the linear-solve path; only used as a test oracle.
    """
    _check_compatible(mdp, policy)
    if horizon < 0:
        raise ValueError("horizon must be >= 0")
    state_dist = mdp.mu0.copy()
    rho = np.zeros((mdp.n_states, mdp.n_actions))
    weight = 1.0 - mdp.gamma
    for _ in range(horizon + 1):
        joint = state_dist[:, None] * policy.probs
        rho += weight * joint
        state_dist = np.einsum("sa,sat->t", joint, mdp.transition)
        weight *= mdp.gamma
        if weight == 0.0:
            break
    rho = rho.ravel()
    return OccupancyMeasures(rho, rho.reshape(mdp.n_states, mdp.n_actions).sum(axis=1))


def random_mdp(n_states: int, n_actions: int, rng: np.random.Generator, gamma: float = 0.9,
               action_dim: int = 1) -> TabularMdp:
    """Dirichlet transitions, a uniform 1-D grid on [-1, 1] and a point-mass start."""
    transition = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if action_dim == 1:
        grid = np.linspace(-1.0, 1.0, n_actions)[:, None]
    else:
        grid = rng.uniform(-1.0, 1.0, size=(n_actions, action_dim))
    mu0 = np.zeros(n_states)
    mu0[0] = 1.0
    return TabularMdp(n_states, grid, transition, gamma, mu0)


def random_policy(n_states: int, n_actions: int, rng: np.random.Generator) -> PolicyTable:
    return PolicyTable(rng.dirichlet(np.ones(n_actions), size=n_states))
