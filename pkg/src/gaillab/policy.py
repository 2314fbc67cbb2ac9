"""Gaussian kernel policies on an action grid and their deterministic limit."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import softmax

from gaillab.errors import DegenerateSigma, InvalidPolicy, NoAnchors
from gaillab.mdp_core import PolicyTable, TabularMdp

MIN_SIGMA = 1e-12
DEFAULT_EXPLORATION_NOISE = 0.1  # grid-spacing units


def default_sigma_schedule(sigma0: float = 1.0, ratio: float = 0.5, steps: int = 11) -> list[float]:
    return [sigma0 * ratio**k for k in range(steps)]


@dataclass(frozen=True, eq=False)
class GaussianKernelPolicy:
    """pi_h(a|s) proportional to exp(-|a - h(s)|^2 / (2 sigma^2)) on the grid.

    The mean is ``h(s) = sum_i kappa(s_i, s) a_i`` over the anchors. With the
    delta kernel each anchor simply sets the mean of its own state; states
    without an anchor get the zero action. The RBF kernel embeds states as
    integers, ``kappa(i, j) = exp(-(i - j)^2 / (2 bandwidth^2))``.
    """

    anchor_states: np.ndarray
    anchor_actions: np.ndarray
    sigma: float
    kernel: str = "delta"
    bandwidth: float = 1.0
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        states = np.array(self.anchor_states, dtype=int).reshape(-1)
        actions = np.array(self.anchor_actions, dtype=float)
        if actions.ndim == 1:
            actions = actions[:, None]
        if len(states) != len(actions):
            raise InvalidPolicy("anchor states and actions differ in length")
        states.setflags(write=False)
        actions.setflags(write=False)
        object.__setattr__(self, "anchor_states", states)
        object.__setattr__(self, "anchor_actions", actions)
        object.__setattr__(self, "sigma", float(self.sigma))
        if not self.sigma > 0:
            raise InvalidPolicy(f"sigma must be positive, got {self.sigma}")
        if self.kernel not in ("delta", "rbf"):
            raise InvalidPolicy(f"unknown kernel {self.kernel!r}")
        if self.kernel == "rbf" and not self.bandwidth > 0:
            raise InvalidPolicy("rbf bandwidth must be positive")
        if self.kernel == "delta" and len(set(states.tolist())) != len(states):
            raise InvalidPolicy("delta kernel allows at most one anchor per state")

    @classmethod
    def from_anchors(cls, anchors: Sequence, sigma: float, kernel: str = "delta",
                     bandwidth: float = 1.0) -> GaussianKernelPolicy:
        """Build from ``[(state, action), ...]``; scalar actions are 1-D points."""
        states = [int(s) for s, _ in anchors]
        actions = [np.atleast_1d(np.asarray(a, dtype=float)) for _, a in anchors]
        if not actions:
            return cls(np.zeros(0, dtype=int), np.zeros((0, 1)), sigma, kernel, bandwidth)
        return cls(np.array(states), np.vstack(actions), sigma, kernel, bandwidth)

    @classmethod
    def per_state(cls, means, sigma: float) -> GaussianKernelPolicy:
        """Delta-kernel policy with one anchor per state at the given means."""
        means = np.asarray(means, dtype=float)
        if means.ndim == 1:
            means = means[:, None]
        return cls(np.arange(len(means)), means, sigma)

    @property
    def n_anchors(self) -> int:
        return len(self.anchor_states)

    @property
    def action_dim(self) -> int:
        return self.anchor_actions.shape[1]

    def with_sigma(self, sigma: float) -> GaussianKernelPolicy:
        return replace(self, sigma=sigma, _cache={})

    def with_anchor_actions(self, actions) -> GaussianKernelPolicy:
        return replace(self, anchor_actions=np.asarray(actions, dtype=float), _cache={})

    def kernel_matrix(self, n_states: int) -> np.ndarray:
        """K[i, s] = kappa(s_i, s), shape ``(n_anchors, n_states)``."""
        key = ("K", n_states)
        if key not in self._cache:
            if self.kernel == "delta":
                K = (self.anchor_states[:, None] == np.arange(n_states)[None, :]).astype(float)
            elif np.isinf(self.bandwidth):
                K = np.ones((self.n_anchors, n_states))
            else:
                diff = self.anchor_states[:, None] - np.arange(n_states)[None, :]
                K = np.exp(-(diff.astype(float) ** 2) / (2.0 * self.bandwidth**2))
            self._cache[key] = K
        return self._cache[key]

    def means(self, n_states: int) -> np.ndarray:
        """h(s) for every state, shape ``(n_states, action_dim)``."""
        if self.n_anchors == 0:
            raise NoAnchors("policy has no anchors")
        return self.kernel_matrix(n_states).T @ self.anchor_actions


def kernel_mean(policy: GaussianKernelPolicy, state: int, n_states: int | None = None) -> np.ndarray:
    if policy.n_anchors == 0:
        raise NoAnchors("policy has no anchors")
    n = n_states if n_states is not None else max(int(policy.anchor_states.max()), state) + 1
    return policy.means(n)[state]


def _logits(policy: GaussianKernelPolicy, mdp: TabularMdp) -> np.ndarray:
    if policy.sigma < MIN_SIGMA:
        raise DegenerateSigma(f"sigma={policy.sigma} is below {MIN_SIGMA}; use deterministic_table")
    h = policy.means(mdp.n_states)
    diff = mdp.action_grid[None, :, :] - h[:, None, :]
    return -np.sum(diff**2, axis=2) / (2.0 * policy.sigma**2)


def policy_table_from_gaussian(policy: GaussianKernelPolicy, mdp: TabularMdp) -> PolicyTable:
    """Gaussian density at the grid points, renormalized per state."""
    key = ("table", mdp)
    if key not in policy._cache:
        probs = softmax(_logits(policy, mdp), axis=1)
        policy._cache[key] = PolicyTable(probs)
    return policy._cache[key]


def deterministic_table(mdp: TabularMdp, means) -> PolicyTable:
    """The sigma -> 0 limit: all mass on the grid point nearest to h(s).

    Ties go to the lowest grid index.
    """
    means = np.asarray(means, dtype=float)
    if means.ndim == 1:
        means = means[:, None]
    dist = np.sum((mdp.action_grid[None, :, :] - means[:, None, :]) ** 2, axis=2)
    return PolicyTable.deterministic(np.argmin(dist, axis=1), mdp.n_actions)


def nearest_grid_index(mdp: TabularMdp, point) -> int:
    point = np.atleast_1d(np.asarray(point, dtype=float))
    return int(np.argmin(np.sum((mdp.action_grid - point) ** 2, axis=1)))


def centred_actions(pi: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """a - abar(s) as sum_b pi(b|s) (a - b), shape ``(S, A, k)``.

    Subtracting the mean directly cancels catastrophically when one action
    holds almost all the mass; the weighted sum of gaps does not.
    """
    gaps = grid[:, None, :] - grid[None, :, :]                    # (A, B, k)
    return np.einsum("sb,abk->sak", pi, gaps)


def policy_jacobian(policy: GaussianKernelPolicy, mdp: TabularMdp) -> np.ndarray:
    """d pi(a|s) / d a_{p,k} for anchor p, action coordinate k.

    Returns shape ``(n_anchors * action_dim, |S||A|)`` with row index
    ``p * action_dim + k``. Because the table is renormalized over the grid,
    the score ``(a - h(s)) / sigma^2`` is centred by its policy mean, which
    turns ``a - h(s)`` into ``a - abar(s)``; every row then sums to zero.
    """
    key = ("jac", mdp)
    if key in policy._cache:
        return policy._cache[key]
    pi = policy_table_from_gaussian(policy, mdp).probs           # (S, A)
    grid = mdp.action_grid                                        # (A, k)
    centred = centred_actions(pi, grid)                           # (S, A, k)
    dpi_dh = pi[:, :, None] * centred / policy.sigma**2           # (S, A, k)
    K = policy.kernel_matrix(mdp.n_states)                        # (P, S)
    J = np.einsum("ps,sak->pksa", K, dpi_dh)
    J = J.reshape(policy.n_anchors * policy.action_dim, mdp.n_pairs)
    policy._cache[key] = J
    return J


def raw_score(policy: GaussianKernelPolicy, state: int, action_point, n_states: int) -> np.ndarray:
    """Unnormalized score Sigma^{-1} (a - h(s)) of the continuous density."""
    a = np.atleast_1d(np.asarray(action_point, dtype=float))
    return (a - policy.means(n_states)[state]) / policy.sigma**2


@dataclass(frozen=True)
class DisparityVerdict:
    holds: bool
    ratio: float
    C_used: float
    noise_applied: bool


def covariance_norm(sigma: float) -> float:
    """Spectral norm of sigma^2 I."""
    return sigma**2


def disparity_event(policy: GaussianKernelPolicy, state: int, expert_action, C: float,
                    n_states: int, exploration_noise: float | None = None,
                    rng: np.random.Generator | None = None) -> DisparityVerdict:
    """Does |h(s) (+ noise) - a| >= C |Sigma|_2 hold at the expert pair?

    With ``exploration_noise`` the executed action is ``h(s) + N(0, noise^2 I)``.
    """
    if not C > 0:
        raise ValueError("C must be positive")
    a = np.atleast_1d(np.asarray(expert_action, dtype=float))
    played = policy.means(n_states)[state].copy()
    noisy = exploration_noise is not None and exploration_noise > 0
    if noisy:
        if rng is None:
            raise ValueError("exploration noise needs an rng")
        played = played + rng.normal(0.0, exploration_noise, size=played.shape)
    ratio = float(np.linalg.norm(played - a) / covariance_norm(policy.sigma))
    return DisparityVerdict(ratio >= C, ratio, float(C), noisy)


def sample_action(table: PolicyTable, state: int, rng: np.random.Generator) -> int:
    return int(rng.choice(table.shape[1], p=table.probs[state]))
