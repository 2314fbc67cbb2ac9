"""Closed-form policy-loss gradients on tabular occupancies and their probes.

The occupancy Jacobian is ``Upsilon = H Delta(T^T d) Psi^{-1}`` where ``H``
is the policy Jacobian, ``d`` the state occupancy and ``Psi = I - gamma P Pi``.
Row ``(p, k)`` of Upsilon is the derivative of the whole occupancy vector with
respect to coordinate ``k`` of anchor ``p``; column ``sa`` is the gradient of
``rho(s, a)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg

from gaillab.adversary import check_perturbation
from gaillab.errors import InvalidPerturbation, ZeroExpertDensity
from gaillab.mdp_core import (
    IndexedPair,
    OccupancyMeasures,
    PolicyTable,
    TabularMdp,
    factor_resolvent,
    marginalization_matrix,
    occupancy_measures,
)
from gaillab.policy import (
    GaussianKernelPolicy,
    centred_actions,
    covariance_norm,
    policy_jacobian,
    policy_table_from_gaussian,
)

EXPLOSION_THRESHOLD = 1e8


@dataclass(frozen=True, eq=False)
class OccupancyJacobian:
    upsilon: np.ndarray            # (n_params, |S||A|)
    occupancy: OccupancyMeasures

    def column(self, sa: int) -> np.ndarray:
        return self.upsilon[:, sa]


def occupancy_gradient(mdp: TabularMdp, policy: GaussianKernelPolicy) -> OccupancyJacobian:
    table = policy_table_from_gaussian(policy, mdp)
    lu = factor_resolvent(mdp, table)
    occ = occupancy_measures(mdp, table, lu=lu)
    H = policy_jacobian(policy, mdp)
    weights = marginalization_matrix(mdp.n_states, mdp.n_actions).T @ occ.d
    # Upsilon = (H diag(w)) Psi^{-1}  <=>  Upsilon^T = Psi^{-T} (H diag(w))^T
    upsilon = linalg.lu_solve(lu, (H * weights[None, :]).T, trans=1).T
    return OccupancyJacobian(upsilon, occ)


def _half_kl_to_mix(p: np.ndarray, q: np.ndarray) -> float:
    """sum p log(2p / (p+q)) with 0 log 0 = 0; logs taken separately so a
    subnormal p never meets a midpoint that rounded to zero."""
    mask = p > 0
    pm, qm = p[mask], q[mask]
    return float(np.sum(pm * (math.log(2.0) + np.log(pm) - np.log(pm + qm))))


def js_divergence(rho_agent, rho_expert) -> float:
    """Jensen-Shannon divergence in nats, with 0 log 0 = 0."""
    p = np.asarray(getattr(rho_agent, "rho", rho_agent), dtype=float)
    q = np.asarray(getattr(rho_expert, "rho", rho_expert), dtype=float)
    # rounding can leave -1e-17 for identical inputs
    return max(0.0, 0.5 * _half_kl_to_mix(p, q) + 0.5 * _half_kl_to_mix(q, p))


@dataclass(frozen=True, eq=False)
class GradientReport:
    estimator_value: np.ndarray
    norm: float
    sample_pair: IndexedPair
    sigma: float
    finite: bool

    @classmethod
    def build(cls, value: np.ndarray, pair: IndexedPair, sigma: float) -> GradientReport:
        value = np.asarray(value, dtype=float)
        finite = bool(np.all(np.isfinite(value)))
        with np.errstate(over="ignore", invalid="ignore"):
            norm = float(np.linalg.norm(value)) if finite else math.inf
        return cls(value, norm, pair, sigma, finite)


def _as_pair(pair, n_actions: int) -> IndexedPair:
    if isinstance(pair, IndexedPair):
        return pair
    if isinstance(pair, tuple):
        return IndexedPair(pair[0], pair[1], n_actions)
    return IndexedPair.from_flat(pair, n_actions)


def theorem1_from_parts(grad_rho: np.ndarray, rho_h: float, rho_e: float) -> np.ndarray:
    """grad rho_h / (2 rho_E) * log(2 rho_h / (rho_h + rho_E))."""
    if rho_e <= 0:
        raise ZeroExpertDensity("expert occupancy is zero at the sampled pair")
    with np.errstate(divide="ignore", invalid="ignore"):
        log_term = math.log(2.0 * rho_h / (rho_h + rho_e)) if rho_h > 0 else -math.inf
        return grad_rho / (2.0 * rho_e) * log_term


def corollary1_from_parts(grad_rho: np.ndarray, rho_h: float, rho_e: float,
                          eps1: float, eps2: float) -> np.ndarray:
    """grad rho_h / rho_E * log((1-e2) rho_h / den) + (e1 + e2) grad rho_h / den.

    ``den = (1+e1) rho_E + (1-e2) rho_h``; ``log((1-e2) rho_h / den)`` is
    ``log(1 - D~)`` for the perturbed discriminator.
    """
    if rho_e <= 0:
        raise ZeroExpertDensity("expert occupancy is zero at the sampled pair")
    if eps1 == -1.0 or eps2 == 1.0:
        raise InvalidPerturbation("degenerate perturbation (eps1=-1 or eps2=1) has no gradient")
    check_perturbation(eps1, eps2)
    agent = (1.0 - eps2) * rho_h
    den = (1.0 + eps1) * rho_e + agent
    with np.errstate(divide="ignore", invalid="ignore"):
        # both signs flip together on the eps1 < -1, eps2 > 1 branch
        ratio = agent / den if den != 0 else 0.0
        log_term = math.log(ratio) if ratio > 0 else -math.inf
        return grad_rho / rho_e * log_term + (eps1 + eps2) * grad_rho / den


def log_occupancy_gradient(mdp: TabularMdp, policy: GaussianKernelPolicy, jac: OccupancyJacobian,
                           pair) -> np.ndarray:
    """grad log rho_h(s, a) = grad log d(s) + grad log pi(a|s).

    Stays finite where rho_h(s, a) itself underflows, because the policy part
    is the centred score and never divides by pi.
    """
    pair = _as_pair(pair, mdp.n_actions)
    A = mdp.n_actions
    d = jac.occupancy.d[pair.s]
    if not d > 0:
        raise ZeroDivisionError(f"state {pair.s} has zero occupancy")
    grad_d = jac.upsilon[:, pair.s * A:(pair.s + 1) * A].sum(axis=1)
    pi = policy_table_from_gaussian(policy, mdp).probs[pair.s]
    centred = centred_actions(pi[None, :], mdp.action_grid)[0, pair.a]
    K = policy.kernel_matrix(mdp.n_states)[:, pair.s]
    score = (K[:, None] * centred[None, :] / policy.sigma**2).ravel()
    return grad_d / d + score


def corollary1_from_discriminator(grad_rho: np.ndarray, grad_log_rho: np.ndarray, rho_e: float,
                                  d_value: float, reward_value: float | None = None) -> np.ndarray:
    """Perturbed-reward estimator written through the discriminator value at the pair.

    Any D in (0, 1) is an imperfect discriminator with ``(1+e1) rho_E = D den``
    and ``(1-e2) rho_h = (1-D) den``; substituting gives

        grad rho_h / rho_E * (D - r) - (1 - D) grad log rho_h,   r = -log(1-D),

    independent of ``den``. ``reward_value`` replaces r (used for saturated or
    alternative rewards). At D = D* this is the eps = 0 estimator.
    """
    if rho_e <= 0:
        raise ZeroExpertDensity("expert occupancy is zero at the sampled pair")
    if not 0.0 < d_value < 1.0:
        raise InvalidPerturbation(f"discriminator value {d_value} must lie strictly inside (0, 1)")
    r = -math.log1p(-d_value) if reward_value is None else reward_value
    return grad_rho / rho_e * (d_value - r) - (1.0 - d_value) * grad_log_rho


def theorem1_estimator(mdp: TabularMdp, policy: GaussianKernelPolicy, rho_expert: OccupancyMeasures,
                       pair, jac: OccupancyJacobian | None = None) -> GradientReport:
    pair = _as_pair(pair, mdp.n_actions)
    jac = jac or occupancy_gradient(mdp, policy)
    value = theorem1_from_parts(jac.column(pair.sa), jac.occupancy.rho[pair.sa], rho_expert.rho[pair.sa])
    return GradientReport.build(value, pair, policy.sigma)


def corollary1_estimator(mdp: TabularMdp, policy: GaussianKernelPolicy, rho_expert: OccupancyMeasures,
                         eps1: float, eps2: float, pair,
                         jac: OccupancyJacobian | None = None) -> GradientReport:
    pair = _as_pair(pair, mdp.n_actions)
    jac = jac or occupancy_gradient(mdp, policy)
    value = corollary1_from_parts(jac.column(pair.sa), jac.occupancy.rho[pair.sa],
                                  rho_expert.rho[pair.sa], eps1, eps2)
    return GradientReport.build(value, pair, policy.sigma)


def expert_weighted_sums(mdp: TabularMdp, policy: GaussianKernelPolicy, rho_expert: OccupancyMeasures,
                         eps1: float = 0.0, eps2: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """sum_sa rho_E(sa) * estimator(sa) over the expert support, for both estimators.

    Returns (theorem1_sum, corollary1_sum).
    """
    jac = occupancy_gradient(mdp, policy)
    t1 = np.zeros(jac.upsilon.shape[0])
    c1 = np.zeros_like(t1)
    for sa in np.flatnonzero(rho_expert.rho > 0):
        w = rho_expert.rho[sa]
        col, rh = jac.column(sa), jac.occupancy.rho[sa]
        t1 += w * theorem1_from_parts(col, rh, w)
        c1 += w * corollary1_from_parts(col, rh, w, eps1, eps2)
    return t1, c1


# --------------------------------------------------------------------------
# scalar objectives whose derivatives the estimators are; used by the
# finite-difference oracles

def js_pair_summand(rho_h: float, rho_e: float) -> float:
    """(rho_h/rho_E) log(2 rho_h/(rho_h+rho_E)) + log(2 rho_E/(rho_h+rho_E))."""
    s = rho_h + rho_e
    return rho_h / rho_e * math.log(2 * rho_h / s) + math.log(2 * rho_e / s)


def perturbed_pair_summand(rho_h: float, rho_e: float, eps1: float, eps2: float) -> float:
    """log((1+e1) rho_E / den) + (rho_h/rho_E) log((1-e2) rho_h / den)."""
    den = (1 + eps1) * rho_e + (1 - eps2) * rho_h
    return math.log((1 + eps1) * rho_e / den) + rho_h / rho_e * math.log((1 - eps2) * rho_h / den)


def central_difference(fn, x: np.ndarray, step: float) -> np.ndarray:
    """Central differences of a scalar or vector function of a flat parameter vector."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * step))
    return np.array(cols)


def relative_error(approx, exact, floor: float = 1e-12) -> float:
    """max |approx - exact| / max(max |exact|, floor)."""
    approx, exact = np.asarray(approx), np.asarray(exact)
    return float(np.max(np.abs(approx - exact)) / max(float(np.max(np.abs(exact))), floor))


def occupancy_of_params(mdp: TabularMdp, policy: GaussianKernelPolicy):
    """Closure mapping flat anchor parameters to the occupancy vector."""
    shape = policy.anchor_actions.shape

    def fn(theta):
        p = policy.with_anchor_actions(np.reshape(theta, shape))
        return occupancy_measures(mdp, policy_table_from_gaussian(p, mdp)).rho

    return fn


# --------------------------------------------------------------------------
# sweeps and explosion probes

@dataclass(frozen=True)
class SigmaSweepRow:
    sigma: float
    grad_norm: float
    disparity_ratio: float
    exploded: bool


def sigma_sweep(mdp: TabularMdp, rho_expert: OccupancyMeasures, anchors: GaussianKernelPolicy,
                schedule: Sequence[float], pair, expert_action=None,
                explosion_threshold: float = EXPLOSION_THRESHOLD) -> list[SigmaSweepRow]:
    """JS-gradient norm at a fixed expert pair along a decreasing sigma schedule."""
    schedule = [float(s) for s in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("sigma schedule must be strictly decreasing")
    pair = _as_pair(pair, mdp.n_actions)
    a_t = mdp.action_grid[pair.a] if expert_action is None else np.atleast_1d(expert_action)
    h_t = anchors.means(mdp.n_states)[pair.s]
    rows = []
    for sigma in schedule:
        rep = theorem1_estimator(mdp, anchors.with_sigma(sigma), rho_expert, pair)
        ratio = float(np.linalg.norm(h_t - a_t) / covariance_norm(sigma))
        rows.append(SigmaSweepRow(sigma, rep.norm, ratio,
                                  (not rep.finite) or rep.norm > explosion_threshold))
    return rows


def norms_increasing_from(rows: Sequence[SigmaSweepRow], start: int) -> bool:
    norms = [r.grad_norm for r in rows[start:]]
    return all(b > a for a, b in zip(norms, norms[1:]))


@dataclass(frozen=True)
class ExplosionProbability:
    score_event: float        # Pr(|Sigma^{-1}(a_t - h(s_t))| >= C)
    disparity_event: float    # Pr(|a_t - h(s_t)| >= C |Sigma|_2)
    half_width: float         # 95% normal-approximation half width
    n_samples: int
    compatible: bool          # score_event >= disparity_event - slack


def explosion_probability(policy: GaussianKernelPolicy, expert: PolicyTable, mdp: TabularMdp, C: float,
                          n_samples: int, rng: np.random.Generator,
                          rho_expert: OccupancyMeasures | None = None,
                          exploration_noise: float | None = None) -> ExplosionProbability:
    """Monte-Carlo frequency of the explosion events over expert pairs drawn from rho_E."""
    if not C > 0 or n_samples < 1:
        raise ValueError("need C > 0 and n_samples >= 1")
    rho_expert = rho_expert or occupancy_measures(mdp, expert)
    p = rho_expert.rho / rho_expert.rho.sum()
    draws = rng.choice(mdp.n_pairs, size=n_samples, p=p)
    s_idx, a_idx = np.divmod(draws, mdp.n_actions)
    h = policy.means(mdp.n_states)[s_idx]
    if exploration_noise:
        h = h + rng.normal(0.0, exploration_noise, size=h.shape)
    gap = mdp.action_grid[a_idx] - h
    score = np.linalg.norm(gap / policy.sigma**2, axis=1)
    disparity = np.linalg.norm(gap, axis=1) / covariance_norm(policy.sigma)
    f_score = float(np.mean(score >= C))
    f_disp = float(np.mean(disparity >= C))
    half = 1.96 * math.sqrt(max(f_score * (1 - f_score), f_disp * (1 - f_disp), 0.25 / n_samples) / n_samples)
    return ExplosionProbability(f_score, f_disp, half, n_samples, f_score >= f_disp - half)
