"""Alternating GAIL training at desk scale: DE and ST modes, CREDO, sweeps.

Each iteration builds a discriminator from the current imitator, draws one
expert pair from the expert occupancy and takes a plain gradient step on the
anchor means with the perturbed-reward gradient estimator evaluated through that
discriminator. Everything is exact except the pair draw and, in empirical
mode, the sampled batches; a run is a pure function of (config, seed).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from gaillab.adversary import (
    CLAMP,
    DEFAULT_SMOOTHING,
    DiscriminatorTable,
    clamp_for_log,
    empirical_discriminator,
    optimal_discriminator,
    reward_shape,
    reward_unchecked,
)
from gaillab.errors import GailLabError
from gaillab.gradient_lab import (
    EXPLOSION_THRESHOLD,
    corollary1_from_discriminator,
    js_divergence,
    log_occupancy_gradient,
    occupancy_gradient,
)
from gaillab.mdp_core import OccupancyMeasures, PolicyTable, TabularMdp, occupancy_measures
from gaillab.policy import MIN_SIGMA, GaussianKernelPolicy, policy_table_from_gaussian

THREADS_ENV = "GAILLAB_THREADS"


@dataclass(frozen=True)
class CredoConfig:
    c: float = 5.0
    variant: str = "filter"  # "filter" drops outlier expert pairs, "saturate" caps r at c


@dataclass(frozen=True)
class ImitatorInit:
    """Initial anchors ``[(state, action point), ...]`` plus the state kernel."""

    anchors: tuple
    kernel: str = "delta"
    bandwidth: float = 1.0

    def policy(self, sigma: float) -> GaussianKernelPolicy:
        return GaussianKernelPolicy.from_anchors(self.anchors, sigma, self.kernel, self.bandwidth)


@dataclass(frozen=True)
class ExperimentConfig:
    mdp: TabularMdp
    expert_actions: tuple            # grid index per state
    imitator: ImitatorInit
    mode: str = "DE"                 # "DE" | "ST"
    sigma0: float = 0.5
    decay: float = 0.8
    sigma: float | None = None       # fixed sigma, ST only
    sigma_floor: float = MIN_SIGMA
    exploration_noise: float = 0.1   # grid-spacing units, DE empirical batches only
    reward_kind: str = "r1"
    credo: CredoConfig | None = None
    discriminator: str = "exact"     # "exact" | "empirical"
    smoothing: float = DEFAULT_SMOOTHING
    iterations: int = 200
    step_size: float = 0.05          # grid-spacing units
    batch_size: int = 128
    seeds: tuple = (0,)
    explosion_threshold: float = EXPLOSION_THRESHOLD
    convergence_tol: float = 0.05
    disc_refresh: int = 1

    def __post_init__(self):
        object.__setattr__(self, "expert_actions", tuple(int(i) for i in self.expert_actions))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        check_config(self)

    def sigma_at(self, iteration: int) -> float:
        if self.mode == "ST":
            return float(self.sigma)
        return max(self.sigma0 * self.decay**iteration, self.sigma_floor)

    @property
    def grid_spacing(self) -> float:
        return grid_spacing(self.mdp)

    def expert_table(self) -> PolicyTable:
        return PolicyTable.deterministic(self.expert_actions, self.mdp.n_actions)

    def with_(self, **changes) -> ExperimentConfig:
        return replace(self, **changes)


def grid_spacing(mdp: TabularMdp) -> float:
    """Smallest distance between two grid points."""
    g = mdp.action_grid
    if len(g) < 2:
        return 1.0
    dist = np.sqrt(((g[:, None, :] - g[None, :, :]) ** 2).sum(axis=2))
    return float(dist[dist > 0].min())


def check_config(cfg: ExperimentConfig) -> None:
    """Raise ValueError("<key>: <constraint>") on the first violated invariant."""
    def bad(key, msg):
        raise ValueError(f"{key}: {msg}")

    if cfg.mode not in ("DE", "ST"):
        bad("mode", "must be 'DE' or 'ST'")
    if cfg.mode == "DE" and not 0.0 < cfg.decay < 1.0:
        bad("decay", "DE mode requires decay in (0, 1)")
    if cfg.mode == "DE" and not cfg.sigma0 > 0:
        bad("sigma0", "must be > 0")
    if cfg.mode == "ST" and (cfg.sigma is None or not cfg.sigma > 0):
        bad("sigma", "ST mode requires a fixed sigma > 0")
    if not cfg.sigma_floor >= MIN_SIGMA:
        bad("sigma_floor", f"must be >= {MIN_SIGMA}")
    if cfg.iterations < 1:
        bad("iterations", "must be >= 1")
    if not cfg.step_size > 0:
        bad("step_size", "must be > 0")
    if cfg.batch_size < 1:
        bad("batch_size", "must be >= 1")
    if not cfg.exploration_noise >= 0:
        bad("exploration_noise", "must be >= 0")
    if cfg.discriminator not in ("exact", "empirical"):
        bad("discriminator", "must be 'exact' or 'empirical'")
    if cfg.discriminator == "empirical" and not cfg.smoothing > 0:
        bad("smoothing", "must be > 0")
    if not cfg.explosion_threshold > 0:
        bad("explosion_threshold", "must be > 0")
    if not cfg.convergence_tol > 0:
        bad("convergence_tol", "must be > 0")
    if cfg.disc_refresh < 1:
        bad("disc_refresh", "must be >= 1")
    if not cfg.seeds:
        bad("seeds", "must be nonempty")
    try:
        reward_shape(cfg.reward_kind)
    except KeyError as exc:
        bad("reward_kind", str(exc))
    if cfg.credo is not None:
        if cfg.credo.variant not in ("filter", "saturate"):
            bad("credo.variant", "must be 'filter' or 'saturate'")
        if not math.isfinite(cfg.credo.c):
            bad("credo.c", "must be finite")
    if len(cfg.expert_actions) != cfg.mdp.n_states:
        bad("expert_actions", f"needs one grid index per state ({cfg.mdp.n_states})")
    if any(not 0 <= i < cfg.mdp.n_actions for i in cfg.expert_actions):
        bad("expert_actions", f"grid indices must lie in [0, {cfg.mdp.n_actions})")
    if not cfg.imitator.anchors:
        bad("imitator.anchors", "must be nonempty")
    try:
        pol = cfg.imitator.policy(1.0)
    except GailLabError as exc:
        bad("imitator", str(exc))
    if pol.action_dim != cfg.mdp.action_dim:
        bad("imitator.anchors", "anchor actions must match the grid dimension")
    if pol.anchor_states.min() < 0 or pol.anchor_states.max() >= cfg.mdp.n_states:
        bad("imitator.anchors", "anchor states out of range")


# --------------------------------------------------------------------------
# records

TRACE_FIELDS = ("iteration", "sigma", "grad_norm", "js", "p_expert", "clamp_count", "credo_dropped")


@dataclass(frozen=True)
class TraceRow:
    iteration: int
    sigma: float
    grad_norm: float
    js: float
    p_expert: float
    clamp_count: int
    credo_dropped: int

    def as_tuple(self) -> tuple:
        return tuple(getattr(self, f) for f in TRACE_FIELDS)


@dataclass(frozen=True)
class RunRecord:
    seed: int
    trace: tuple
    diverged: bool
    diverged_at: int | None
    final_js: float
    converged_at: int | None = None
    error: str | None = None

    def converged(self, tol: float) -> bool:
        return (not self.diverged) and self.final_js < tol

    @property
    def max_p_expert(self) -> float:
        vals = [r.p_expert for r in self.trace if not math.isnan(r.p_expert)]
        return max(vals) if vals else math.nan


def p_expert_statistic(disc: DiscriminatorTable | np.ndarray, rho_expert) -> float:
    """rho_E-weighted mean of D over the expert support."""
    values = np.asarray(getattr(disc, "values", disc), dtype=float)
    w = np.asarray(getattr(rho_expert, "rho", rho_expert), dtype=float)
    support = w > 0
    return float(np.sum(w[support] * values[support]) / np.sum(w[support]))


def _row_bad(row, threshold: float) -> bool:
    norm = row.grad_norm if hasattr(row, "grad_norm") else row
    return not math.isfinite(norm) or norm > threshold


def detect_divergence(trace: Sequence, threshold: float = EXPLOSION_THRESHOLD) -> tuple[bool, int | None]:
    """First row whose gradient norm exceeds ``threshold`` or is non-finite.

    Rows may be TraceRows or bare norms; the returned index is the row's
    ``iteration`` field when present, else its 1-based position.
    """
    if len(trace) == 0:
        raise ValueError("trace is empty")
    for pos, row in enumerate(trace, start=1):
        if _row_bad(row, threshold):
            return True, getattr(row, "iteration", pos)
    return False, None


def divergence_rate(records: Sequence[RunRecord]) -> float:
    if not records:
        raise ValueError("no records")
    return sum(r.diverged for r in records) / len(records)


# --------------------------------------------------------------------------
# one run

def _empirical_counts(rng: np.random.Generator, rho: np.ndarray, n: int) -> np.ndarray:
    p = np.clip(rho, 0.0, None)
    return rng.multinomial(n, p / p.sum()).astype(float)


def _noisy_data_policy(cfg: ExperimentConfig, policy: GaussianKernelPolicy,
                       rng: np.random.Generator) -> GaussianKernelPolicy:
    noise = cfg.exploration_noise * cfg.grid_spacing
    if cfg.mode != "DE" or noise == 0:
        return policy
    shift = rng.normal(0.0, noise, size=policy.anchor_actions.shape)
    return policy.with_anchor_actions(policy.anchor_actions + shift)


def _build_discriminator(cfg, policy, rho_h, rho_e, rng) -> DiscriminatorTable:
    if cfg.discriminator == "exact":
        return optimal_discriminator(rho_e, rho_h)
    data_policy = _noisy_data_policy(cfg, policy, rng)
    rho_data = rho_h if data_policy is policy else occupancy_measures(
        cfg.mdp, policy_table_from_gaussian(data_policy, cfg.mdp))
    n_e = _empirical_counts(rng, rho_e.rho, cfg.batch_size)
    n_h = _empirical_counts(rng, rho_data.rho, cfg.batch_size)
    return empirical_discriminator(n_e, n_h, cfg.smoothing)


def _is_log_reward(kind: str) -> bool:
    shape = reward_shape(kind)
    return shape.open_at_0 or shape.open_at_1


@dataclass
class _State:
    theta: np.ndarray
    disc: DiscriminatorTable | None = None
    rows: list = field(default_factory=list)


def run_gail(cfg: ExperimentConfig, seed: int) -> RunRecord:
    """One training run; numeric failures end the run as a divergence."""
    rng = np.random.default_rng(seed)
    mdp = cfg.mdp
    rho_e = occupancy_measures(mdp, cfg.expert_table())
    support = np.flatnonzero(rho_e.rho > 0)
    base = cfg.imitator.policy(cfg.sigma_at(0))
    st = _State(theta=np.array(base.anchor_actions, dtype=float))
    lr = cfg.step_size * cfg.grid_spacing
    log_reward = _is_log_reward(cfg.reward_kind)
    filter_on = cfg.credo is not None and cfg.credo.variant == "filter"
    saturate_on = cfg.credo is not None and cfg.credo.variant == "saturate"

    error = None
    converged_at = None
    for it in range(cfg.iterations):
        sigma = cfg.sigma_at(it)
        policy = base.with_sigma(sigma).with_anchor_actions(st.theta)
        try:
            jac = occupancy_gradient(mdp, policy)
            rho_h = jac.occupancy
            js = js_divergence(rho_h, rho_e)
            if converged_at is None and js < cfg.convergence_tol:
                converged_at = it
            if st.disc is None or it % cfg.disc_refresh == 0:
                st.disc = _build_discriminator(cfg, policy, rho_h, rho_e, rng)
            raw = st.disc.values[support]
            p_exp = p_expert_statistic(st.disc, rho_e)
            if log_reward:
                d_vals, clamps = clamp_for_log(raw, CLAMP)
            else:
                d_vals, clamps = raw.copy(), 0
            rewards = reward_unchecked(cfg.reward_kind, d_vals)
            if filter_on:
                with np.errstate(invalid="ignore"):
                    keep = np.isfinite(rewards) & (rewards < cfg.credo.c)
            else:
                keep = np.ones(len(support), dtype=bool)
            dropped = int(np.count_nonzero(~keep))

            if keep.any():
                w = rho_e.rho[support] * keep
                j = int(rng.choice(len(support), p=w / w.sum()))
                sa = int(support[j])
                r = float(rewards[j])
                if saturate_on:
                    r = min(r, cfg.credo.c)
                grad_log = log_occupancy_gradient(mdp, policy, jac, sa)
                with np.errstate(over="ignore", invalid="ignore"):
                    g = corollary1_from_discriminator(jac.column(sa), grad_log, rho_e.rho[sa],
                                                      float(d_vals[j]), r)
                    norm = float(np.linalg.norm(g)) if np.all(np.isfinite(g)) else math.inf
            else:
                # every expert pair was filtered: the discriminator update has no
                # expert data and the policy is left alone this iteration
                g, norm = np.zeros(st.theta.size), 0.0
        except (GailLabError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            error = f"{type(exc).__name__}: {exc}"
            st.rows.append(TraceRow(it, sigma, math.inf, math.nan, math.nan, 0, 0))
            break

        st.rows.append(TraceRow(it, sigma, norm, js, p_exp, int(clamps), dropped))
        if _row_bad(norm, cfg.explosion_threshold):
            break
        st.theta = st.theta - lr * g.reshape(st.theta.shape)

    diverged, at = detect_divergence(st.rows, cfg.explosion_threshold)
    if diverged:
        final_js = st.rows[-1].js
        converged_at = None
    else:
        final_policy = base.with_sigma(cfg.sigma_at(cfg.iterations)).with_anchor_actions(st.theta)
        final_js = js_divergence(occupancy_measures(mdp, policy_table_from_gaussian(final_policy, mdp)), rho_e)
        if final_js >= cfg.convergence_tol:
            converged_at = None
        elif converged_at is None:
            converged_at = cfg.iterations
    return RunRecord(int(seed), tuple(st.rows), diverged, at, float(final_js), converged_at, error)


# --------------------------------------------------------------------------
# sweeps

@dataclass(frozen=True)
class SweepSummary:
    n_runs: int
    divergence_rate: float
    n_converged: int
    median_iterations_to_convergence: float | None
    final_js_quartiles: tuple

    def to_dict(self) -> dict:
        return {
            "n_runs": self.n_runs,
            "divergence_rate": self.divergence_rate,
            "n_converged": self.n_converged,
            "median_iterations_to_convergence": self.median_iterations_to_convergence,
            "final_js_quartiles": list(self.final_js_quartiles),
        }


def summarize(records: Sequence[RunRecord], tol: float) -> SweepSummary:
    records = list(records)
    if not records:
        raise ValueError("no records")
    conv = [r.converged_at for r in records if r.converged(tol)]
    med = float(np.median(conv)) if conv else None
    js = np.array([r.final_js for r in records], dtype=float)
    finite = js[np.isfinite(js)]
    q = tuple(float(x) for x in np.quantile(finite, [0.25, 0.5, 0.75])) if finite.size else (math.nan,) * 3
    return SweepSummary(len(records), divergence_rate(records), len(conv), med, q)


def worker_count(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_ENV, "1").strip() or "1"
    try:
        n = int(raw)
    except ValueError:
        n = 1
    if n <= 0:
        n = os.cpu_count() or 1
    return max(1, min(n, n_jobs))


def run_sweep(cfg: ExperimentConfig) -> tuple[list[RunRecord], SweepSummary]:
    """Independent runs over ``cfg.seeds``; results are returned in seed order."""
    seeds = list(cfg.seeds)
    if not seeds:
        raise ValueError("seeds must be nonempty")
    workers = worker_count(len(seeds))
    if workers == 1:
        records = [run_gail(cfg, s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(lambda s: run_gail(cfg, s), seeds))
    return records, summarize(records, cfg.convergence_tol)
