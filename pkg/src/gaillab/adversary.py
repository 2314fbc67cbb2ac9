"""Discriminators, the reward family, outlier thresholds and CREDO filtering."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy import optimize

from gaillab.errors import DomainError, InvalidPerturbation, WrongRewardKind
from gaillab.mdp_core import IndexedPair, OccupancyMeasures

CLAMP = 1e-12
DEFAULT_SMOOTHING = 0.5
CREDO_THRESHOLD = 5.0


@dataclass(frozen=True)
class DiscriminatorMode:
    kind: str  # "optimal" | "perturbed" | "empirical"
    eps1: float = 0.0
    eps2: float = 0.0
    smoothing: float = 0.0


@dataclass(frozen=True, eq=False)
class DiscriminatorTable:
    """Per-pair discriminator values (flattened ``sa`` order).

    ``undefined`` marks pairs with no mass under either occupancy; their value
    is NaN. ``degenerate`` marks values sitting exactly at 0 or 1.
    """

    values: np.ndarray
    mode: DiscriminatorMode
    undefined: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self):
        for name in ("values", "undefined", "degenerate"):
            arr = np.array(getattr(self, name), copy=True)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __getitem__(self, sa: int) -> float:
        return float(self.values[sa])

    def table(self, n_actions: int) -> np.ndarray:
        return self.values.reshape(-1, n_actions)


def _build(num: np.ndarray, den: np.ndarray, mode: DiscriminatorMode) -> DiscriminatorTable:
    undefined = den == 0
    with np.errstate(invalid="ignore", divide="ignore"):
        values = np.where(undefined, np.nan, num / np.where(undefined, 1.0, den))
    degenerate = ~undefined & ((values <= 0.0) | (values >= 1.0))
    return DiscriminatorTable(values, mode, undefined, degenerate)


def optimal_discriminator(rho_expert: OccupancyMeasures, rho_agent: OccupancyMeasures) -> DiscriminatorTable:
    """D*(s,a) = rho_E / (rho_E + rho_h)."""
    e, h = rho_expert.rho, rho_agent.rho
    return _build(e, e + h, DiscriminatorMode("optimal"))


def check_perturbation(eps1: float, eps2: float) -> None:
    upper = eps1 >= -1 and eps2 <= 1
    lower = eps1 < -1 and eps2 > 1
    if not (upper or lower):
        raise InvalidPerturbation(
            f"(eps1, eps2)=({eps1}, {eps2}) is in neither eps1>-1, eps2<1 nor eps1<-1, eps2>1"
        )


def imperfect_discriminator(rho_expert: OccupancyMeasures, rho_agent: OccupancyMeasures,
                            eps1: float, eps2: float) -> DiscriminatorTable:
    """(1+eps1) rho_E / ((1+eps1) rho_E + (1-eps2) rho_h).

    The boundary values eps1 = -1 and eps2 = 1 are accepted and yield the
    flagged degenerate tables 0 and 1.
    """
    check_perturbation(eps1, eps2)
    num = (1.0 + eps1) * rho_expert.rho
    den = num + (1.0 - eps2) * rho_agent.rho
    mode = DiscriminatorMode("perturbed", eps1=eps1, eps2=eps2)
    if eps1 == -1.0:
        return DiscriminatorTable(np.zeros_like(num), mode, np.zeros(num.shape, bool), np.ones(num.shape, bool))
    if eps2 == 1.0:
        return DiscriminatorTable(np.ones_like(num), mode, np.zeros(num.shape, bool), np.ones(num.shape, bool))
    return _build(num, den, mode)


def empirical_discriminator(expert_counts, agent_counts, smoothing: float = DEFAULT_SMOOTHING) -> DiscriminatorTable:
    """(n_E + lam) / (n_E + n_h + 2 lam) from per-pair sample counts."""
    if not smoothing > 0:
        raise ValueError("smoothing must be positive")
    nE = np.asarray(expert_counts, dtype=float)
    nh = np.asarray(agent_counts, dtype=float)
    return _build(nE + smoothing, nE + nh + 2 * smoothing, DiscriminatorMode("empirical", smoothing=smoothing))


# --------------------------------------------------------------------------
# reward family

def _r1(d): return -np.log1p(-d)
def _r2(d): return np.log(d) - np.log1p(-d)
def _r3(d): return np.log(d)
def _r4(d): return d
def _r5(d): return np.exp(d)
def _r6(d): return -1.0 / d
def _r7(d): return d**2
def _r8(d): return np.sqrt(d)


@dataclass(frozen=True)
class RewardShape:
    tag: str
    fn: Callable
    formula: str
    inf: float  # limit as D -> 0+
    sup: float  # limit as D -> 1-
    open_at_0: bool
    open_at_1: bool


REWARDS: dict[str, RewardShape] = {
    "r1": RewardShape("r1", _r1, "-log(1-D)", 0.0, math.inf, False, True),
    "r2": RewardShape("r2", _r2, "log D - log(1-D)", -math.inf, math.inf, True, True),
    "r3": RewardShape("r3", _r3, "log D", -math.inf, 0.0, True, False),
    "r4": RewardShape("r4", _r4, "D", 0.0, 1.0, False, False),
    "r5": RewardShape("r5", _r5, "exp(D)", 1.0, math.e, False, False),
    "r6": RewardShape("r6", _r6, "-1/D", -math.inf, -1.0, True, False),
    "r7": RewardShape("r7", _r7, "D^2", 0.0, 1.0, False, False),
    "r8": RewardShape("r8", _r8, "sqrt(D)", 0.0, 1.0, False, False),
}
# r1 is PLR, r2 the combination reward used by AIRL
ALIASES = {"plr": "r1", "cr": "r2"}


def reward_shape(kind: str) -> RewardShape:
    key = ALIASES.get(kind.lower(), kind.lower())
    if key not in REWARDS:
        raise KeyError(f"unknown reward kind {kind!r}; expected one of {sorted(REWARDS)}")
    return REWARDS[key]


def reward(kind: str, d):
    """Reward shape evaluated at discriminator value(s) ``d``.

    Raises DomainError for values outside (0, 1), and at an endpoint where the
    shape has a singularity.
    """
    shape = reward_shape(kind)
    arr = np.asarray(d, dtype=float)
    if np.any(np.isnan(arr)) or np.any(arr < 0) or np.any(arr > 1):
        raise DomainError(f"{shape.tag}: discriminator values must lie in (0, 1)")
    if (shape.open_at_0 and np.any(arr == 0)) or (shape.open_at_1 and np.any(arr == 1)):
        raise DomainError(f"{shape.tag} = {shape.formula} is infinite at the endpoint")
    out = shape.fn(arr)
    return float(out) if out.ndim == 0 else out


def reward_unchecked(kind: str, d):
    """Same shapes with IEEE semantics: endpoints map to +-inf instead of raising."""
    with np.errstate(divide="ignore", invalid="ignore"):
        return reward_shape(kind).fn(np.asarray(d, dtype=float))


def check_monotone(kind: str, n: int = 1000) -> bool:
    grid = np.linspace(0.0, 1.0, n + 2)[1:-1]
    vals = reward(kind, grid)
    return bool(np.all(np.diff(vals) >= 0))


def clamp_for_log(d, eps: float = CLAMP) -> tuple[np.ndarray, int]:
    """Clamp into [eps, 1-eps]; returns the clamped values and how many moved."""
    arr = np.asarray(d, dtype=float)
    clamped = np.clip(arr, eps, 1.0 - eps)
    moved = int(np.count_nonzero(~np.isnan(arr) & (clamped != arr)))
    return clamped, moved


# --------------------------------------------------------------------------
# outlier thresholds

@dataclass(frozen=True)
class OutlierInterval:
    """Discriminator values in ``[d_star, 1)`` give reward >= c.

    ``d_star is None`` means the interval is empty (c at or above the shape's
    supremum); ``d_star == 0`` means every value is an outlier.
    """

    reward_kind: str
    c: float
    d_star: float | None
    closed_form: bool

    @property
    def empty(self) -> bool:
        return self.d_star is None

    @property
    def interval(self) -> tuple[float, float] | None:
        return None if self.d_star is None else (self.d_star, 1.0)


def plr_threshold(c: float) -> float:
    """alpha with -log(1 - alpha) = c."""
    return -math.expm1(-c)


def cr_threshold(c: float) -> float:
    """beta with log beta - log(1 - beta) = c."""
    return 1.0 / (1.0 + math.exp(-c))


BISECT_XTOL = 1e-12
BISECT_MAXITER = 256


def outlier_threshold(kind: str, c: float, closed_form: bool = True) -> OutlierInterval:
    shape = reward_shape(kind)
    if closed_form and shape.tag == "r1":
        return OutlierInterval("r1", c, plr_threshold(c) if c > 0 else 0.0, True)
    if closed_form and shape.tag == "r2":
        return OutlierInterval("r2", c, cr_threshold(c), True)
    if c >= shape.sup:
        return OutlierInterval(shape.tag, c, None, False)
    if c <= shape.inf:
        return OutlierInterval(shape.tag, c, 0.0, False)

    def f(d):
        return float(reward_unchecked(shape.tag, d)) - c

    root = optimize.bisect(f, 0.0, 1.0, xtol=BISECT_XTOL, rtol=4 * np.finfo(float).eps,
                           maxiter=BISECT_MAXITER)
    return OutlierInterval(shape.tag, c, float(root), False)


# --------------------------------------------------------------------------
# CREDO

class CredoSplit(NamedTuple):
    retained: list
    dropped: list
    n_degenerate: int


def _pair_index(pair) -> int:
    return pair.sa if isinstance(pair, IndexedPair) else int(pair)


def credo_filter(expert_pairs: Sequence, disc: DiscriminatorTable, kind: str = "r1",
                 c: float = CREDO_THRESHOLD) -> CredoSplit:
    """Keep expert pairs whose reward r(D(s,a)) is strictly below ``c``.

    Pairs whose discriminator is undefined, or whose reward is infinite at a
    degenerate value, are always dropped and counted. Order is preserved.
    """
    retained, dropped, n_bad = [], [], 0
    for pair in expert_pairs:
        sa = _pair_index(pair)
        val = disc.values[sa]
        r = float(reward_unchecked(kind, val)) if not np.isnan(val) else math.nan
        if not math.isfinite(r):
            n_bad += 1
            dropped.append(pair)
        elif r < c:
            retained.append(pair)
        else:
            dropped.append(pair)
    return CredoSplit(retained, dropped, n_bad)


def credo_retained_mask(disc: DiscriminatorTable, kind: str = "r1", c: float = CREDO_THRESHOLD) -> np.ndarray:
    r = reward_unchecked(kind, disc.values)
    with np.errstate(invalid="ignore"):
        return np.isfinite(r) & (r < c)


def credo_bound_factor(c: float) -> float:
    """e^{-c} / (1 - e^{-c})."""
    return math.exp(-c) / -math.expm1(-c)


def credo_mitigation_bound(rho_expert: OccupancyMeasures, c: float = CREDO_THRESHOLD,
                           kind: str = "r1") -> np.ndarray:
    """Lower bound on rho_h implied by retaining a pair under PLR filtering."""
    if reward_shape(kind).tag != "r1":
        raise WrongRewardKind(f"the mitigation bound is derived for r1 only, got {kind}")
    return credo_bound_factor(c) * rho_expert.rho


def verify_credo_bound(rho_expert: OccupancyMeasures, rho_agent: OccupancyMeasures,
                       c: float = CREDO_THRESHOLD) -> tuple[bool, np.ndarray, np.ndarray]:
    """Check rho_h > bound on every pair retained under the exact D*.

    Returns (all_hold, retained_mask, bound).
    """
    disc = optimal_discriminator(rho_expert, rho_agent)
    support = rho_expert.rho > 0
    retained = credo_retained_mask(disc, "r1", c) & support
    bound = credo_mitigation_bound(rho_expert, c)
    ok = bool(np.all(rho_agent.rho[retained] > bound[retained]))
    return ok, retained, bound
