"""The shared canonical disparity MDP and helpers to build random test cases."""

from __future__ import annotations

import numpy as np

from gaillab.mdp_core import PolicyTable, TabularMdp
from gaillab.policy import GaussianKernelPolicy

CANONICAL_GRID = (-1.0, -0.5, 0.0, 0.5, 1.0)
CANONICAL_STATES = 5
CANONICAL_GAMMA = 0.9
EXPERT_ACTION = 1.0
IMITATOR_ANCHOR = -1.0
# midpoint between the expert action and its grid neighbour
BOUNDARY_ANCHOR = 0.75


def canonical_mdp(gamma: float = CANONICAL_GAMMA) -> TabularMdp:
    """Five states on a ring; action a pushes clockwise with probability 0.1 + 0.8 (1+a)/2.

    The rest of the mass moves counter-clockwise, so every action reaches every
    state and an expert that always plays +1 visits the whole ring.
    """
    S, grid = CANONICAL_STATES, np.array(CANONICAL_GRID)
    P = np.zeros((S, len(grid), S))
    for s in range(S):
        for i, a in enumerate(grid):
            right = 0.1 + 0.8 * (1.0 + a) / 2.0
            P[s, i, (s + 1) % S] += right
            P[s, i, (s - 1) % S] += 1.0 - right
    mu0 = np.zeros(S)
    mu0[0] = 1.0
    return TabularMdp(S, grid[:, None], P, gamma, mu0)


def expert_indices(mdp: TabularMdp, action: float = EXPERT_ACTION) -> np.ndarray:
    idx = int(np.argmin(np.abs(mdp.action_grid[:, 0] - action)))
    return np.full(mdp.n_states, idx)


def canonical_expert(mdp: TabularMdp) -> PolicyTable:
    """Deterministic expert playing +1 in every state."""
    return PolicyTable.deterministic(expert_indices(mdp), mdp.n_actions)


def imitator(mdp: TabularMdp, sigma: float, anchor: float = IMITATOR_ANCHOR) -> GaussianKernelPolicy:
    return GaussianKernelPolicy.per_state(np.full(mdp.n_states, anchor), sigma)


def random_anchor_policy(mdp: TabularMdp, sigma: float, rng: np.random.Generator,
                         low: float = -1.5, high: float = 1.5) -> GaussianKernelPolicy:
    return GaussianKernelPolicy.per_state(rng.uniform(low, high, size=(mdp.n_states, mdp.action_dim)), sigma)


# canonical training sweep: anchors one grid step below the expert so the
# stochastic imitator starts with overlap, and a halving anneal for DE
TRAINING_ANCHOR = 0.5
TRAINING_DECAY = 0.5
TRAINING_ST_SIGMA = 0.3
TRAINING_ITERATIONS = 200
TRAINING_SEEDS = tuple(range(20))


def training_config(mode: str = "DE", credo: bool = False, seeds=TRAINING_SEEDS, **overrides):
    """The 20-seed desk-scale sweep shared by the acceptance suite and the CLI."""
    from gaillab.trainer import CredoConfig, ExperimentConfig, ImitatorInit

    mdp = canonical_mdp()
    kw = dict(
        mode=mode,
        decay=TRAINING_DECAY,
        sigma=TRAINING_ST_SIGMA if mode == "ST" else None,
        credo=CredoConfig() if credo else None,
        iterations=TRAINING_ITERATIONS,
        seeds=tuple(seeds),
    )
    kw.update(overrides)
    init = ImitatorInit(tuple((s, TRAINING_ANCHOR) for s in range(mdp.n_states)))
    return ExperimentConfig(mdp, tuple(expert_indices(mdp)), init, **kw)
