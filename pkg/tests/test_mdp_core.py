import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gaillab.errors import DimensionMismatch, InvalidMdp, InvalidPolicy
from gaillab.mdp_core import (
    IndexedPair,
    PolicyTable,
    TabularMdp,
    expand_policy_matrix,
    marginalization_matrix,
    occupancy_measures,
    occupancy_oracle_rollout,
    random_mdp,
    random_policy,
    resolvent,
)


def naive_pi(probs):
    S, A = probs.shape
    out = np.zeros((S, S * A))
    for s in range(S):
        for a in range(A):
            out[s, s * A + a] = probs[s, a]
    return out


def loop_occupancy(mdp, probs, tol=1e-15):
    """Fixed-point iteration of rho = (1-g) rho0 + g M rho, built with plain loops."""
    S, A = probs.shape
    rho0 = np.array([mdp.mu0[s] * probs[s, a] for s in range(S) for a in range(A)])
    M = np.zeros((S * A, S * A))
    for s in range(S):
        for a in range(A):
            for t in range(S):
                for b in range(A):
                    M[t * A + b, s * A + a] = mdp.transition[s, a, t] * probs[t, b]
    rho = rho0.copy()
    for _ in range(5000):
        new = (1 - mdp.gamma) * rho0 + mdp.gamma * M @ rho
        if np.max(np.abs(new - rho)) < tol:
            return new
        rho = new
    return rho


def chain_mdp(gamma=0.5):
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 1] = 1.0
    return TabularMdp(2, [[0.0]], P, gamma, [1.0, 0.0])


# ----------------------------------------------------------------- Pi and T

def test_pi_single_block():
    Pi = expand_policy_matrix(PolicyTable([[0.5, 0.5]]))
    np.testing.assert_array_equal(Pi, [[0.5, 0.5]])


def test_pi_uniform_two_states():
    Pi = expand_policy_matrix(PolicyTable.uniform(2, 2))
    np.testing.assert_array_equal(Pi, [[.5, .5, 0, 0], [0, 0, .5, .5]])


def test_pi_random_matches_double_loop():
    pol = random_policy(3, 4, np.random.default_rng(1))
    Pi = expand_policy_matrix(pol)
    np.testing.assert_array_equal(Pi, naive_pi(pol.probs))
    np.testing.assert_allclose(Pi.sum(axis=1), 1.0, atol=1e-12)
    assert np.count_nonzero(Pi) <= 12


def test_pi_reproduces_rows_through_t():
    pol = random_policy(3, 2, np.random.default_rng(2))
    Pi = expand_policy_matrix(pol)
    T = marginalization_matrix(3, 2)
    np.testing.assert_allclose(Pi @ T.T, np.eye(3), atol=1e-15)
    for s in range(3):
        e = np.eye(3)[s]
        np.testing.assert_array_equal((e @ Pi)[T[s] == 1], pol.probs[s])


def test_marginalization_examples():
    np.testing.assert_array_equal(marginalization_matrix(1, 3), [[1, 1, 1]])
    np.testing.assert_array_equal(marginalization_matrix(2, 2), [[1, 1, 0, 0], [0, 0, 1, 1]])
    T = marginalization_matrix(4, 5)
    np.testing.assert_array_equal(T @ T.T, 5 * np.eye(4))


def test_marginalization_rejects_empty():
    with pytest.raises(DimensionMismatch):
        marginalization_matrix(0, 2)


# ---------------------------------------------------------------- occupancy

def test_single_pair_occupancy_is_one():
    for g in (0.0, 0.5, 0.99):
        mdp = TabularMdp(1, [[0.0]], np.ones((1, 1, 1)), g, [1.0])
        occ = occupancy_measures(mdp, PolicyTable([[1.0]]))
        np.testing.assert_allclose(occ.rho, [1.0], atol=1e-15)


def test_two_state_chain():
    mdp = chain_mdp(0.5)
    occ = occupancy_measures(mdp, PolicyTable([[1.0], [1.0]]))
    np.testing.assert_allclose(occ.rho, [0.5, 0.5], atol=1e-15)
    oracle = occupancy_oracle_rollout(mdp, PolicyTable([[1.0], [1.0]]), 60)
    np.testing.assert_allclose(oracle.rho, occ.rho, atol=0.5**60 + 1e-12)


def test_random_mdp_matches_rollout():
    rng = np.random.default_rng(3)
    mdp = random_mdp(5, 4, rng)
    pol = random_policy(5, 4, rng)
    H = int(np.ceil(np.log(1e-12) / np.log(mdp.gamma)))
    occ = occupancy_measures(mdp, pol)
    oracle = occupancy_oracle_rollout(mdp, pol, H)
    assert np.max(np.abs(occ.rho - oracle.rho)) < 1e-8


def test_solver_matches_loop_fixed_point():
    rng = np.random.default_rng(4)
    mdp = random_mdp(3, 2, rng, gamma=0.7)
    pol = random_policy(3, 2, rng)
    np.testing.assert_allclose(occupancy_measures(mdp, pol).rho, loop_occupancy(mdp, pol.probs), atol=1e-12)


def test_horizon_zero_is_initial_mass():
    rng = np.random.default_rng(5)
    mdp = random_mdp(4, 3, rng)
    pol = random_policy(4, 3, rng)
    rho0 = (mdp.mu0[:, None] * pol.probs).ravel()
    np.testing.assert_allclose(occupancy_oracle_rollout(mdp, pol, 0).rho, (1 - mdp.gamma) * rho0, atol=0)


def test_gamma_zero_oracle_is_exact():
    rng = np.random.default_rng(6)
    mdp = random_mdp(4, 3, rng, gamma=0.0)
    pol = random_policy(4, 3, rng)
    rho0 = (mdp.mu0[:, None] * pol.probs).ravel()
    for H in (0, 1, 7):
        np.testing.assert_array_equal(occupancy_oracle_rollout(mdp, pol, H).rho, rho0)
    np.testing.assert_allclose(occupancy_measures(mdp, pol).rho, rho0, atol=1e-15)


def test_resolvent_shape():
    rng = np.random.default_rng(7)
    mdp = random_mdp(3, 2, rng)
    assert resolvent(mdp, random_policy(3, 2, rng)).shape == (6, 6)


# ----------------------------------------------------------------- validation

def test_mdp_rejects_gamma_one():
    with pytest.raises(InvalidMdp):
        TabularMdp(1, [[0.0]], np.ones((1, 1, 1)), 1.0, [1.0])


def test_mdp_rejects_bad_rows():
    with pytest.raises(InvalidMdp):
        TabularMdp(1, [[0.0]], np.full((1, 1, 1), 0.9), 0.5, [1.0])
    with pytest.raises(InvalidMdp):
        TabularMdp(1, [[0.0]], np.ones((1, 1, 1)), 0.5, [0.5])


def test_mdp_rejects_duplicate_grid():
    with pytest.raises(InvalidMdp):
        TabularMdp(1, [[0.0], [0.0]], np.ones((1, 2, 1)), 0.5, [1.0])


def test_mdp_rejects_shape_mismatch():
    with pytest.raises(DimensionMismatch):
        TabularMdp(2, [[0.0]], np.ones((1, 1, 1)), 0.5, [1.0, 0.0])


def test_policy_shape_mismatch():
    mdp = chain_mdp()
    with pytest.raises(DimensionMismatch):
        occupancy_measures(mdp, PolicyTable([[1.0]]))


def test_policy_rows_validated():
    with pytest.raises(InvalidPolicy):
        PolicyTable([[0.6, 0.6]])


def test_indexed_pair_flattening():
    for sa in range(12):
        p = IndexedPair.from_flat(sa, 4)
        assert p.sa == sa and p.s == sa // 4 and p.a == sa % 4
    with pytest.raises(IndexError):
        IndexedPair(0, 4, 4)


def test_mdp_json_round_trip():
    mdp = random_mdp(3, 2, np.random.default_rng(8))
    back = TabularMdp.from_dict(mdp.to_dict())
    np.testing.assert_array_equal(back.transition, mdp.transition)
    assert back.fingerprint() == mdp.fingerprint()


# ---------------------------------------------------------------- properties

mdp_cases = st.tuples(
    st.integers(1, 5), st.integers(1, 4), st.floats(0.0, 0.95), st.integers(0, 2**31 - 1)
)


@settings(max_examples=60, deadline=None)
@given(mdp_cases)
def test_occupancy_is_a_distribution(case):
    S, A, gamma, seed = case
    rng = np.random.default_rng(seed)
    mdp = random_mdp(S, A, rng, gamma=gamma)
    occ = occupancy_measures(mdp, random_policy(S, A, rng))
    assert abs(occ.rho.sum() - 1) < 1e-10
    assert np.all(occ.rho >= 0)
    np.testing.assert_allclose(occ.d, marginalization_matrix(S, A) @ occ.rho, atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(mdp_cases, st.integers(0, 80))
def test_solver_oracle_gap_bounded_by_tail(case, H):
    S, A, gamma, seed = case
    rng = np.random.default_rng(seed)
    mdp = random_mdp(S, A, rng, gamma=gamma)
    pol = random_policy(S, A, rng)
    gap = np.max(np.abs(occupancy_measures(mdp, pol).rho - occupancy_oracle_rollout(mdp, pol, H).rho))
    assert gap <= gamma ** (H + 1) + 1e-10


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 6))
def test_t_gram_is_scaled_identity(S, A):
    T = marginalization_matrix(S, A)
    np.testing.assert_array_equal(T @ T.T, A * np.eye(S))
