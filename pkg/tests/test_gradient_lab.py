import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.spatial.distance import jensenshannon

from oracles import PerturbedOccupancies, js_summand, occupancy_jacobian_fd, perturbed_summand

from gaillab.adversary import imperfect_discriminator, optimal_discriminator
from gaillab.errors import InvalidPerturbation, ZeroExpertDensity
from gaillab.fixtures import BOUNDARY_ANCHOR, canonical_expert, canonical_mdp, imitator, random_anchor_policy
from gaillab.gradient_lab import (
    central_difference,
    corollary1_estimator,
    corollary1_from_discriminator,
    corollary1_from_parts,
    expert_weighted_sums,
    explosion_probability,
    js_divergence,
    log_occupancy_gradient,
    norms_increasing_from,
    occupancy_gradient,
    occupancy_of_params,
    relative_error,
    sigma_sweep,
    theorem1_estimator,
    theorem1_from_parts,
)
from gaillab.mdp_core import OccupancyMeasures, PolicyTable, TabularMdp, occupancy_measures, random_mdp
from gaillab.policy import GaussianKernelPolicy, default_sigma_schedule, policy_table_from_gaussian

# JS-gradient norm at pair (0, +1) on the canonical MDP, boundary anchors, sigma = 2^-k
SWEEP_GOLDEN = [
    0.07868489339718071, 0.1605981893875545, 0.39083469362114615, 1.515546768497751,
    6.062185895774594, 24.248743583098378, 96.99497433239351, 387.97989732957404,
    1551.9195893182962, 6207.678357273185, 24830.71342909274,
]


@pytest.fixture(scope="module")
def canon():
    mdp = canonical_mdp()
    return mdp, occupancy_measures(mdp, canonical_expert(mdp))


def full_support_case(seed, sigma=0.4):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(4, 3, rng)
    expert = GaussianKernelPolicy.per_state(rng.uniform(-1, 1, 4), 0.5)
    rho_e = occupancy_measures(mdp, policy_table_from_gaussian(expert, mdp))
    pol = GaussianKernelPolicy.per_state(rng.uniform(-1, 1, 4), sigma)
    return mdp, rho_e, pol


# -------------------------------------------------------- occupancy Jacobian

def test_single_pair_jacobian_is_zero():
    mdp = TabularMdp(1, [[0.0]], np.ones((1, 1, 1)), 0.9, [1.0])
    jac = occupancy_gradient(mdp, GaussianKernelPolicy.per_state([0.3], 0.5))
    np.testing.assert_array_equal(jac.upsilon, 0.0)


def test_jacobian_matches_finite_differences_4x3():
    rng = np.random.default_rng(21)
    mdp = random_mdp(4, 3, rng)
    pol = GaussianKernelPolicy.per_state(rng.uniform(-1, 1, 4), 0.3)
    fd = central_difference(occupancy_of_params(mdp, pol), pol.anchor_actions.ravel(), 1e-5)
    assert relative_error(occupancy_gradient(mdp, pol).upsilon, fd) < 1e-4


def test_rbf_jacobian_matches_finite_differences():
    rng = np.random.default_rng(22)
    mdp = random_mdp(5, 3, rng)
    pol = GaussianKernelPolicy.from_anchors([(0, 0.4), (2, -0.3), (4, 0.9)], 0.6, kernel="rbf", bandwidth=1.5)
    fd = central_difference(occupancy_of_params(mdp, pol), pol.anchor_actions.ravel(), 1e-5)
    jac = occupancy_gradient(mdp, pol)
    assert relative_error(jac.upsilon, fd) < 1e-4
    np.testing.assert_allclose(jac.upsilon.sum(axis=1), 0.0, atol=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(0.05, 2.0))
def test_jacobian_rows_sum_to_zero_and_match_oracle(seed, sigma):
    rng = np.random.default_rng(seed)
    mdp = random_mdp(3, 3, rng)
    means = rng.uniform(-1, 1, 3)
    jac = occupancy_gradient(mdp, GaussianKernelPolicy.per_state(means, sigma))
    np.testing.assert_allclose(jac.upsilon.sum(axis=1), 0.0, atol=1e-8)
    assert relative_error(jac.upsilon, occupancy_jacobian_fd(mdp, means, sigma)) < 1e-4


# ----------------------------------------------------------------------- JS

def literal_js(p, q):
    m = [(a + b) / 2 for a, b in zip(p, q)]
    kl = lambda x, y: sum(a * math.log(a / b) for a, b in zip(x, y) if a > 0)
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def test_js_identical_is_zero():
    p = np.array([0.2, 0.3, 0.5])
    assert js_divergence(p, p) == 0.0


def test_js_disjoint_is_log_two():
    assert js_divergence([0.5, 0.5, 0, 0], [0, 0, 0.3, 0.7]) == pytest.approx(math.log(2), abs=1e-15)


def test_js_two_point_matches_literal_and_scipy():
    p, q = [0.75, 0.25], [0.25, 0.75]
    v = js_divergence(p, q)
    assert v == pytest.approx(literal_js(p, q), abs=1e-15)
    assert v == pytest.approx(jensenshannon(p, q) ** 2, abs=1e-14)


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(2, 12))
def test_js_properties(seed, n):
    rng = np.random.default_rng(seed)
    p, q = rng.dirichlet(np.ones(n)), rng.dirichlet(np.ones(n))
    p[rng.random(n) < 0.3] = 0
    if p.sum() == 0:
        p[0] = 1
    p /= p.sum()
    v = js_divergence(p, q)
    assert 0 <= v <= math.log(2) + 1e-15
    assert v == pytest.approx(js_divergence(q, p), abs=1e-15)
    assert v == pytest.approx(jensenshannon(p, q) ** 2, abs=1e-12)


def test_js_accepts_occupancies(canon):
    mdp, rho_e = canon
    assert js_divergence(rho_e, rho_e) == 0.0


# --------------------------------------------------------------- JS-gradient estimator

def test_theorem1_zero_at_matched_occupancy(canon):
    mdp, _ = canon
    pol = imitator(mdp, 0.5)
    own = occupancy_measures(mdp, policy_table_from_gaussian(pol, mdp))
    for sa in range(mdp.n_pairs):
        rep = theorem1_estimator(mdp, pol, own, sa)
        assert np.all(np.abs(rep.estimator_value) < 1e-12)


def test_theorem1_zero_expert_density(canon):
    mdp, rho_e = canon
    with pytest.raises(ZeroExpertDensity):
        theorem1_estimator(mdp, imitator(mdp, 0.5), rho_e, (0, 0))


def test_theorem1_smaller_sigma_larger_norm(canon):
    mdp, rho_e = canon
    big = theorem1_estimator(mdp, imitator(mdp, 0.5, BOUNDARY_ANCHOR), rho_e, (0, 4))
    small = theorem1_estimator(mdp, imitator(mdp, 0.05, BOUNDARY_ANCHOR), rho_e, (0, 4))
    assert small.norm > big.norm
    assert big.norm == pytest.approx(0.1605981893875545, rel=1e-9)
    assert small.norm == pytest.approx(9.472165462147801, rel=1e-9)


def test_theorem1_far_anchor_underflows_to_non_finite(canon):
    # with anchors at the far end of the grid rho_h(pair) underflows and the
    # log term is -inf: the report flags it instead of returning garbage
    mdp, rho_e = canon
    rep = theorem1_estimator(mdp, imitator(mdp, 0.05, -1.0), rho_e, (0, 4))
    assert not rep.finite and rep.norm == math.inf


@pytest.mark.parametrize("anchor,sigma", [(-1.0, 0.5), (BOUNDARY_ANCHOR, 0.3), (0.0, 1.0)])
def test_theorem1_matches_half_summand_gradient(canon, anchor, sigma):
    mdp, rho_e = canon
    pol = imitator(mdp, sigma, anchor)
    pert = PerturbedOccupancies(mdp, pol.anchor_actions.ravel(), sigma)
    for sa in (4, 14):
        fd = 0.5 * pert.grad(js_summand(sa, rho_e.rho[sa]))
        assert relative_error(theorem1_estimator(mdp, pol, rho_e, sa).estimator_value, fd) < 1e-3


def test_report_fields(canon):
    mdp, rho_e = canon
    rep = theorem1_estimator(mdp, imitator(mdp, 0.5), rho_e, (2, 4))
    assert rep.sample_pair.sa == 14 and rep.sigma == 0.5 and rep.finite
    assert rep.norm == pytest.approx(np.linalg.norm(rep.estimator_value), rel=1e-15)


# --------------------------------------------------------------- perturbed-reward estimator

@pytest.mark.parametrize("seed", range(5))
def test_weighted_identity_full_support(seed):
    mdp, rho_e, pol = full_support_case(seed)
    t1, c1 = expert_weighted_sums(mdp, pol, rho_e)
    np.testing.assert_allclose(c1, 2 * t1, rtol=0, atol=1e-10)


def test_weighted_identity_needs_full_support(canon):
    # the pointwise gap (grad rho / rho_E) log 2 only integrates to zero over
    # every pair; a deterministic expert leaves the gap -log 2 sum_supp grad rho
    mdp, rho_e = canon
    pol = imitator(mdp, 0.5, BOUNDARY_ANCHOR)
    t1, c1 = expert_weighted_sums(mdp, pol, rho_e)
    jac = occupancy_gradient(mdp, pol)
    supp = np.flatnonzero(rho_e.rho > 0)
    np.testing.assert_allclose(c1 - 2 * t1, -math.log(2) * jac.upsilon[:, supp].sum(axis=1), atol=1e-12)


def test_corollary1_zero_gradient_gives_zero():
    for eps in [(0.0, 0.0), (0.3, -0.2), (-2.0, 3.0)]:
        out = corollary1_from_parts(np.zeros(3), 0.2, 0.1, *eps)
        np.testing.assert_array_equal(out, 0.0)


def test_corollary1_errors(canon):
    mdp, rho_e = canon
    pol = imitator(mdp, 0.5)
    with pytest.raises(ZeroExpertDensity):
        corollary1_estimator(mdp, pol, rho_e, 0.0, 0.0, (0, 0))
    with pytest.raises(InvalidPerturbation):
        corollary1_estimator(mdp, pol, rho_e, -1.5, 0.5, (0, 4))
    with pytest.raises(InvalidPerturbation):
        corollary1_estimator(mdp, pol, rho_e, -1.0, 0.0, (0, 4))


@pytest.mark.parametrize("eps", [(0.3, -0.2), (0.5, 0.5), (-0.5, 0.9)])
def test_corollary1_matches_summand_gradient(canon, eps):
    mdp, rho_e = canon
    pol = imitator(mdp, 0.5, BOUNDARY_ANCHOR)
    pert = PerturbedOccupancies(mdp, pol.anchor_actions.ravel(), 0.5)
    for sa in (4, 19):
        fd = pert.grad(perturbed_summand(sa, rho_e.rho[sa], *eps))
        assert relative_error(corollary1_estimator(mdp, pol, rho_e, *eps, sa).estimator_value, fd) < 1e-3


# -------------------------------------------- estimator through discriminator

@pytest.mark.parametrize("seed", range(4))
def test_discriminator_form_matches_perturbed_parts(seed):
    mdp, rho_e, pol = full_support_case(seed, sigma=0.6)
    jac = occupancy_gradient(mdp, pol)
    rho_h = jac.occupancy
    for eps in [(0.0, 0.0), (0.3, -0.2), (-0.5, 0.9)]:
        D = imperfect_discriminator(rho_e, rho_h, *eps)
        for sa in (0, 5, 11):
            want = corollary1_from_parts(jac.column(sa), rho_h.rho[sa], rho_e.rho[sa], *eps)
            got = corollary1_from_discriminator(jac.column(sa), log_occupancy_gradient(mdp, pol, jac, sa),
                                                rho_e.rho[sa], D.values[sa])
            np.testing.assert_allclose(got, want, rtol=1e-9, atol=1e-12)


def test_log_occupancy_gradient_is_column_over_rho(canon):
    mdp, _ = canon
    pol = imitator(mdp, 0.4, 0.2)
    jac = occupancy_gradient(mdp, pol)
    for sa in (0, 7, 24):
        np.testing.assert_allclose(log_occupancy_gradient(mdp, pol, jac, sa),
                                   jac.column(sa) / jac.occupancy.rho[sa], rtol=1e-10)


def test_log_occupancy_gradient_finite_where_rho_underflows(canon):
    mdp, rho_e = canon
    pol = imitator(mdp, 0.02, -1.0)
    jac = occupancy_gradient(mdp, pol)
    assert jac.occupancy.rho[4] == 0.0
    assert np.all(np.isfinite(log_occupancy_gradient(mdp, pol, jac, 4)))


def test_discriminator_form_at_optimum_is_eps_zero(canon):
    mdp, rho_e = canon
    pol = imitator(mdp, 0.5, BOUNDARY_ANCHOR)
    jac = occupancy_gradient(mdp, pol)
    D = optimal_discriminator(rho_e, jac.occupancy)
    got = corollary1_from_discriminator(jac.column(4), log_occupancy_gradient(mdp, pol, jac, 4),
                                        rho_e.rho[4], D.values[4])
    want = corollary1_estimator(mdp, pol, rho_e, 0.0, 0.0, 4, jac=jac).estimator_value
    np.testing.assert_allclose(got, want, rtol=1e-10)


def test_discriminator_form_rejects_endpoints():
    with pytest.raises(InvalidPerturbation):
        corollary1_from_discriminator(np.ones(2), np.ones(2), 0.1, 1.0)
    with pytest.raises(ZeroExpertDensity):
        corollary1_from_discriminator(np.ones(2), np.ones(2), 0.0, 0.5)


# -------------------------------------------------------------- sigma sweep

def test_sweep_golden_curve(canon):
    mdp, rho_e = canon
    rows = sigma_sweep(mdp, rho_e, imitator(mdp, 1.0, BOUNDARY_ANCHOR), default_sigma_schedule(), (0, 4))
    np.testing.assert_allclose([r.grad_norm for r in rows], SWEEP_GOLDEN, rtol=1e-9)
    assert norms_increasing_from(rows, 2)
    assert rows[-1].grad_norm > 1e3 * rows[0].grad_norm
    assert [r.sigma for r in rows] == default_sigma_schedule()
    assert rows[-1].disparity_ratio == pytest.approx(0.25 / 2.0**-20, rel=1e-12)
    assert not any(r.exploded for r in rows)


def test_sweep_matched_anchors_bounded(canon):
    mdp, rho_e = canon
    rows = sigma_sweep(mdp, rho_e, imitator(mdp, 1.0, 1.0), default_sigma_schedule(), (0, 4))
    assert all(r.disparity_ratio == 0.0 for r in rows)
    assert max(r.grad_norm for r in rows) < 10 * SWEEP_GOLDEN[0]


def test_sweep_flags_non_finite_as_exploded(canon):
    mdp, rho_e = canon
    rows = sigma_sweep(mdp, rho_e, imitator(mdp, 1.0, -1.0), default_sigma_schedule(), (0, 4))
    assert rows[-1].exploded and not rows[0].exploded


def test_sweep_threshold_flag(canon):
    mdp, rho_e = canon
    rows = sigma_sweep(mdp, rho_e, imitator(mdp, 1.0, BOUNDARY_ANCHOR), default_sigma_schedule(), (0, 4),
                       explosion_threshold=100.0)
    assert [r.exploded for r in rows] == [n > 100.0 for n in SWEEP_GOLDEN]


def test_sweep_requires_decreasing_schedule(canon):
    mdp, rho_e = canon
    with pytest.raises(ValueError):
        sigma_sweep(mdp, rho_e, imitator(mdp, 1.0), [0.5, 0.5, 0.1], (0, 4))


def st_bound(seed, n=100, sigma=0.3):
    mdp = canonical_mdp()
    rho_e = occupancy_measures(mdp, canonical_expert(mdp))
    rng = np.random.default_rng(seed)
    best = 0.0
    for _ in range(n):
        pol = random_anchor_policy(mdp, sigma, rng)
        jac = occupancy_gradient(mdp, pol)
        for sa in np.flatnonzero(rho_e.rho > 0):
            best = max(best, theorem1_estimator(mdp, pol, rho_e, sa, jac=jac).norm)
    return best


def test_bounded_stochastic_regime_is_reproducible():
    a, b = st_bound(3), st_bound(3)
    assert math.isfinite(a) and a < 1e8
    assert abs(a - b) <= 1e-9 * a


# --------------------------------------------------------- explosion probes

def test_explosion_identical_policies():
    mdp = canonical_mdp()
    pol = imitator(mdp, 0.1, 1.0)
    ep = explosion_probability(pol, canonical_expert(mdp), mdp, 1.0, 500, np.random.default_rng(0))
    assert ep.score_event == 0.0 and ep.disparity_event == 0.0 and ep.compatible


def test_explosion_distance_one():
    mdp = canonical_mdp()
    pol = imitator(mdp, 0.1, 0.0)
    hit = explosion_probability(pol, canonical_expert(mdp), mdp, 50.0, 500, np.random.default_rng(0))
    miss = explosion_probability(pol, canonical_expert(mdp), mdp, 200.0, 500, np.random.default_rng(0))
    assert hit.score_event == 1.0 and hit.disparity_event == 1.0
    assert miss.score_event == 0.0 and miss.disparity_event == 0.0


def test_explosion_with_noise_is_compatible():
    mdp = canonical_mdp()
    pol = imitator(mdp, 0.3, 0.5)
    ep = explosion_probability(pol, canonical_expert(mdp), mdp, 5.0, 2000, np.random.default_rng(1),
                               exploration_noise=0.1)
    assert 0 < ep.score_event < 1 and ep.compatible and ep.half_width > 0


def test_explosion_argument_checks():
    mdp = canonical_mdp()
    with pytest.raises(ValueError):
        explosion_probability(imitator(mdp, 0.3), canonical_expert(mdp), mdp, 0.0, 10, np.random.default_rng(0))
    with pytest.raises(ValueError):
        explosion_probability(imitator(mdp, 0.3), canonical_expert(mdp), mdp, 1.0, 0, np.random.default_rng(0))


def test_theorem1_from_parts_log_two_gap():
    g = np.array([1.0, -2.0])
    t1 = theorem1_from_parts(g, 0.2, 0.1)
    c1 = corollary1_from_parts(g, 0.2, 0.1, 0.0, 0.0)
    np.testing.assert_allclose(c1 - 2 * t1, -g / 0.1 * math.log(2), rtol=1e-14)
