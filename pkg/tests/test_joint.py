import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from cccp import ces
from cccp.joint import (
    JointApproxConfig,
    KCase,
    Mode,
    certify_joint,
    decompose_joint,
    descend_weights,
    geometric_points,
    grid_oracle,
    gumbel_copula,
    interp_overestimator,
    kp_y,
    kp_y_prime,
    level_of_k,
    minimal_weights,
    positive_stable,
    reciprocal_is_concave,
    sample_gumbel,
    solve_at_weights,
    solve_joint,
    tangent_underestimator,
)
from cccp.reform import MomentExact, Problem3CP, solve_individual
from helpers import small_problem

CASES = [KCase("ces", ces.Gaussian()), KCase("ces", ces.StudentT(4)), KCase("ces", ces.Laplace()),
         KCase("ces", ces.Logistic()), KCase("moment"), KCase("symmetric"), KCase("norm")]


def test_copula_values():
    # exp(-sqrt(ln^2 0.9 + ln^2 0.8)), evaluated at 30 digits
    assert gumbel_copula([0.9, 0.8], 2.0) == pytest.approx(0.7813228306023609, abs=1e-15)
    np.testing.assert_allclose(decompose_joint(0.9, np.full(3, 1 / 3), 2.0), 0.94098, atol=5e-6)
    assert gumbel_copula([0.3, 0.5, 0.9], 1.0) == 0.3 * 0.5 * 0.9


def test_copula_input_checks():
    with pytest.raises(ValueError):
        gumbel_copula([0.5], 0.9)
    with pytest.raises(ValueError):
        gumbel_copula([0.0, 0.5], 2)
    with pytest.raises(ValueError):
        decompose_joint(0.9, [0.5, 0.6], 2)


@given(st.integers(1, 8), st.floats(1.0, 6.0), st.floats(0.5, 0.999), st.integers(0, 2 ** 32 - 1))
def test_recomposition_property(m, theta, p, seed):
    y = np.random.default_rng(seed).dirichlet(np.ones(m))
    y = np.maximum(y, 1e-9)
    y /= y.sum()
    assert gumbel_copula(decompose_joint(p, y, theta), theta) == pytest.approx(p, abs=1e-12)


def test_kp_value():
    assert kp_y(KCase("ces"), 0.9, 2.0, 0.25) == pytest.approx(1.6322, abs=5e-5)


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.kind + getattr(c.family, "name", ""))
def test_kp_convex_decreasing(case):
    y = np.linspace(0.01, 1, 400)
    k = kp_y(case, 0.9, 2.0, y)
    assert np.all(np.diff(k) < 0)
    assert np.all(np.diff(k, 2) > -1e-10)


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.kind + getattr(c.family, "name", ""))
def test_pieces_sandwich(case):
    pts = geometric_points(10)
    lo = tangent_underestimator(case, 0.9, 2.0, pts)
    hi = interp_overestimator(case, 0.9, 2.0, pts)
    y = np.linspace(pts[0], 1, 500)
    k = kp_y(case, 0.9, 2.0, y)
    assert np.all(lo(y) <= k + 1e-10)
    assert np.all(hi(y) >= k - 1e-10)
    np.testing.assert_allclose(lo(pts), kp_y(case, 0.9, 2.0, pts), rtol=1e-12)
    assert len(lo) == 10 and len(hi) == 9


def test_geometric_points_nested():
    a, b = geometric_points(5), geometric_points(10)
    assert a[-1] == 1.0 and b[0] == pytest.approx(1e-3 ** 0.9)
    assert all(np.isclose(b, v).any() for v in a)


@pytest.mark.parametrize("case", CASES, ids=lambda c: c.kind + getattr(c.family, "name", ""))
def test_level_of_k_inverts(case):
    for q in (0.6, 0.9, 0.99):
        xi = kp_y(case, q, 1.0, 1.0)
        assert level_of_k(case, xi) == pytest.approx(q, abs=1e-10)


def test_range_checks():
    with pytest.raises(ValueError):
        kp_y(KCase("ces"), 0.4, 2.0, 0.5)
    with pytest.raises(ValueError):
        kp_y(KCase("moment"), 0.9, 2.0, 0.0)
    kp_y(KCase("moment"), 0.2, 2.0, 0.5)
    with pytest.raises(ValueError):
        JointApproxConfig(mode=Mode.UPPER, lifting="reciprocal")


def test_positive_stable_laplace_transform():
    rng = np.random.default_rng(0)
    v = positive_stable(0.5, 400_000, rng)
    for s in (0.5, 1.0, 2.0):
        assert np.exp(-s * v).mean() == pytest.approx(math.exp(-s ** 0.5), abs=4e-3)


def test_sample_gumbel_joint_cdf():
    rng = np.random.default_rng(1)
    u = sample_gumbel(200_000, 3, 2.0, rng)
    for j in range(3):
        assert stats.kstest(u[:, j], "uniform").pvalue > 1e-3
    for pt in ([0.9, 0.8, 0.7], [0.5, 0.95, 0.99]):
        emp = np.mean(np.all(u <= np.array(pt), axis=1))
        assert emp == pytest.approx(gumbel_copula(pt, 2.0), abs=5e-3)
    ind = sample_gumbel(10, 2, 1.0, rng)
    assert ind.shape == (10, 2)


def test_reciprocal_concavity_check():
    assert reciprocal_is_concave(KCase("moment"), 0.95, 2.0)
    assert not reciprocal_is_concave(KCase("moment"), 0.05, 2.0)
    assert not reciprocal_is_concave(KCase("ces"), 0.7, 2.0)
    assert reciprocal_is_concave(KCase("ces"), 0.95, 2.0)


def _grid_problem():
    return small_problem(np.random.default_rng(21), n=2, m=2, level=0.9)


def test_lower_bound_below_oracle_below_upper():
    prob = _grid_problem()
    p, theta = 0.9, 2.0
    oracle, y_star, z_star = grid_oracle(prob, MomentExact(), p, theta, points=200)
    ok, _ = certify_joint(prob, MomentExact(), p, theta, z_star)
    assert ok
    for lifting in ("product", "reciprocal"):
        lb = solve_joint(prob, MomentExact(), p, JointApproxConfig.geometric(20, theta, lifting=lifting))
        assert lb.ok and lb.lower_bound <= oracle + 1e-7
    ub = solve_joint(prob, MomentExact(), p, JointApproxConfig.geometric(20, theta, Mode.UPPER))
    assert ub.ok and ub.upper_bound >= oracle - 1e-7


def test_reciprocal_exact_for_single_row():
    prob = small_problem(np.random.default_rng(3), n=3, m=1, level=0.95)
    lb = solve_joint(prob, MomentExact(), 0.95, JointApproxConfig.geometric(10, 2.0, lifting="reciprocal"))
    ref = solve_individual(prob, MomentExact())
    assert lb.objective == pytest.approx(ref.objective, rel=1e-6)


def test_upper_points_are_joint_feasible():
    prob = small_problem(np.random.default_rng(4), n=3, m=3, level=0.9)
    r = solve_joint(prob, MomentExact(), 0.9, JointApproxConfig.geometric(10, 2.0, Mode.UPPER))
    assert r.ok
    ok, ymin = certify_joint(prob, MomentExact(), 0.9, 2.0, r.feasible_z)
    assert ok and ymin.sum() <= 1 + 1e-7
    if r.certified:
        assert r.upper_bound <= r.feasible_objective


def test_descent_monotone():
    prob = small_problem(np.random.default_rng(5), n=2, m=3, level=0.9)
    y0 = np.array([0.8, 0.1, 0.1])
    start = solve_at_weights(prob, MomentExact(), 0.9, 2.0, y0)
    best, y = descend_weights(prob, MomentExact(), 0.9, 2.0, y0, max_rounds=20)
    assert best.objective <= start.objective + 1e-12
    assert y.sum() == pytest.approx(1.0)


def test_minimal_weights_certify_level():
    prob = small_problem(np.random.default_rng(6), n=2, m=2, level=0.9)
    r = solve_at_weights(prob, MomentExact(), 0.9, 2.0, [0.5, 0.5])
    ymin = minimal_weights(prob, MomentExact(), 0.9, 2.0, r.z)
    assert np.all(ymin <= 0.5 + 1e-6)
    # at least one row is active, so its minimal weight is the one used
    assert np.isclose(ymin, 0.5, atol=1e-5).any()


def test_theta_one_joint_is_product_of_levels():
    levels = decompose_joint(0.9, [0.25, 0.75], 1.0)
    assert np.prod(levels) == pytest.approx(0.9, abs=1e-15)


def test_joint_rejects_bad_theta():
    with pytest.raises(ValueError):
        JointApproxConfig(theta=0.5)
    with pytest.raises(ValueError):
        Problem3CP(1, [1], [], [0.9, 0.9])
