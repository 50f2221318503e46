import math

import numpy as np
import pytest
from scipy import stats

from cccp import ces
from cccp.complex_core import ConstraintRow, MomentTriple, constraint_stats
from cccp import validation as vl


def test_halfwidth():
    assert vl.halfwidth(0.2, 10_000) == pytest.approx(1.96 * 0.004)
    assert vl.halfwidth(0.0, 100) == 0.0


def test_couple_ranks_keeps_marginals_and_adds_dependence():
    rng = np.random.default_rng(0)
    vals = rng.standard_normal((5000, 3))
    out = vl.couple_ranks(vals, 2.0, ces.SeededStream(1))
    for j in range(3):
        np.testing.assert_array_equal(np.sort(out[:, j]), np.sort(vals[:, j]))
    tau = stats.kendalltau(out[:, 0], out[:, 1]).statistic
    assert tau == pytest.approx(0.5, abs=0.03)  # Gumbel: 1 - 1/theta
    ind = vl.couple_ranks(vals, 1.0, ces.SeededStream(1))
    assert abs(stats.kendalltau(ind[:, 0], ind[:, 1]).statistic) < 0.03


def test_oos_matches_analytic_rate():
    a = MomentTriple(np.array([1 - 0.5j, 0.3]), [[1, 0.2], [0.2, 0.5]], [[0.3, 0], [0, 0.1]])
    row = ConstraintRow(a, b_mean=2.0, b_var=0.2)
    z = np.array([0.8 + 0.4j, 1.0])
    s = constraint_stats(row, z)
    expect = stats.norm.sf(-s.mean / s.std)
    rep = vl.oos_violation(z, ces.Gaussian(), [vl.d_moments_of(row)], 40_000, seed=3)
    assert rep.joint_violation_rate == pytest.approx(expect, abs=3 * vl.halfwidth(expect, 40_000))


def test_oos_deterministic_and_theta_only_moves_joint():
    inst = vl.generate_instance(vl.InstanceConfig(n=4, m=3, seed=1))
    z = 0.5 * np.ones(4) * (1 + 1j)
    a = vl.oos_violation(z, ces.Gaussian(), inst.d_moments, 2000, 9)
    b = vl.oos_violation(z, ces.Gaussian(), inst.d_moments, 2000, 9)
    c = vl.oos_violation(z, ces.Gaussian(), inst.d_moments, 2000, 9, theta=3.0)
    np.testing.assert_array_equal(a.per_constraint_rates, b.per_constraint_rates)
    np.testing.assert_array_equal(a.per_constraint_rates, c.per_constraint_rates)
    assert c.joint_violation_rate <= a.joint_violation_rate
    with pytest.raises(ValueError):
        vl.oos_violation(np.ones(3), ces.Gaussian(), inst.d_moments, 10, 0)


def test_support_clipping():
    m = MomentTriple(np.array([1.0, 2.0]), np.eye(2), np.zeros((2, 2)))
    d = vl.sample_rows(ces.Gaussian(), m, 5000, ces.SeededStream(2), support=np.array([0.1, 0.3]))
    assert np.all(np.abs(d - m.mean) <= np.array([0.1, 0.3]) + 1e-12)


def test_instance_generator():
    cfg = vl.InstanceConfig(n=6, m=4, seed=5)
    a, b = vl.generate_instance(cfg), vl.generate_instance(cfg)
    for ra, rb in zip(a.problem.rows, b.problem.rows):
        np.testing.assert_array_equal(ra.a_moments.cov, rb.a_moments.cov)
        assert np.trace(ra.a_moments.cov).real == pytest.approx(6)
        assert np.all(ra.a_moments.mean.real >= 0) and np.all(ra.a_moments.mean.imag <= 0)
    assert a.problem.sign_constraints and a.problem.m == 4
    with pytest.raises(ValueError):
        vl.InstanceConfig(pcov_scale=2)


def test_csv_text():
    text = vl.csv_text([dict(a=1, b=0.1, c=True, d=None)], ["a", "b", "c", "d"], {"seed": 3})
    assert text == "# seed: 3\na,b,c,d\n1,0.1,1,\n"


def test_monotonicity_summary():
    rows = [dict(spec="s", mode="m", p=0.7, objective=-2.0, violation=0.3),
            dict(spec="s", mode="m", p=0.8, objective=-1.0, violation=0.1),
            dict(spec="t", mode="m", p=0.7, objective=-2.0, violation=0.1),
            dict(spec="t", mode="m", p=0.8, objective=-3.0, violation=0.2)]
    out = {r["spec"]: r for r in vl.monotonicity_summary(rows)}
    assert out["s"]["objective_nondecreasing"] and out["s"]["violation_nonincreasing"]
    assert not out["t"]["objective_nondecreasing"] and not out["t"]["violation_nonincreasing"]


def test_experiment_config_checks():
    with pytest.raises(ValueError, match="unknown spec"):
        vl.ExperimentConfig(specs=("nope",))
    with pytest.raises(ValueError):
        vl.ExperimentConfig(scenarios=10)
    assert vl.ExperimentConfig().config_hash == vl.ExperimentConfig().config_hash
    assert vl.ExperimentConfig(seed=1).config_hash != vl.ExperimentConfig().config_hash


def test_small_table_run():
    cfg = vl.ExperimentConfig(n=5, m=3, p_levels=(0.8, 0.95), scenarios=500, joint_tangents=8,
                              specs=("gaussian", "moment_exact", "data_driven"), data_driven_samples=2000)
    rows = vl.run_table_experiment(cfg)
    assert len(rows) == 3 * 2 * 2
    for r in rows:
        if r["status"] == "optimal" and r.get("violation") is not None:
            assert r["within_guarantee"], r
    joint = [r for r in rows if r["mode"] == "joint" and r["status"] == "optimal"]
    assert all(r["bound_objective"] <= r["objective"] + 1e-7 for r in joint)


def test_small_gap_run():
    cfg = vl.ExperimentConfig(n=4, m=3, tangent_counts=(5, 10), gap_descent_rounds=5)
    rows = vl.run_gap_experiment(cfg, p=0.9)
    for r in rows:
        assert r["lower_bound"] <= r["upper_bound"] + 1e-7
        assert r["lower_product"] <= r["lower_bound"] + 1e-12
        assert r["status_lower"] == "optimal"


def test_small_estimation_run():
    cfg = vl.ExperimentConfig(n=4, m=2, sample_sizes=(200, 5000))
    rows = vl.run_estimation_experiment(cfg, p=0.8)
    assert [r["N"] for r in rows] == [200, 5000]
    assert all(r["conservative_ok"] for r in rows)
    assert rows[1]["r1_max"] < rows[0]["r1_max"]
    assert rows[1]["relative_error"] < 0.1
