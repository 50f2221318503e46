import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from cccp import ces
from cccp import beamforming as bf


@pytest.fixture(scope="module")
def setup():
    model = bf.ArrayModel()
    return model, bf.interference_noise_cov(model), bf.ula_steering(model, model.signal_doa)


def test_steering_entries():
    a = bf.ula_steering(bf.ArrayModel(), 3.0)
    assert a[0] == 1
    assert a[1] == pytest.approx(np.exp(1j * math.pi * math.sin(math.radians(3.0))), abs=1e-15)
    np.testing.assert_allclose(np.abs(a), 1.0)


def test_identity_covariance_gives_matched_filter():
    a = bf.ula_steering(bf.ArrayModel(), 10.0)
    np.testing.assert_allclose(bf.mvdr_closed_form(np.eye(8), a).w, a / 8, atol=1e-15)


def test_interference_cov(setup):
    model, R, a = setup
    assert np.allclose(R, R.conj().T)
    assert np.linalg.eigvalsh(R)[0] == pytest.approx(1.0, rel=1e-9)
    a15 = bf.ula_steering(model, 15.0)
    assert np.vdot(a15, R @ a15).real == pytest.approx(8 + 10 ** 1.5 * 64 + 10 ** 1.5 * abs(np.vdot(a15, bf.ula_steering(model, 30.0))) ** 2)


def test_closed_form_is_distortionless_and_optimal(setup):
    _, R, a = setup
    res = bf.mvdr_closed_form(R, a)
    assert np.vdot(a, res.w) == pytest.approx(1.0)
    w_other = res.w + 0.01 * (np.eye(8)[:, 1] - np.vdot(a, np.eye(8)[:, 1]) * a / 8)
    assert np.vdot(a, w_other) == pytest.approx(1.0)
    assert np.vdot(w_other, R @ w_other).real > res.objective


def test_singular_covariance_raises():
    with pytest.raises(np.linalg.LinAlgError, match="singular"):
        bf.mvdr_closed_form(np.zeros((2, 2)), np.ones(2))


def test_nominal_socp_matches_closed_form(setup):
    _, R, a = setup
    np.testing.assert_allclose(bf.nominal_mvdr(R, a).w, bf.mvdr_closed_form(R, a).w, atol=1e-8)


@given(st.integers(0, 2 ** 32 - 1))
def test_std_identity_for_circular_mismatch(seed):
    rng = np.random.default_rng(seed)
    w = rng.standard_normal(8) + 1j * rng.standard_normal(8)
    a = bf.ula_steering(bf.ArrayModel(), 3.0)
    mm = bf.MismatchModel(bf.circular_mismatch(8, 2.0), "gaussian")
    k = mm.factor(0.7)
    expect = k * math.sqrt(2.0 / 8) * np.linalg.norm(w) / math.sqrt(2) - (np.vdot(a, w).real - 1)
    assert bf.robust_constraint_lhs(w, a, mm, 0.7) == pytest.approx(expect, rel=1e-10, abs=1e-10)


def test_robust_solution_active_and_calibrated(setup):
    model, R, a = setup
    truth = bf.circular_mismatch(8, 1.0)
    res = bf.robust_mvdr(R, a, bf.MismatchModel(truth, "gaussian"), 0.7)
    assert res.ok and res.imag_residual < 1e-8
    assert bf.robust_constraint_lhs(res.w, a, bf.MismatchModel(truth), 0.7) == pytest.approx(0.0, abs=1e-7)
    d = ces.sample_complex(ces.Gaussian(), truth, 200_000, np.random.default_rng(4))
    hit = np.mean(((a + d).conj() @ res.w).real >= 1.0)
    assert hit == pytest.approx(0.7, abs=0.005)


def test_more_conservative_modes_cost_power(setup):
    _, R, a = setup
    truth = bf.circular_mismatch(8, 1.0)
    g = bf.robust_mvdr(R, a, bf.MismatchModel(truth, "gaussian"), 0.7)
    m = bf.robust_mvdr(R, a, bf.MismatchModel(truth, "moment_exact"), 0.7)
    n = bf.nominal_mvdr(R, a)
    assert n.objective < g.objective < m.objective


def test_estimated_mismatch_converges():
    truth = bf.circular_mismatch(8, 1.0)
    small = bf.estimated_mismatch(ces.sample_complex(ces.Gaussian(), truth, 1000, np.random.default_rng(0)), 0.05)
    big = bf.estimated_mismatch(ces.sample_complex(ces.Gaussian(), truth, 100_000, np.random.default_rng(0)), 0.05)
    assert big.r1 < small.r1 and big.r2 < small.r2
    assert np.abs(big.moments.cov - truth.cov).max() < 0.01


def test_mismatch_model_checks():
    truth = bf.circular_mismatch(4)
    with pytest.raises(ValueError):
        bf.MismatchModel(truth, "nope")
    with pytest.raises(ValueError, match="data-driven"):
        bf.MismatchModel(truth, "gaussian", r1=0.1)
    with pytest.raises(ValueError):
        bf.robust_socp(np.eye(3), np.ones(4), bf.MismatchModel(truth), 0.7)
    with pytest.raises(ValueError):
        bf.ArrayModel(interferer_doas=(10.0,), interferer_inrs=(1.0, 2.0))


def test_snapshot_cov_converges():
    model = bf.ArrayModel()
    a = bf.ula_steering(model, 3.0)
    R = bf.snapshot_cov(model, a, 2.0, 200_000, np.random.default_rng(1))
    expect = bf.interference_noise_cov(model) + 2.0 * np.outer(a, a.conj())
    assert np.abs(R - expect).max() / np.abs(expect).max() < 0.02


def test_small_sweep_deterministic():
    cfg = bf.SweepConfig(snr_db=(0.0, 10.0), trials=3, estimation_samples=(500,), seed=1)
    a, b = bf.snr_sweep(cfg), bf.snr_sweep(cfg)
    assert a == b
    opt = bf.curve(a, "optimal")
    for name in ("mvdr_mismatched", "gaussian", "moment_exact"):
        c = bf.curve(a, name)
        assert np.all(c <= opt + 1e-9)
        assert c[1] - c[0] == pytest.approx(10.0)  # analytic R: design independent of SNR
    assert bf.curve(a, "data_driven", 500).size == 2


def test_sweep_with_snapshots_runs():
    cfg = bf.SweepConfig(snr_db=(0.0,), trials=2, modes=("gaussian",), snapshots=50, seed=2)
    rows = bf.snr_sweep(cfg)
    assert {r["covariance"] for r in rows} == {"snapshots_50"}
    assert all(r["trials_ok"] == 2 for r in rows)
