import numpy as np
import pytest
from hypothesis import given, strategies as st

from cccp.complex_core import (
    ConstraintRow,
    MomentError,
    MomentTriple,
    augmented_covariance,
    complex_from_augmented,
    constraint_stats,
    objective_stats,
    psd_factor,
    stack,
    unstack,
    validate_moment_triple,
)
from helpers import random_psd_complex


def test_augmented_circular_scalar():
    np.testing.assert_allclose(augmented_covariance([[1]], [[0]]), np.diag([0.5, 0.5]))


def test_augmented_purely_real_scalar():
    np.testing.assert_allclose(augmented_covariance([[2]], [[2]]), [[2, 0], [0, 0]])


def test_indefinite_pair_rejected_with_eigenvalue():
    m = MomentTriple(np.zeros(1), np.eye(1), 2 * np.eye(1))
    np.testing.assert_allclose(m.augmented(), [[1.5, 0], [0, -0.5]])
    msg = validate_moment_triple(m)
    assert msg is not None and "indefinite" in msg and "-0.5" in msg


def test_non_hermitian_names_entry():
    cov = np.array([[1, 0.5], [0.1, 1]], dtype=complex)
    with pytest.raises(MomentError, match=r"\(0, 1\)"):
        augmented_covariance(cov, np.zeros((2, 2)))


def test_non_symmetric_pcov_rejected():
    pcov = np.array([[0, 0.2], [0.0, 0]], dtype=complex)
    msg = validate_moment_triple(MomentTriple(np.zeros(2), np.eye(2), pcov))
    assert "pseudo-covariance" in msg


@given(st.integers(1, 5), st.integers(0, 2 ** 32 - 1))
def test_augmented_round_trip(n, seed):
    cov, pcov = random_psd_complex(np.random.default_rng(seed), n)
    K = augmented_covariance(cov, pcov)
    c2, p2 = complex_from_augmented(K)
    np.testing.assert_allclose(c2, cov, atol=1e-12)
    np.testing.assert_allclose(p2, pcov, atol=1e-12)
    assert np.linalg.eigvalsh(K)[0] > 0


@given(st.integers(1, 4), st.integers(0, 2 ** 32 - 1))
def test_quadratic_form_identity(n, seed):
    rng = np.random.default_rng(seed)
    cov, pcov = random_psd_complex(rng, n)
    z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    w = stack(z)
    lhs = w @ augmented_covariance(cov, pcov) @ w
    rhs = (np.vdot(z, cov @ z) + np.vdot(z, pcov @ z.conj())).real / 2
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)


def test_stats_match_monte_carlo():
    rng = np.random.default_rng(0)
    n = 3
    cov, pcov = random_psd_complex(rng, n)
    mean = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    K = augmented_covariance(cov, pcov)
    draws = rng.multivariate_normal(np.concatenate([mean.real, mean.imag]), K, size=200_000)
    a = draws[:, :n] + 1j * draws[:, n:]
    z = np.array([1 - 1j, 0.5j, 2.0])
    row = ConstraintRow(MomentTriple(mean, cov, pcov), b_mean=0.7, b_var=0.0)
    s = constraint_stats(row, z)
    g = (a @ z).real - 0.7
    assert s.mean == pytest.approx(g.mean(), abs=0.02)
    assert s.variance == pytest.approx(g.var(), rel=0.02)
    o = objective_stats(MomentTriple(mean, cov, pcov), z)
    h = (a.conj() @ z).real
    assert o.mean == pytest.approx(h.mean(), abs=0.02)
    assert o.variance == pytest.approx(h.var(), rel=0.02)


def test_d_moments_layout():
    a = MomentTriple(np.array([1 + 1j]), [[2]], [[0.5]])
    d = ConstraintRow(a, b_mean=3.0, b_var=0.25).d_moments()
    np.testing.assert_allclose(d.mean, [1 + 1j, -3])
    np.testing.assert_allclose(d.cov, [[2, 0], [0, 0.25]])
    np.testing.assert_allclose(d.pcov, [[0.5, 0], [0, 0.25]])


def test_affine_moments():
    m = MomentTriple(np.array([1, 1j]), np.eye(2), np.zeros((2, 2)))
    A = np.array([[1, 1j]])
    out = m.affine(A, [2])
    np.testing.assert_allclose(out.mean, [2])  # 1 + i*i + 2
    np.testing.assert_allclose(out.cov, [[2]])


def test_psd_factor_reconstructs():
    rng = np.random.default_rng(3)
    B = rng.standard_normal((4, 2))
    K = B @ B.T
    F = psd_factor(K)
    assert F.shape[0] == 2
    np.testing.assert_allclose(F.T @ F, K, atol=1e-12)


def test_stack_unstack():
    z = np.array([1 + 2j, -3j])
    np.testing.assert_array_equal(unstack(stack(z)), z)


def test_bad_inputs():
    with pytest.raises(ValueError):
        MomentTriple(np.array([]), np.zeros((0, 0)), np.zeros((0, 0)))
    with pytest.raises(ValueError):
        ConstraintRow(MomentTriple.deterministic([1]), b_mean=1.0, b_var=-1)
    with pytest.raises(ValueError, match="dimension"):
        constraint_stats(ConstraintRow(MomentTriple.deterministic([1, 2]), 0.0), [1])
