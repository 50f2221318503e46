"""Shared builders for tests (not fixtures, so they can take arguments)."""

import numpy as np

from cccp.complex_core import ConstraintRow, MomentTriple
from cccp.reform import Problem3CP


def random_psd_complex(rng, n, scale=1.0):
    """Random ``(cov, pcov)`` with a positive definite augmented covariance."""
    B = rng.standard_normal((2 * n, 2 * n))
    K = scale * (B @ B.T / (2 * n) + 0.1 * np.eye(2 * n))
    Krr, Kri, Kir, Kii = K[:n, :n], K[:n, n:], K[n:, :n], K[n:, n:]
    cov = Krr + Kii + 1j * (Kir - Kri)
    pcov = Krr - Kii + 1j * (Kir + Kri)
    return cov, pcov


def small_problem(rng, n=2, m=2, level=0.9, sign=True):
    """Bounded random instance: objective pushes z up, rows cap it."""
    rows = []
    for _ in range(m):
        mean = rng.uniform(0.5, 1.5, n) - 1j * rng.uniform(0.2, 0.8, n)
        cov, pcov = random_psd_complex(rng, n, 0.05)
        rows.append(ConstraintRow(MomentTriple(mean, cov, pcov), b_mean=float(rng.uniform(2, 4)), b_var=0.01))
    c = -rng.uniform(0.5, 1.5, n) - 1j * rng.uniform(0.1, 0.4, n)
    return Problem3CP(n, c, rows, np.full(m, level), sign_constraints=sign)
