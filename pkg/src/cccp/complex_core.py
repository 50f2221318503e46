"""Complex moment algebra.

A complex random vector ``d`` is summarised by its mean, its covariance
``E[(d-mu)(d-mu)^H]`` and its pseudo-covariance ``E[(d-mu)(d-mu)^T]``.  All
second-order statistics of real affine functions of ``d`` are quadratic forms
in the covariance of the real stacking ``[Re d; Im d]``, which is what
:func:`augmented_covariance` returns.

Stacking convention: a complex decision vector ``z`` is always handed around
as the real vector ``[Re z; Im z]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HERMITIAN_RTOL = 1e-10
PSD_RTOL = 1e-9


class MomentError(ValueError):
    """Malformed moment data (non-Hermitian covariance, indefinite augmented matrix...)."""


def as_complex_vector(z) -> np.ndarray:
    z = np.asarray(z, dtype=complex).reshape(-1)
    if z.size == 0:
        raise ValueError("complex vector must be non-empty")
    if not np.all(np.isfinite(z)):
        raise ValueError("complex vector has non-finite entries")
    return z


def stack(z) -> np.ndarray:
    """``[Re z; Im z]``."""
    z = np.asarray(z, dtype=complex)
    return np.concatenate([z.real, z.imag])


def unstack(w) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    n = w.size // 2
    return w[:n] + 1j * w[n:]


@dataclass(frozen=True)
class MomentTriple:
    """Mean, covariance and pseudo-covariance of a complex random vector."""

    mean: np.ndarray
    cov: np.ndarray
    pcov: np.ndarray

    def __post_init__(self):
        mean = as_complex_vector(self.mean)
        n = mean.size
        cov = np.asarray(self.cov, dtype=complex).reshape(n, n)
        pcov = np.asarray(self.pcov, dtype=complex).reshape(n, n)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "pcov", pcov)

    @property
    def n(self) -> int:
        return self.mean.size

    @classmethod
    def deterministic(cls, mean) -> "MomentTriple":
        mean = as_complex_vector(mean)
        n = mean.size
        return cls(mean, np.zeros((n, n)), np.zeros((n, n)))

    def augmented(self) -> np.ndarray:
        return augmented_covariance(self.cov, self.pcov)

    def affine(self, A, b=None) -> "MomentTriple":
        """Moments of ``A d + b``."""
        A = np.atleast_2d(np.asarray(A, dtype=complex))
        mean = A @ self.mean
        if b is not None:
            mean = mean + np.asarray(b, dtype=complex)
        return MomentTriple(mean, A @ self.cov @ A.conj().T, A @ self.pcov @ A.T)


@dataclass(frozen=True)
class ConstraintRow:
    """Random row ``d = [a, b]`` of the constraint ``Re(a z) - b <= 0``.

    ``a`` is complex with moments ``a_moments``; ``b`` is real, independent of
    ``a``, with mean ``b_mean`` and variance ``b_var``.
    """

    a_moments: MomentTriple
    b_mean: float
    b_var: float = 0.0

    def __post_init__(self):
        if not np.isfinite(self.b_mean):
            raise ValueError("b_mean must be finite")
        if not (self.b_var >= 0.0):
            raise ValueError(f"b_var must be >= 0, got {self.b_var}")
        object.__setattr__(self, "b_mean", float(self.b_mean))
        object.__setattr__(self, "b_var", float(self.b_var))

    @property
    def n(self) -> int:
        return self.a_moments.n

    def d_moments(self) -> MomentTriple:
        """Moments of ``[a; -b]`` so that ``Re(d z~) = Re(a z) - b`` with ``z~ = [z; 1]``."""
        a = self.a_moments
        n = a.n
        mean = np.append(a.mean, -self.b_mean)
        cov = np.zeros((n + 1, n + 1), dtype=complex)
        pcov = np.zeros((n + 1, n + 1), dtype=complex)
        cov[:n, :n] = a.cov
        pcov[:n, :n] = a.pcov
        cov[n, n] = pcov[n, n] = self.b_var
        return MomentTriple(mean, cov, pcov)


@dataclass(frozen=True)
class AffineStats:
    mean: float
    variance: float

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


def _check_hermitian(cov, pcov):
    scale = max(np.abs(cov).max(initial=0.0), np.abs(pcov).max(initial=0.0), 1.0)
    herm = np.abs(cov - cov.conj().T)
    if herm.max(initial=0.0) > HERMITIAN_RTOL * scale:
        i, j = np.unravel_index(np.argmax(herm), herm.shape)
        return f"covariance not Hermitian at entry ({i}, {j}): |cov - cov^H| = {herm[i, j]:.3e}"
    sym = np.abs(pcov - pcov.T)
    if sym.max(initial=0.0) > HERMITIAN_RTOL * scale:
        i, j = np.unravel_index(np.argmax(sym), sym.shape)
        return f"pseudo-covariance not symmetric at entry ({i}, {j}): |pcov - pcov^T| = {sym[i, j]:.3e}"
    return None


def _augment(cov, pcov):
    G, J = cov, pcov
    top = np.hstack([(G.real + J.real) / 2, (J.imag - G.imag) / 2])
    bottom = np.hstack([(J.imag + G.imag) / 2, (G.real - J.real) / 2])
    K = np.vstack([top, bottom])
    return (K + K.T) / 2


def augmented_covariance(cov, pcov) -> np.ndarray:
    """Covariance of ``[Re d; Im d]`` from the complex covariance and pseudo-covariance.

    For a complex ``z`` and ``w = [Re z; Im z]`` the quadratic form satisfies
    ``w^T K w = (z^H cov z + Re(z^H pcov conj(z))) / 2``, which is the variance of
    ``Re(z^H d)``.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=complex))
    pcov = np.atleast_2d(np.asarray(pcov, dtype=complex))
    if cov.shape != pcov.shape or cov.shape[0] != cov.shape[1]:
        raise MomentError(f"cov {cov.shape} and pcov {pcov.shape} must be equal square shapes")
    problem = _check_hermitian(cov, pcov)
    if problem:
        raise MomentError(problem)
    return _augment(cov, pcov)


def complex_from_augmented(K) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`augmented_covariance`: ``(cov, pcov)`` from a real ``2n x 2n`` block matrix."""
    K = np.asarray(K, dtype=float)
    n = K.shape[0] // 2
    Krr, Kri, Kir, Kii = K[:n, :n], K[:n, n:], K[n:, :n], K[n:, n:]
    cov = Krr + Kii + 1j * (Kir - Kri)
    pcov = Krr - Kii + 1j * (Kir + Kri)
    return cov, pcov


def validate_moment_triple(m: MomentTriple) -> str | None:
    """Return ``None`` when ``m`` is valid, otherwise a diagnostic naming the violated invariant."""
    if not (np.all(np.isfinite(m.mean)) and np.all(np.isfinite(m.cov)) and np.all(np.isfinite(m.pcov))):
        return "moment triple has non-finite entries"
    problem = _check_hermitian(m.cov, m.pcov)
    if problem:
        return problem
    eig = np.linalg.eigvalsh(_augment(m.cov, m.pcov))
    top = max(abs(eig[-1]), abs(eig[0]))
    if eig[0] < -PSD_RTOL * top:
        return (
            f"augmented covariance indefinite: min eigenvalue {eig[0]:.6g} "
            f"(max {eig[-1]:.6g})"
        )
    return None


def check_moment_triple(m: MomentTriple) -> MomentTriple:
    problem = validate_moment_triple(m)
    if problem:
        raise MomentError(problem)
    return m


def psd_factor(K, rtol: float = 1e-13) -> np.ndarray:
    """Real ``F`` with ``F^T F = K`` (rows for numerically zero eigenvalues dropped)."""
    K = np.asarray(K, dtype=float)
    K = (K + K.T) / 2
    lam, Q = np.linalg.eigh(K)
    keep = lam > rtol * max(lam[-1], 0.0) if lam.size else lam > 0
    keep &= lam > 0
    return np.sqrt(lam[keep])[:, None] * Q[:, keep].T


def psd_sqrt(K) -> np.ndarray:
    """Symmetric PSD square root (negative round-off eigenvalues clipped)."""
    K = np.asarray(K)
    K = (K + K.conj().T) / 2
    lam, Q = np.linalg.eigh(K)
    return (Q * np.sqrt(np.clip(lam, 0.0, None))) @ Q.conj().T


def _check_dim(m: MomentTriple, z: np.ndarray):
    if z.size != m.n:
        raise ValueError(f"dimension mismatch: moments have n={m.n}, z has {z.size}")


def objective_stats(c_moments: MomentTriple, z) -> AffineStats:
    """Mean and variance of ``Re(c^H z)``."""
    z = np.asarray(z, dtype=complex).reshape(-1)
    _check_dim(c_moments, z)
    w = stack(z)
    K = _augment(c_moments.cov, c_moments.pcov)
    mean = float(np.real(np.vdot(c_moments.mean, z)))
    return AffineStats(mean, max(float(w @ K @ w), 0.0))


def constraint_stats(row: ConstraintRow, z) -> AffineStats:
    """Mean and variance of ``Re(a z) - b``.

    ``Re(a z) = Re(a)^T Re(z) - Im(a)^T Im(z)``, so the variance is the augmented
    quadratic form evaluated at the conjugate stacking ``[Re z; -Im z]``.
    """
    z = np.asarray(z, dtype=complex).reshape(-1)
    _check_dim(row.a_moments, z)
    a = row.a_moments
    w = stack(z.conj())
    K = _augment(a.cov, a.pcov)
    mean = float(np.real(a.mean @ z)) - row.b_mean
    return AffineStats(mean, max(float(w @ K @ w), 0.0) + row.b_var)
