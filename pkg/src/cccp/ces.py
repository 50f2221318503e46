"""Named complex elliptical families: marginal quantiles and seeded samplers.

Samples are drawn in the real ``2n`` stacking as ``mu + F xi`` with ``F`` the
symmetric square root of the augmented covariance and ``xi`` a standardized
draw.  Gaussian and Student-t use the exact elliptical representation
(Gaussian scaled by an inverse chi radius).  Laplace and logistic have no
convenient multivariate radial law, so ``xi`` has independent standardized
components; this matches first and second moments exactly but is NOT
elliptically symmetric.
"""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np
from scipy import special

from .complex_core import MomentTriple, check_moment_triple, psd_sqrt


@dataclass(frozen=True)
class Gaussian:
    name = "gaussian"


@dataclass(frozen=True)
class StudentT:
    nu: float
    name = "student_t"

    def __post_init__(self):
        if not (self.nu > 0):
            raise ValueError(f"degrees of freedom must be > 0, got {self.nu}")


@dataclass(frozen=True)
class Laplace:
    name = "laplace"


@dataclass(frozen=True)
class Logistic:
    name = "logistic"


@dataclass(frozen=True)
class Cauchy:
    """Alias of ``StudentT(1)``."""

    name = "cauchy"


@dataclass(frozen=True)
class GeneralizedGaussian:
    s: float
    b: float = 1.0
    name = "generalized_gaussian"

    def __post_init__(self):
        if not (self.s > 0 and self.b > 0):
            raise ValueError("generalized Gaussian needs s > 0 and b > 0")


CesFamily = Gaussian | StudentT | Laplace | Logistic | Cauchy | GeneralizedGaussian


def canonical(family: CesFamily) -> CesFamily:
    """Collapse aliases: Cauchy -> StudentT(1), GG(s=1) -> Gaussian, GG(s=1/2) -> Laplace."""
    if isinstance(family, Cauchy):
        return StudentT(1.0)
    if isinstance(family, GeneralizedGaussian):
        if family.s == 1:
            return Gaussian()
        if family.s == 0.5:
            return Laplace()
        raise NotImplementedError(f"generalized Gaussian with s={family.s} is not supported")
    return family


def is_heavy_tailed(family: CesFamily) -> bool:
    """True when the family has infinite variance."""
    fam = canonical(family)
    return isinstance(fam, StudentT) and fam.nu <= 2


def marginal_quantile(family: CesFamily, p: float) -> float:
    """Inverse CDF of the standard univariate marginal (unit scale, not unit variance)."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"probability must lie in (0, 1), got {p}")
    fam = canonical(family)
    if isinstance(fam, Gaussian):
        return float(special.ndtri(p))
    if isinstance(fam, StudentT):
        if fam.nu == 1:
            return math.tan(math.pi * (p - 0.5))
        return float(special.stdtrit(fam.nu, p))
    if isinstance(fam, Laplace):
        return math.log(2 * p) if p < 0.5 else -math.log(2 * (1 - p))
    if isinstance(fam, Logistic):
        return math.log(p) - math.log1p(-p)
    raise NotImplementedError(f"no quantile for {family!r}")


def marginal_cdf(family: CesFamily, x: float) -> float:
    fam = canonical(family)
    if isinstance(fam, Gaussian):
        return float(special.ndtr(x))
    if isinstance(fam, StudentT):
        return float(special.stdtr(fam.nu, x))
    if isinstance(fam, Laplace):
        return 0.5 * math.exp(x) if x < 0 else 1 - 0.5 * math.exp(-x)
    if isinstance(fam, Logistic):
        return float(special.expit(x))
    raise NotImplementedError(f"no CDF for {family!r}")


def marginal_pdf(family: CesFamily, x: float) -> float:
    fam = canonical(family)
    if isinstance(fam, Gaussian):
        return math.exp(-0.5 * x * x) / math.sqrt(2 * math.pi)
    if isinstance(fam, StudentT):
        nu = fam.nu
        logc = special.gammaln((nu + 1) / 2) - special.gammaln(nu / 2) - 0.5 * math.log(nu * math.pi)
        return math.exp(logc - (nu + 1) / 2 * math.log1p(x * x / nu))
    if isinstance(fam, Laplace):
        return 0.5 * math.exp(-abs(x))
    if isinstance(fam, Logistic):
        e = math.exp(-abs(x))
        return e / (1 + e) ** 2
    raise NotImplementedError(f"no density for {family!r}")


@dataclass(frozen=True)
class SeededStream:
    """Deterministic RNG stream: distinct ``stream`` indices give independent draws."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=int(self.seed), spawn_key=(int(self.stream),))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, index: int) -> "SeededStream":
        # child streams are keyed on (stream, index) folded into one integer
        return SeededStream(self.seed, int(self.stream) * 1_000_003 + int(index) + 1)


def standardized_draws(family: CesFamily, size: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    """``size[0]`` draws of a zero-mean ``size[1]``-vector with identity covariance.

    Infinite-variance families use the unit-scale law instead.
    """
    fam = canonical(family)
    count, dim = size
    if isinstance(fam, Gaussian):
        return rng.standard_normal(size)
    if isinstance(fam, StudentT):
        g = rng.standard_normal(size)
        radial = np.sqrt(rng.chisquare(fam.nu, size=count) / fam.nu)
        xi = g / radial[:, None]
        if fam.nu > 2:
            xi *= math.sqrt((fam.nu - 2) / fam.nu)
        return xi
    if isinstance(fam, Laplace):
        return rng.laplace(0.0, 1 / math.sqrt(2), size)
    if isinstance(fam, Logistic):
        return rng.logistic(0.0, math.sqrt(3) / math.pi, size)
    raise NotImplementedError(f"no sampler for {family!r}")


def sample_real(family: CesFamily, m: MomentTriple, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count x 2n`` real stacked samples ``[Re d, Im d]``."""
    K = m.augmented()
    F = psd_sqrt(K).real
    xi = standardized_draws(family, (count, 2 * m.n), rng)
    mu = np.concatenate([m.mean.real, m.mean.imag])
    return mu + xi @ F


def sample_complex(family: CesFamily, m: MomentTriple, count: int, rng: SeededStream | np.random.Generator) -> np.ndarray:
    """``count x n`` complex samples whose first two moments match ``m``."""
    if count < 1:
        raise ValueError("count must be >= 1")
    check_moment_triple(m)
    gen = rng.generator() if isinstance(rng, SeededStream) else rng
    w = sample_real(family, m, count, gen)
    n = m.n
    return w[:, :n] + 1j * w[:, n:]
