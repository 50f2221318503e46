"""Empirical moments of complex samples and their concentration radii."""

from __future__ import annotations

from dataclasses import dataclass
import math
import warnings
from pathlib import Path

import numpy as np

from .complex_core import MomentTriple


class EstimationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SampleSet:
    """``N x dim`` complex samples, one row per draw of ``d = [a, b]``."""

    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=complex)
        if s.ndim == 1:
            s = s[None, :]
        if s.ndim != 2 or s.shape[0] < 1 or s.shape[1] < 1:
            raise ValueError("sample set needs at least one sample of positive dimension")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        object.__setattr__(self, "samples", s)

    @property
    def count(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]


@dataclass(frozen=True)
class EstimatedMoments:
    triple: MomentTriple
    R: float
    r1: float
    r2: float
    delta: float
    N: int
    # R came from the sample maximum rather than a known support bound
    R_estimated: bool = False
    # N is below the minimum the radii bound needs
    below_min_n: bool = False


def empirical_moments(s: SampleSet) -> MomentTriple:
    d = s.samples
    mu = d.mean(axis=0)
    c = d - mu
    N = d.shape[0]
    cov = c.T @ c.conj() / N
    pcov = c.T @ c / N
    # exact symmetry; rounding in the products can leave ~1e-17 asymmetry
    cov = (cov + cov.conj().T) / 2
    pcov = (pcov + pcov.T) / 2
    return MomentTriple(mu, cov, pcov)


def radius_constant(delta: float) -> float:
    if not 0 < delta < 1:
        raise ValueError(f"confidence delta must lie in (0, 1), got {delta}")
    return 2.0 + math.sqrt(2.0 * math.log(6.0 / delta))


def min_sample_size(delta: float) -> int:
    return math.ceil(radius_constant(delta) ** 2)


def concentration_radii(R: float, N: int, delta: float) -> tuple[float, float, int]:
    """``(r1, r2, min_N)``; warns when ``N < min_N``."""
    if not (R > 0 and math.isfinite(R)):
        raise ValueError(f"support radius must be positive and finite, got {R}")
    if N < 1:
        raise ValueError("need at least one sample")
    c = radius_constant(delta)
    min_n = math.ceil(c * c)
    if N < min_n:
        warnings.warn(f"N={N} is below the minimum sample size {min_n} for delta={delta}; "
                      "the radii carry no guarantee", EstimationWarning, stacklevel=2)
    root = math.sqrt(N)
    return R / root * c, 2.0 * R * R / root * c, min_n


def support_radius(s: SampleSet) -> float:
    """Largest sample norm: a lower estimate of the true support radius."""
    return float(np.linalg.norm(s.samples, axis=1).max())


def estimate(s: SampleSet, delta: float = 0.05, R: float | None = None) -> EstimatedMoments:
    triple = empirical_moments(s)
    estimated = R is None
    if estimated:
        R = support_radius(s)
        warnings.warn("support radius estimated from the samples; the radii hold only heuristically",
                      EstimationWarning, stacklevel=2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        r1, r2, min_n = concentration_radii(R, s.count, delta)
    if s.count < min_n:
        warnings.warn(f"N={s.count} below minimum {min_n}", EstimationWarning, stacklevel=2)
    return EstimatedMoments(triple, R, r1, r2, delta, s.count, estimated, s.count < min_n)


# --- sample files -----------------------------------------------------------------

def format_float(x: float) -> str:
    return repr(float(x))


def save_samples(path, s: SampleSet, header: list[str] | None = None) -> None:
    lines = [f"# {h}" for h in (header or [])]
    for row in s.samples:
        inter = np.empty(2 * row.size)
        inter[0::2] = row.real
        inter[1::2] = row.imag
        lines.append(" ".join(format_float(v) for v in inter))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_samples(path) -> SampleSet:
    """One sample per line: ``re_1 im_1 re_2 im_2 ...``; ``#`` starts a comment."""
    rows = []
    width = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            vals = [float(t) for t in line.replace(",", " ").split()]
        except ValueError as err:
            raise ValueError(f"{path}:{lineno}: {err}") from None
        if len(vals) % 2:
            raise ValueError(f"{path}:{lineno}: odd number of values ({len(vals)})")
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise ValueError(f"{path}:{lineno}: expected {width} values, got {len(vals)}")
        rows.append(vals)
    if not rows:
        raise ValueError(f"{path}: no samples")
    a = np.asarray(rows)
    return SampleSet(a[:, 0::2] + 1j * a[:, 1::2])
