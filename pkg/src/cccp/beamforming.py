"""MVDR beamforming with a chance-constrained distortionless response.

The presumed steering vector ``a`` differs from the true one by a random
mismatch ``delta``.  The robust beamformer solves

    min  w^H R w
    s.t. P[-Re(delta^H w) <= Re(a^H w) - 1] >= p,  Re(a^H w) >= 0,  Im(a^H w) = 0

through its deterministic cone counterpart.  ``Re(delta^H w)`` has variance
``(w^H Gamma w + Re(w^H J conj(w))) / 2``, so for a circular mismatch the cone
reads ``k ||Gamma^{1/2} w|| / sqrt(2) <= Re(a^H w) - 1``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
import hashlib
import json
import logging
import math
import warnings

import numpy as np

from . import ces
from .complex_core import MomentTriple, augmented_covariance, psd_factor, stack
from .estimation import EstimationWarning, SampleSet, concentration_radii, empirical_moments, support_radius
from .reform import CesKnown, MomentExact, safety_factor
from .solver import ConeBlock, SocpProblem, solve

log = logging.getLogger(__name__)

MODES = ("gaussian", "moment_exact", "data_driven")


@dataclass(frozen=True)
class ArrayModel:
    """Uniform linear array; angles in degrees, INRs in dB."""

    M: int = 8
    spacing: float = 0.5
    signal_doa: float = 3.0
    interferer_doas: tuple = (15.0, 30.0)
    interferer_inrs: tuple = (15.0, 15.0)
    noise_power: float = 1.0

    def __post_init__(self):
        if self.M < 2:
            raise ValueError("array needs at least two sensors")
        if not self.spacing > 0:
            raise ValueError("element spacing must be positive")
        if not self.noise_power > 0:
            raise ValueError("noise power must be positive")
        if len(self.interferer_doas) != len(self.interferer_inrs):
            raise ValueError("one INR per interferer required")
        object.__setattr__(self, "interferer_doas", tuple(float(v) for v in self.interferer_doas))
        object.__setattr__(self, "interferer_inrs", tuple(float(v) for v in self.interferer_inrs))


@dataclass
class BeamformerResult:
    w: np.ndarray
    # w^H R w for the design covariance
    objective: float
    # 10 log10(|w^H a|^2 / w^H R w): output SINR per unit signal power at the presumed steering vector
    sinr_db: float
    status: str = "optimal"
    # |Re(a^H w) - 1| and |Im(a^H w)|
    distortion_residual: float = 0.0
    imag_residual: float = 0.0

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def ula_steering(model: ArrayModel, angle_deg: float) -> np.ndarray:
    k = np.arange(model.M)
    return np.exp(1j * 2 * math.pi * model.spacing * k * math.sin(math.radians(angle_deg)))


def interference_noise_cov(model: ArrayModel) -> np.ndarray:
    s2 = model.noise_power
    R = s2 * np.eye(model.M, dtype=complex)
    for doa, inr in zip(model.interferer_doas, model.interferer_inrs):
        a = ula_steering(model, doa)
        R += 10 ** (inr / 10) * s2 * np.outer(a, a.conj())
    return (R + R.conj().T) / 2


def output_sinr(w, R, a, signal_power: float = 1.0) -> float:
    """Linear SINR ``signal_power |w^H a|^2 / w^H R w``."""
    w = np.asarray(w, dtype=complex)
    return float(signal_power * abs(np.vdot(w, a)) ** 2 / np.vdot(w, R @ w).real)


def _result(w, R, a, status="optimal") -> BeamformerResult:
    g = np.vdot(a, w)
    obj = float(np.vdot(w, R @ w).real)
    return BeamformerResult(w, obj, 10 * math.log10(output_sinr(w, R, a)), status,
                            abs(g.real - 1.0), abs(g.imag))


def mvdr_closed_form(R, a) -> BeamformerResult:
    """``w = R^{-1} a / (a^H R^{-1} a)``."""
    R = np.asarray(R, dtype=complex)
    a = np.asarray(a, dtype=complex)
    try:
        Ri_a = np.linalg.solve(R, a)
    except np.linalg.LinAlgError as err:
        raise np.linalg.LinAlgError(f"interference-plus-noise covariance is singular: {err}") from None
    w = Ri_a / np.vdot(a, Ri_a)
    return _result(w, R, a)


def _real_form(R) -> np.ndarray:
    """``K`` with ``stack(w)^T K stack(w) = w^H R w`` for Hermitian ``R``."""
    return np.block([[R.real, -R.imag], [R.imag, R.real]])


@dataclass(frozen=True)
class MismatchModel:
    """Moments of the steering mismatch and the safety factor mode.

    ``mode`` is ``"gaussian"`` (exact quantile), ``"moment_exact"`` (known
    first and second moments) or ``"data_driven"`` (estimated moments plus
    concentration radii ``r1``, ``r2``).
    """

    moments: MomentTriple
    mode: str = "gaussian"
    r1: float = 0.0
    r2: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mismatch mode {self.mode!r}; expected one of {MODES}")
        if not (self.r1 >= 0 and self.r2 >= 0):
            raise ValueError("radii must be >= 0")
        if self.mode != "data_driven" and (self.r1 or self.r2):
            raise ValueError("radii apply only to the data-driven mode")

    def factor(self, p: float) -> float:
        spec = CesKnown(ces.Gaussian()) if self.mode == "gaussian" else MomentExact()
        return safety_factor(spec, p)

    def augmented(self) -> np.ndarray:
        n = self.moments.n
        shift = self.r2 * np.eye(n)
        return augmented_covariance(self.moments.cov + shift, self.moments.pcov + shift)


def circular_mismatch(M: int, variance: float = 1.0) -> MomentTriple:
    """Zero-mean circular mismatch with covariance ``variance / M * I``."""
    return MomentTriple(np.zeros(M), variance / M * np.eye(M), np.zeros((M, M)))


def robust_constraint_lhs(w, a, mismatch: MismatchModel, p: float) -> float:
    """``mean(-Re(delta^H w)) + k std + r1 ||w|| - (Re(a^H w) - 1)``; feasible iff ``<= 0``."""
    x = stack(np.asarray(w, dtype=complex))
    K = mismatch.augmented()
    std = math.sqrt(max(float(x @ K @ x), 0.0))
    mean = -float(x @ stack(mismatch.moments.mean))
    return mean + mismatch.factor(p) * std + mismatch.r1 * float(np.linalg.norm(x)) - (np.vdot(a, w).real - 1.0)


def robust_socp(R, a, mismatch: MismatchModel, p: float) -> SocpProblem:
    """Variables ``[Re w; Im w; t; s1; s2]``, minimising ``t >= ||R^{1/2} w||``."""
    R = np.asarray(R, dtype=complex)
    a = np.asarray(a, dtype=complex)
    M = a.size
    if R.shape != (M, M) or mismatch.moments.n != M:
        raise ValueError("dimension mismatch between R, a and the mismatch moments")
    nw = 2 * M
    nv = nw + 3
    it, i1, i2 = nw, nw + 1, nw + 2

    def pad(A):
        A = np.atleast_2d(A)
        return np.hstack([A, np.zeros((A.shape[0], 3))])

    def unit(j):
        e = np.zeros(nv)
        e[j] = 1.0
        return e

    L = psd_factor(_real_form(R))
    F = mismatch.factor(p) * psd_factor(mismatch.augmented())
    blocks = [
        ConeBlock(pad(L), np.zeros(L.shape[0]), unit(it), 0.0),
        ConeBlock(pad(F), np.zeros(F.shape[0]), unit(i1), 0.0),
        ConeBlock(mismatch.r1 * pad(np.eye(nw)), np.zeros(nw), unit(i2), 0.0),
    ]
    ar = stack(a)  # Re(a^H w) = ar @ stack(w)
    ai = np.concatenate([-a.imag, a.real])  # Im(a^H w) = ai @ stack(w)
    mu = stack(mismatch.moments.mean)
    G = np.zeros((2, nv))
    # s1 + s2 - mu.x - ar.x <= -1
    G[0, :nw] = -mu - ar
    G[0, i1] = G[0, i2] = 1.0
    # Re(a^H w) >= 0
    G[1, :nw] = -ar
    h = np.array([-1.0, 0.0])
    E = np.zeros((1, nv))
    E[0, :nw] = ai
    return SocpProblem(nv, unit(it), blocks, eq=(E, np.zeros(1)), lin_ineq=(G, h))


def robust_mvdr(R, a, mismatch: MismatchModel, p: float, tol: float = 1e-9,
                backend: str = "reference") -> BeamformerResult:
    """Chance-constrained MVDR; an infeasible target is reported in ``status``."""
    prob = robust_socp(R, a, mismatch, p)
    sol = solve(prob, tol=tol, backend=backend)
    M = np.asarray(a).size
    if not sol.optimal:
        return BeamformerResult(np.full(M, np.nan + 0j), math.nan, math.nan, sol.status.value,
                                math.nan, math.nan)
    w = sol.x[:M] + 1j * sol.x[M:2 * M]
    return _result(w, np.asarray(R, dtype=complex), np.asarray(a, dtype=complex))


def nominal_mvdr(R, a, tol: float = 1e-9, backend: str = "reference") -> BeamformerResult:
    """Plain MVDR through the SOCP path (no mismatch); matches :func:`mvdr_closed_form`."""
    a = np.asarray(a, dtype=complex)
    zero = MismatchModel(MomentTriple.deterministic(np.zeros(a.size)), "moment_exact")
    return robust_mvdr(R, a, zero, 0.5, tol=tol, backend=backend)


def snapshot_cov(model: ArrayModel, true_steering, signal_power: float, K: int,
                 rng: np.random.Generator) -> np.ndarray:
    """Sample covariance of ``K`` snapshots of signal plus interference plus noise."""
    M = model.M
    cols = [math.sqrt(signal_power) * true_steering]
    for doa, inr in zip(model.interferer_doas, model.interferer_inrs):
        cols.append(math.sqrt(10 ** (inr / 10) * model.noise_power) * ula_steering(model, doa))
    A = np.array(cols).T
    src = (rng.standard_normal((A.shape[1], K)) + 1j * rng.standard_normal((A.shape[1], K))) / math.sqrt(2)
    noise = math.sqrt(model.noise_power / 2) * (rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K)))
    X = A @ src + noise
    R = X @ X.conj().T / K
    return (R + R.conj().T) / 2


# --- SNR sweep ----------------------------------------------------------------------

@dataclass(frozen=True)
class SweepConfig:
    model: ArrayModel = field(default_factory=ArrayModel)
    p: float = 0.7
    mismatch_variance: float = 1.0
    snr_db: tuple = (-10.0, -5.0, 0.0, 5.0, 10.0, 15.0, 20.0)
    trials: int = 100
    modes: tuple = MODES
    estimation_samples: tuple = (100000,)
    delta: float = 0.05
    # None: analytic R_{i+n}; otherwise design with the sample covariance of this many snapshots
    snapshots: int | None = None
    seed: int = 2024
    tol: float = 1e-9
    backend: str = "reference"

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("need at least one trial")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}")
        if self.snapshots is not None and self.snapshots < 1:
            raise ValueError("snapshot count must be positive")
        object.__setattr__(self, "snr_db", tuple(float(v) for v in self.snr_db))
        object.__setattr__(self, "estimation_samples", tuple(int(v) for v in self.estimation_samples))

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


SWEEP_COLUMNS = ["snr_db", "curve", "estimation_samples", "sinr_db", "trials_ok", "covariance"]


def estimated_mismatch(samples: np.ndarray, delta: float) -> MismatchModel:
    """Data-driven mismatch model; the support radius is the largest sample norm."""
    s = SampleSet(samples)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", EstimationWarning)
        r1, r2, _ = concentration_radii(support_radius(s), s.count, delta)
    return MismatchModel(empirical_moments(s), "data_driven", r1, r2)


def _db(x: float) -> float:
    return 10 * math.log10(x) if x > 0 else -math.inf


def snr_sweep(cfg: SweepConfig) -> list[dict]:
    """Average output SINR versus input SNR over mismatch trials.

    Each trial draws the true steering vector ``a + delta`` from the circular
    Gaussian mismatch law; beamformers are designed with the presumed ``a``.
    Curves: ``optimal`` (true steering known), ``mvdr_mismatched`` (closed
    form with ``a``) and one per robust mode; ``data_driven`` appears once per
    estimation sample size.  SINR is averaged in linear scale, then converted
    to dB.
    """
    model = cfg.model
    a = ula_steering(model, model.signal_doa)
    Rin = interference_noise_cov(model)
    truth = circular_mismatch(model.M, cfg.mismatch_variance)
    curves = [("optimal", None), ("mvdr_mismatched", None)]
    for mode in cfg.modes:
        if mode == "data_driven":
            curves += [(mode, N) for N in cfg.estimation_samples]
        else:
            curves.append((mode, None))
    counts = {c: np.zeros(len(cfg.snr_db), dtype=int) for c in curves}
    sums = {c: np.zeros(len(cfg.snr_db)) for c in curves}
    cache: dict = {}

    def design(curve, Rd, trial):
        mode, N = curve
        if mode == "mvdr_mismatched":
            return mvdr_closed_form(Rd, a)
        if mode == "data_driven":
            j = cfg.estimation_samples.index(N)
            stream = ces.SeededStream(cfg.seed, 2).child(trial * len(cfg.estimation_samples) + j)
            mm = estimated_mismatch(ces.sample_complex(ces.Gaussian(), truth, N, stream), cfg.delta)
        else:
            mm = MismatchModel(truth, mode)
        return robust_mvdr(Rd, a, mm, cfg.p, tol=cfg.tol, backend=cfg.backend)

    for trial in range(cfg.trials):
        delta = ces.sample_complex(ces.Gaussian(), truth, 1, ces.SeededStream(cfg.seed, 1).child(trial))[0]
        a_true = a + delta
        for si, snr in enumerate(cfg.snr_db):
            ps = 10 ** (snr / 10) * model.noise_power
            if cfg.snapshots is None:
                Rd = Rin
            else:
                rng = ces.SeededStream(cfg.seed, 3).child(trial * len(cfg.snr_db) + si).generator()
                Rd = snapshot_cov(model, a_true, ps, cfg.snapshots, rng)
            for curve in curves:
                if curve[0] == "optimal":
                    sinr = ps * np.vdot(a_true, np.linalg.solve(Rin, a_true)).real
                else:
                    # with the analytic covariance the design does not depend on the SNR
                    key = (curve, trial if curve[0] == "data_driven" else None)
                    if cfg.snapshots is None and key in cache:
                        res = cache[key]
                    else:
                        res = design(curve, Rd, trial)
                        if cfg.snapshots is None:
                            cache[key] = res
                    if not res.ok:
                        log.warning("trial %d, snr %s, %s: %s", trial, snr, curve, res.status)
                        continue
                    sinr = output_sinr(res.w, Rin, a_true, ps)
                sums[curve][si] += sinr
                counts[curve][si] += 1
        if cfg.snapshots is None:
            for key in [k for k in cache if k[1] == trial]:
                del cache[key]
    rows = []
    cov_label = "analytic" if cfg.snapshots is None else f"snapshots_{cfg.snapshots}"
    for curve in curves:
        for si, snr in enumerate(cfg.snr_db):
            c = counts[curve][si]
            rows.append(dict(snr_db=snr, curve=curve[0], estimation_samples=curve[1],
                             sinr_db=_db(sums[curve][si] / c) if c else math.nan,
                             trials_ok=int(c), covariance=cov_label))
    return rows


def curve(rows: list[dict], name: str, samples: int | None = None) -> np.ndarray:
    """SINR values (dB) of one curve, ordered by SNR."""
    sel = [r for r in rows if r["curve"] == name and r["estimation_samples"] == samples]
    sel.sort(key=lambda r: r["snr_db"])
    return np.array([r["sinr_db"] for r in sel])
