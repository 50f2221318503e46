"""Random instances, out-of-sample violation and the experiment pipelines.

Every pipeline is a pure function of its config: all randomness flows from
``SeededStream`` children of the config seed, and CSV output uses the shortest
round-trip float repr, so reruns are byte-identical.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
import hashlib
import io
import json
import logging
import math
import time
import warnings
from pathlib import Path

import numpy as np

from . import ces
from .complex_core import ConstraintRow, MomentTriple
from .estimation import EstimationWarning, SampleSet, concentration_radii, empirical_moments, support_radius
from .joint import (
    JointApproxConfig,
    Mode,
    case_of,
    descend_weights,
    reciprocal_is_concave,
    sample_gumbel,
    solve_joint,
)
from .reform import (
    CesKnown,
    DataDriven,
    MomentExact,
    MomentSymmetric,
    NormSupport,
    Problem3CP,
    solve_individual,
)

log = logging.getLogger(__name__)

Z95 = 1.96


# --- instances ----------------------------------------------------------------------

@dataclass(frozen=True)
class InstanceConfig:
    n: int = 50
    m: int = 15
    seed: int = 2024
    b_mean: tuple = (30.0, 35.0)
    b_var: float = 1.0
    pcov_scale: float = 0.5

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("dimensions must be positive")
        if not 0 <= self.pcov_scale <= 1:
            raise ValueError("pseudo-covariance scale must lie in [0, 1]")


@dataclass
class Instance:
    problem: Problem3CP
    # moments of d = [a, b] per row, used for sampling
    d_moments: list[MomentTriple]


def d_moments_of(row: ConstraintRow) -> MomentTriple:
    """Moments of ``[a, b]`` (``b`` real, independent of ``a``)."""
    a = row.a_moments
    n = a.n
    cov = np.zeros((n + 1, n + 1), dtype=complex)
    pcov = np.zeros((n + 1, n + 1), dtype=complex)
    cov[:n, :n] = a.cov
    pcov[:n, :n] = a.pcov
    cov[n, n] = pcov[n, n] = row.b_var
    return MomentTriple(np.append(a.mean, row.b_mean), cov, pcov)


def generate_instance(cfg: InstanceConfig, levels=0.95) -> Instance:
    """Means uniform on the quarter disk ``Re >= 0, Im <= 0``; ``cov = G G^H`` (unit average diagonal), ``pcov = s G G^T``.

    With sign constraints on ``z`` the quarter-disk means make every row
    penalise growth of ``z``, and the objective ``c = -(|u| + i|v|)`` rewards it,
    so the problem is bounded.
    """
    rng = ces.SeededStream(cfg.seed, 0).generator()
    n, m = cfg.n, cfg.m
    rows = []
    for _ in range(m):
        radius = np.sqrt(rng.random(n))
        angle = -0.5 * math.pi * rng.random(n)
        mean = radius * np.exp(1j * angle)
        G = rng.standard_normal((n, 2 * n)) + 1j * rng.standard_normal((n, 2 * n))
        cov = G @ G.conj().T
        scale = n / np.trace(cov).real
        cov = (cov + cov.conj().T) / 2 * scale
        pcov = G @ G.T
        pcov = (pcov + pcov.T) / 2 * scale * cfg.pcov_scale
        b = rng.uniform(*cfg.b_mean)
        rows.append(ConstraintRow(MomentTriple(mean, cov, pcov), b, cfg.b_var))
    c = -(np.abs(rng.standard_normal(n)) + 1j * np.abs(rng.standard_normal(n)))
    problem = Problem3CP(n, c, rows, levels, sign_constraints=True)
    return Instance(problem, [d_moments_of(r) for r in rows])


# --- out-of-sample validation -------------------------------------------------------

def halfwidth(rate: float, count: int) -> float:
    return Z95 * math.sqrt(max(rate * (1.0 - rate), 0.0) / count)


@dataclass(frozen=True)
class ValidationReport:
    joint_violation_rate: float
    per_constraint_rates: np.ndarray
    scenario_count: int
    binomial_halfwidth: float
    seed: int

    @property
    def mean_rate(self) -> float:
        return float(np.mean(self.per_constraint_rates))

    @property
    def mean_halfwidth(self) -> float:
        return halfwidth(self.mean_rate, self.scenario_count)


def sample_rows(family, d_moments: MomentTriple, count: int, stream: ces.SeededStream,
                support: np.ndarray | None = None) -> np.ndarray:
    """``count x (n+1)`` draws of ``[a, b]``; with ``support`` each deviation is radially clipped to ``|d_j - mu_j| <= l_j``."""
    d = ces.sample_complex(family, d_moments, count, stream)
    if support is not None:
        dev = d - d_moments.mean
        mag = np.abs(dev)
        shrink = np.minimum(1.0, support / np.maximum(mag, 1e-300))
        d = d_moments.mean + dev * shrink
    return d


def couple_ranks(values: np.ndarray, theta: float, stream: ces.SeededStream) -> np.ndarray:
    """Reorder each column so the ranks across columns follow a Gumbel copula.

    Column marginals are untouched; only the pairing of scenarios across
    columns changes.  ``theta = 1`` pairs them independently.
    """
    S, m = values.shape
    u = sample_gumbel(S, m, theta, stream.generator())
    out = np.empty_like(values)
    for i in range(m):
        ranks = np.argsort(np.argsort(u[:, i], kind="stable"), kind="stable")
        out[:, i] = np.sort(values[:, i], kind="stable")[ranks]
    return out


def oos_violation(z, family, d_moments: list[MomentTriple], S: int, seed: int,
                  support: np.ndarray | None = None, theta: float | None = None) -> ValidationReport:
    """Empirical violation of ``Re(a_i z) - b_i <= 0`` over ``S`` fresh scenarios.

    Rows are sampled independently, each from its own seeded stream, so
    results do not depend on evaluation order.  With ``theta`` the joint event
    is evaluated after coupling the rows through a Gumbel copula with that
    parameter (the dependence the copula split assumes); per-row rates are the
    same either way.
    """
    z = np.asarray(z, dtype=complex).reshape(-1)
    if S < 1:
        raise ValueError("need at least one scenario")
    if not np.all(np.isfinite(z)):
        raise ValueError("z must be finite")
    slack = np.empty((S, len(d_moments)))
    for i, dm in enumerate(d_moments):
        if dm.n != z.size + 1:
            raise ValueError(f"row {i}: moments have dimension {dm.n}, expected {z.size + 1}")
        d = sample_rows(family, dm, S, ces.SeededStream(seed, i + 1), support)
        slack[:, i] = (d[:, :-1] @ z).real - d[:, -1].real
    if theta is not None:
        slack = couple_ranks(slack, theta, ces.SeededStream(seed, 0))
    violated = slack > 0
    joint = float(violated.any(axis=1).mean())
    per = violated.mean(axis=0)
    return ValidationReport(joint, per, S, halfwidth(joint, S), seed)


# --- specs by name ------------------------------------------------------------------

CES_SPECS = {
    "gaussian": ces.Gaussian(),
    "student_t4": ces.StudentT(4.0),
    "laplace": ces.Laplace(),
    "logistic": ces.Logistic(),
    "cauchy": ces.Cauchy(),
}
DRO_SPECS = ("moment_exact", "moment_symmetric", "norm_support", "data_driven")
ALL_SPECS = tuple(CES_SPECS) + DRO_SPECS


def sampling_family(name: str):
    """Law of the validation scenarios: the named family for CES specs, Gaussian otherwise."""
    return CES_SPECS.get(name, ces.Gaussian())


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 50
    m: int = 15
    p_levels: tuple = (0.7, 0.8, 0.95)
    theta: float = 2.0
    specs: tuple = ("gaussian", "student_t4", "laplace", "logistic", "cauchy",
                    "moment_symmetric", "moment_exact", "norm_support", "data_driven")
    seed: int = 2024
    scenarios: int = 1000
    joint: bool = True
    joint_tangents: int = 20
    descent_rounds: int = 0
    gap_descent_rounds: int = 40
    tangent_counts: tuple = (5, 10, 20, 40)
    gap_spec: str = "moment_exact"
    sample_sizes: tuple = (1000, 10000, 100000)
    estimation_spec: str = "moment_exact"
    data_driven_samples: int = 100000
    delta: float = 0.05
    norm_bound: float = 10.0
    b_var: float = 1.0
    tol: float = 1e-8
    backend: str = "reference"

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise ValueError("dimensions must be positive")
        if self.scenarios < 100:
            raise ValueError("need at least 100 scenarios")
        for p in self.p_levels:
            if not 0 < p < 1:
                raise ValueError(f"probability level {p} outside (0, 1)")
        for s in self.specs:
            if s not in ALL_SPECS:
                raise ValueError(f"unknown spec {s!r}; choose from {ALL_SPECS}")
        if self.theta < 1:
            raise ValueError("theta must be >= 1")
        object.__setattr__(self, "p_levels", tuple(float(p) for p in self.p_levels))
        object.__setattr__(self, "specs", tuple(self.specs))
        object.__setattr__(self, "tangent_counts", tuple(int(k) for k in self.tangent_counts))
        object.__setattr__(self, "sample_sizes", tuple(int(k) for k in self.sample_sizes))

    def instance_config(self, m: int | None = None) -> InstanceConfig:
        return InstanceConfig(self.n, self.m if m is None else m, self.seed, b_var=self.b_var)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()[:16]


def estimate_rows(inst: Instance, N: int, seed: int, delta: float, family=None
                  ) -> tuple[list[MomentTriple], tuple, tuple, tuple]:
    """Empirical ``[a, b]`` moments per row from ``N`` draws, with per-row ``(R, r1, r2)``.

    Each row's ``R`` is its largest sample norm.
    """
    family = family or ces.Gaussian()
    est, R, r1, r2 = [], [], [], []
    for i, dm in enumerate(inst.d_moments):
        s = SampleSet(ces.sample_complex(family, dm, N, ces.SeededStream(seed, 1000 + i)))
        est.append(empirical_moments(s))
        R.append(support_radius(s))
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", EstimationWarning)
            a, b, _ = concentration_radii(R[-1], N, delta)
        r1.append(a)
        r2.append(b)
    return est, tuple(R), tuple(r1), tuple(r2)


def build_spec(name: str, inst: Instance, cfg: ExperimentConfig):
    if name in CES_SPECS:
        return CesKnown(CES_SPECS[name])
    if name == "moment_exact":
        return MomentExact()
    if name == "moment_symmetric":
        return MomentSymmetric()
    if name == "norm_support":
        return NormSupport(np.full(inst.problem.n + 1, cfg.norm_bound))
    if name == "data_driven":
        est, _, r1, r2 = estimate_rows(inst, cfg.data_driven_samples, cfg.seed, cfg.delta)
        return DataDriven(tuple(est), r1, r2)
    raise ValueError(f"unknown spec {name!r}")


# --- CSV --------------------------------------------------------------------------

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def csv_text(rows: list[dict], columns: list[str], header: dict) -> str:
    out = io.StringIO()
    for k, v in header.items():
        out.write(f"# {k}: {v}\n")
    out.write(",".join(columns) + "\n")
    for r in rows:
        out.write(",".join(_fmt(r.get(c)) for c in columns) + "\n")
    return out.getvalue()


def write_csv(path, rows: list[dict], columns: list[str], cfg: ExperimentConfig, kind: str) -> Path:
    header = {"experiment": kind, "config_hash": cfg.config_hash, "seed": cfg.seed, "config": cfg.to_json()}
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(csv_text(rows, columns, header).encode("utf-8"))
    return path


# --- table experiment ---------------------------------------------------------------

TABLE_COLUMNS = ["spec", "p", "mode", "status", "objective", "bound_objective", "violation",
                 "joint_rate", "mean_rate", "halfwidth", "target", "within_guarantee",
                 "strictly_below", "heavy_tailed", "conservative", "scenario_seed"]


def _guarantee(viol: float, hw: float, p: float) -> tuple[bool, bool]:
    return viol <= (1 - p) + 2 * hw, viol < 1 - p


def run_table_experiment(cfg: ExperimentConfig) -> list[dict]:
    """Individual and joint solves per (spec, p), validated on fresh scenarios.

    Individual mode reports the mean per-constraint violation.  Joint mode
    solves the tangent lower-bound SOCP, re-solves the individual problem at
    the levels implied by its weights ``y`` (optionally improved by
    ``descent_rounds`` of weight descent) to get a point feasible for the
    exact joint constraint, and validates that point on the joint event with
    rows coupled by the Gumbel copula.  ``bound_objective`` holds the lower
    bound.
    """
    inst = generate_instance(cfg.instance_config())
    out = []
    for si, name in enumerate(cfg.specs):
        spec = build_spec(name, inst, cfg)
        family = sampling_family(name)
        heavy = ces.is_heavy_tailed(family)
        support = np.full(cfg.n + 1, cfg.norm_bound) if name == "norm_support" else None
        for pi, p in enumerate(cfg.p_levels):
            scen_seed = cfg.seed * 1000 + 10 * si + pi
            base = dict(spec=name, p=p, heavy_tailed=heavy, conservative=name in DRO_SPECS,
                        target=1 - p, scenario_seed=scen_seed)
            prob = replace(inst.problem, levels=np.full(cfg.m, p))
            row = dict(base, mode="individual")
            try:
                res = solve_individual(prob, spec, tol=cfg.tol, backend=cfg.backend)
                row.update(status=res.solution.status.value, objective=res.objective)
                if res.ok:
                    rep = oos_violation(res.z, family, inst.d_moments, cfg.scenarios, scen_seed, support)
                    ok, strict = _guarantee(rep.mean_rate, rep.mean_halfwidth, p)
                    row.update(violation=rep.mean_rate, joint_rate=rep.joint_violation_rate,
                               mean_rate=rep.mean_rate, halfwidth=rep.mean_halfwidth,
                               within_guarantee=ok, strictly_below=strict)
            except (ValueError, np.linalg.LinAlgError) as err:
                row.update(status=f"error: {err}")
            out.append(row)
            if not cfg.joint:
                continue
            row = dict(base, mode="joint")
            try:
                jc = JointApproxConfig.geometric(cfg.joint_tangents, cfg.theta, Mode.LOWER)
                lb = solve_joint(prob, spec, p, jc, tol=cfg.tol, backend=cfg.backend,
                                 descent_rounds=cfg.descent_rounds)
                row.update(status=lb.solution.status.value, bound_objective=lb.objective)
                if lb.ok and lb.feasible_z is not None:
                    row.update(objective=lb.feasible_objective)
                    rep = oos_violation(lb.feasible_z, family, inst.d_moments, cfg.scenarios, scen_seed, support,
                                        theta=cfg.theta)
                    ok, strict = _guarantee(rep.joint_violation_rate, rep.binomial_halfwidth, p)
                    row.update(violation=rep.joint_violation_rate, joint_rate=rep.joint_violation_rate,
                               mean_rate=rep.mean_rate, halfwidth=rep.binomial_halfwidth,
                               within_guarantee=ok, strictly_below=strict)
            except (ValueError, np.linalg.LinAlgError) as err:
                row.update(status=f"error: {err}")
            out.append(row)
            log.info("table %s p=%s done", name, p)
    return out


MONOTONICITY_COLUMNS = ["spec", "mode", "objective_nondecreasing", "violation_nonincreasing"]


def monotonicity_summary(rows: list[dict]) -> list[dict]:
    """Per (spec, mode): is the objective non-decreasing and the violation non-increasing in p?"""
    groups: dict[tuple, list[dict]] = {}
    for r in rows:
        if r.get("objective") is not None:
            groups.setdefault((r["spec"], r["mode"]), []).append(r)
    out = []
    for (spec, mode), rs in groups.items():
        rs = sorted(rs, key=lambda r: r["p"])
        obj = [r["objective"] for r in rs]
        vio = [r.get("violation") for r in rs]
        obj_ok = all(b >= a - 1e-7 * (1 + abs(a)) for a, b in zip(obj, obj[1:]))
        vio_ok = all(v is not None for v in vio) and all(b <= a for a, b in zip(vio, vio[1:]))
        out.append(dict(spec=spec, mode=mode, objective_nondecreasing=obj_ok, violation_nonincreasing=vio_ok))
    return out


# --- gap experiment ----------------------------------------------------------------

GAP_COLUMNS = ["m", "tangents", "lower_bound", "upper_bound", "relative_gap", "lower_product",
               "lower_reciprocal", "relative_gap_product", "upper_socp", "upper_socp_certified",
               "status_lower", "status_upper"]


def gap_spec(name: str, inst: Instance, cfg: ExperimentConfig):
    return build_spec(name, inst, cfg)


def _rel_gap(ub: float, lb: float) -> float:
    return (ub - lb) / abs(ub) if math.isfinite(ub) and math.isfinite(lb) and ub != 0 else math.nan


def run_gap_experiment(cfg: ExperimentConfig, m: int | None = None, p: float | None = None) -> list[dict]:
    """Lower/upper approximations of the joint problem for each tangent count.

    Two valid lower bounds are computed: the product lifting
    (``lower_product``) and the reciprocal lifting (``lower_reciprocal``, only
    when ``1 / k_p`` is concave); ``lower_bound`` is the larger.
    ``upper_bound`` is the best value among points proven feasible for the
    exact joint constraint: the chord SOCP's own solution when certified, and
    the individual problem re-solved at each approximation's weights ``y``,
    followed by ``cfg.gap_descent_rounds`` of weight descent from the best of
    those.  ``upper_socp`` is the raw value of the chord SOCP.
    """
    p = cfg.p_levels[-1] if p is None else p
    inst = generate_instance(cfg.instance_config(m))
    prob = replace(inst.problem, levels=np.full(inst.problem.m, p))
    spec = gap_spec(cfg.gap_spec, inst, cfg)
    recip_ok = reciprocal_is_concave(case_of(spec), p, cfg.theta)
    out = []
    for N in cfg.tangent_counts:
        runs = dict(
            lo=solve_joint(prob, spec, p, JointApproxConfig.geometric(N, cfg.theta, Mode.LOWER),
                           tol=cfg.tol, backend=cfg.backend, descent_rounds=0),
            hi=solve_joint(prob, spec, p, JointApproxConfig.geometric(max(N, 2), cfg.theta, Mode.UPPER),
                           tol=cfg.tol, backend=cfg.backend, descent_rounds=0),
        )
        if recip_ok:
            runs["rc"] = solve_joint(prob, spec, p,
                                     JointApproxConfig.geometric(N, cfg.theta, Mode.LOWER, lifting="reciprocal"),
                                     tol=cfg.tol, backend=cfg.backend, descent_rounds=0)
        lo, hi, rc = runs["lo"], runs["hi"], runs.get("rc")
        ub = min(r.upper_bound for r in runs.values())
        start = min((r for r in runs.values() if r.y is not None and math.isfinite(r.feasible_objective)),
                    key=lambda r: r.feasible_objective, default=None)
        if start is not None and cfg.gap_descent_rounds > 0:
            feas, _ = descend_weights(prob, spec, p, cfg.theta, start.y, max_rounds=cfg.gap_descent_rounds,
                                      tol=cfg.tol, backend=cfg.backend)
            if feas.ok:
                ub = min(ub, feas.objective)
        lb_prod = lo.objective if lo.ok else math.nan
        lb_rec = rc.objective if rc is not None and rc.ok else math.nan
        lb = max((v for v in (lb_prod, lb_rec) if math.isfinite(v)), default=math.nan)
        out.append(dict(m=prob.m, tangents=N, lower_bound=lb, upper_bound=ub, relative_gap=_rel_gap(ub, lb),
                        lower_product=lb_prod, lower_reciprocal=lb_rec,
                        relative_gap_product=_rel_gap(ub, lb_prod),
                        upper_socp=hi.objective if hi.ok else math.nan, upper_socp_certified=hi.certified,
                        status_lower=lo.solution.status.value, status_upper=hi.solution.status.value))
    return out


# --- estimation experiment ------------------------------------------------------------

EST_COLUMNS = ["N", "objective_estimated", "objective_with_radii", "objective_true",
               "relative_error", "r1_max", "r2_max", "R_max", "below_min_n", "conservative_ok"]


def run_estimation_experiment(cfg: ExperimentConfig, p: float | None = None) -> list[dict]:
    """Solve with true moments, then with empirical moments (radii off and on) at each sample size."""
    p = cfg.p_levels[-1] if p is None else p
    inst = generate_instance(cfg.instance_config())
    prob = replace(inst.problem, levels=np.full(cfg.m, p))
    true = solve_individual(prob, MomentExact(), tol=cfg.tol, backend=cfg.backend)
    c = 2.0 + math.sqrt(2.0 * math.log(6.0 / cfg.delta))
    min_n = math.ceil(c * c)
    out = []
    for N in cfg.sample_sizes:
        est, R, r1, r2 = estimate_rows(inst, N, cfg.seed + N, cfg.delta)
        plain = solve_individual(prob, DataDriven(tuple(est), 0.0, 0.0), tol=cfg.tol, backend=cfg.backend)
        robust = solve_individual(prob, DataDriven(tuple(est), r1, r2), tol=cfg.tol, backend=cfg.backend)
        rel = abs(plain.objective - true.objective) / abs(true.objective) if plain.ok else math.nan
        with_radii = robust.objective if robust.ok else math.nan
        ok = (not robust.ok) or robust.objective >= true.objective - 1e-7 * (1 + abs(true.objective))
        out.append(dict(N=N, objective_estimated=plain.objective if plain.ok else math.nan,
                        objective_with_radii=with_radii, objective_true=true.objective,
                        relative_error=rel, r1_max=max(r1), r2_max=max(r2), R_max=max(R), below_min_n=N < min_n,
                        conservative_ok=ok))
    return out


def timed(fn, *args, **kw):
    t = time.perf_counter()
    out = fn(*args, **kw)
    return out, time.perf_counter() - t
