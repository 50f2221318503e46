"""Joint complex chance constraints through the Gumbel-Hougaard copula.

With copula parameter ``theta`` a joint level ``p`` splits into individual
levels ``p_i = p ** (y_i ** (1/theta))`` for simplex weights ``y``.  Each row
then carries the safety factor ``k_p(y_i)``, which is convex and decreasing in
``y_i``.  Replacing ``k_p`` by a max of affine pieces and lifting the bilinear
products ``y_i z~`` (``z~ = [z; 1]``) gives a convex SOCP: tangents give a lower
bound, chords an upper approximation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import enum
import math

import numpy as np
from scipy import optimize
import scipy.sparse as sp

from . import ces
from .reform import (
    Problem3CP,
    Solved,
    check_level,
    conj_stack_map,
    objective_cone,
    row_model,
    solve_individual,
)
from .solver import ConeBlock, SocpProblem, SocpSolution, solve


# --- copula ---------------------------------------------------------------------

def _check_theta(theta: float) -> float:
    theta = float(theta)
    if not theta >= 1:
        raise ValueError(f"copula parameter must be >= 1, got {theta}")
    return theta


def gumbel_copula(u, theta: float) -> float:
    theta = _check_theta(theta)
    u = np.asarray(u, dtype=float).reshape(-1)
    if u.size == 0 or np.any(~(u > 0)) or np.any(u > 1):
        raise ValueError("copula arguments must lie in (0, 1]")
    if theta == 1:
        return float(np.prod(u))
    s = np.sum((-np.log(u)) ** theta)
    return float(math.exp(-s ** (1.0 / theta)))


def decompose_joint(p: float, y, theta: float) -> np.ndarray:
    theta = _check_theta(theta)
    if not 0 < p < 1:
        raise ValueError(f"joint level must lie in (0, 1), got {p}")
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.size == 0 or np.any(~(y > 0)) or abs(y.sum() - 1) > 1e-12:
        raise ValueError("weights must be positive and sum to 1")
    return np.exp(math.log(p) * y ** (1.0 / theta))


def positive_stable(alpha: float, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draws with Laplace transform ``exp(-s ** alpha)``, ``0 < alpha <= 1`` (Kanter's representation)."""
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if alpha == 1:
        return np.ones(count)
    u = rng.uniform(0.0, math.pi, count)
    w = rng.standard_exponential(count)
    a = np.sin(alpha * u) / np.sin(u) ** (1.0 / alpha)
    b = (np.sin((1.0 - alpha) * u) / w) ** ((1.0 - alpha) / alpha)
    return a * b


def sample_gumbel(count: int, m: int, theta: float, rng: np.random.Generator) -> np.ndarray:
    """``count x m`` uniforms whose joint CDF is the Gumbel-Hougaard copula (Marshall-Olkin construction)."""
    theta = _check_theta(theta)
    v = positive_stable(1.0 / theta, count, rng)
    e = rng.standard_exponential((count, m))
    return np.exp(-(e / v[:, None]) ** (1.0 / theta))


# --- k_p(y) ---------------------------------------------------------------------

@dataclass(frozen=True)
class KCase:
    """One row of the safety-factor table: ``ces`` (with a family), ``moment``, ``symmetric`` or ``norm``."""

    kind: str
    family: ces.CesFamily = field(default_factory=ces.Gaussian)

    def __post_init__(self):
        if self.kind not in ("ces", "moment", "symmetric", "norm"):
            raise ValueError(f"unknown case {self.kind!r}")

    @property
    def half_open(self) -> bool:
        return self.kind in ("ces", "symmetric")


_SPEC_CASE = {
    "moment_exact": "moment",
    "cov_bounded": "moment",
    "moments_ellipsoid": "moment",
    "data_driven": "moment",
    "moment_symmetric": "symmetric",
    "norm_support": "norm",
}


def case_of(spec_or_case) -> KCase:
    if isinstance(spec_or_case, KCase):
        return spec_or_case
    if isinstance(spec_or_case, str):
        return KCase(_SPEC_CASE.get(spec_or_case, spec_or_case))
    tag = spec_or_case.tag
    if tag == "ces":
        return KCase("ces", spec_or_case.family)
    return KCase(_SPEC_CASE[tag])


def _check_args(case: KCase, p: float, theta: float, y) -> np.ndarray:
    _check_theta(theta)
    lo_ok = p >= 0.5 if case.half_open else p > 0
    if not (lo_ok and p < 1):
        raise ValueError(f"p={p} outside the valid range for case {case.kind}")
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)) or np.any(y > 1):
        raise ValueError("y must lie in (0, 1]")
    return y


def _k_of_q(case: KCase, s):
    """Safety factor at level ``q = exp(s)``; ``s <= 0`` keeps ``1 - q`` accurate."""
    q = np.exp(s)
    one_minus = -np.expm1(s)
    if case.kind == "moment":
        return np.sqrt(q / one_minus)
    if case.kind == "symmetric":
        return 1.0 / np.sqrt(2.0 * one_minus)
    if case.kind == "norm":
        return np.sqrt(-2.0 * np.log(one_minus))
    return np.vectorize(lambda qq: ces.marginal_quantile(case.family, float(qq)))(q)


def _dk_dq(case: KCase, s, k):
    one_minus = -np.expm1(s)
    if case.kind == "moment":
        return 1.0 / (2.0 * k * one_minus ** 2)
    if case.kind == "symmetric":
        return (2.0 * one_minus) ** -1.5
    if case.kind == "norm":
        return 1.0 / (k * one_minus)
    pdf = np.vectorize(lambda kk: ces.marginal_pdf(case.family, float(kk)))(k)
    return 1.0 / pdf


def kp_y(case, p: float, theta: float, y):
    """``k`` at the individual level ``p ** (y ** (1/theta))``."""
    case = case_of(case)
    y = _check_args(case, p, theta, y)
    s = math.log(p) * y ** (1.0 / theta)
    k = _k_of_q(case, s)
    return float(k) if np.ndim(k) == 0 else k


def kp_y_prime(case, p: float, theta: float, y):
    """``d k_p(y) / dy`` in closed form (chain rule through ``q = p ** (y ** (1/theta))``)."""
    case = case_of(case)
    y = _check_args(case, p, theta, y)
    s = math.log(p) * y ** (1.0 / theta)
    k = _k_of_q(case, s)
    dq_dy = np.exp(s) * math.log(p) * y ** (1.0 / theta - 1.0) / theta
    out = _dk_dq(case, s, k) * dq_dy
    return float(out) if np.ndim(out) == 0 else out


def level_of_k(case, xi: float) -> float:
    """Inverse of the safety factor: the individual level ``q`` with ``k(q) = xi`` (0 when none)."""
    case = case_of(case)
    if case.kind == "moment":
        return 0.0 if xi <= 0 else xi * xi / (1.0 + xi * xi)
    if case.kind == "symmetric":
        return 0.0 if xi < 1 else 1.0 - 0.5 / (xi * xi)
    if case.kind == "norm":
        return 0.0 if xi <= 0 else -math.expm1(-0.5 * xi * xi)
    if math.isinf(xi):
        return 1.0 if xi > 0 else 0.0
    return ces.marginal_cdf(case.family, xi)


# --- piecewise-linear bounds --------------------------------------------------------

@dataclass(frozen=True)
class PieceCoeffs:
    alpha: np.ndarray
    beta: np.ndarray

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        return np.max(self.alpha[:, None] + self.beta[:, None] * y.reshape(1, -1), axis=0).reshape(y.shape)

    def __len__(self) -> int:
        return self.alpha.size


def _check_points(points) -> np.ndarray:
    t = np.asarray(points, dtype=float).reshape(-1)
    if t.size == 0 or np.any(~(t > 0)) or np.any(t > 1):
        raise ValueError("tangent points must lie in (0, 1]")
    if np.any(np.diff(t) <= 0):
        raise ValueError("tangent points must be strictly increasing")
    return t


def tangent_underestimator(case, p: float, theta: float, points) -> PieceCoeffs:
    t = _check_points(points)
    k = np.atleast_1d(kp_y(case, p, theta, t))
    beta = np.atleast_1d(kp_y_prime(case, p, theta, t))
    return PieceCoeffs(k - beta * t, beta)


def interp_overestimator(case, p: float, theta: float, points) -> PieceCoeffs:
    t = _check_points(points)
    if t.size < 2:
        raise ValueError("interpolation needs at least two points")
    k = np.atleast_1d(kp_y(case, p, theta, t))
    dt = np.diff(t)
    beta = np.diff(k) / dt
    alpha = (t[1:] * k[:-1] - t[:-1] * k[1:]) / dt
    return PieceCoeffs(alpha, beta)


def geometric_points(count: int, smallest: float = 1e-3) -> np.ndarray:
    """``t_l = smallest ** (1 - l / count)`` for ``l = 1..count``.

    Geometric spacing ending at 1; the set for ``2 * count`` contains the set for
    ``count``, so doubling the count refines the approximation.
    """
    if count < 1:
        raise ValueError("need at least one point")
    if not 0 < smallest < 1:
        raise ValueError("smallest point must lie in (0, 1)")
    return smallest ** (1.0 - np.arange(1, count + 1) / count)


# --- joint SOCP -------------------------------------------------------------------

class Mode(enum.Enum):
    LOWER = "lower"
    UPPER = "upper"


LIFTINGS = ("product", "reciprocal")


@dataclass(frozen=True)
class JointApproxConfig:
    """Copula parameter, piece points and approximation mode.

    ``lifting="product"`` lifts ``k_p(y_i) z~`` inside the cone (see
    :func:`build_joint_socp`); ``"reciprocal"`` (lower mode only) bounds
    ``1 / k_p(y_i)`` on the right-hand side instead (see
    :func:`build_reciprocal_socp`).
    """

    theta: float = 2.0
    tangent_points: tuple = tuple(geometric_points(20))
    mode: Mode = Mode.LOWER
    lifting: str = "product"

    def __post_init__(self):
        _check_theta(self.theta)
        t = _check_points(self.tangent_points)
        if self.mode is Mode.UPPER and t.size < 2:
            raise ValueError("upper approximation needs at least two points")
        if self.lifting not in LIFTINGS:
            raise ValueError(f"unknown lifting {self.lifting!r}; expected one of {LIFTINGS}")
        if self.lifting == "reciprocal" and self.mode is not Mode.LOWER:
            raise ValueError("the reciprocal lifting only gives a lower bound")
        object.__setattr__(self, "tangent_points", tuple(float(v) for v in t))

    @classmethod
    def geometric(cls, count: int, theta: float = 2.0, mode: Mode = Mode.LOWER, smallest: float = 1e-3,
                  lifting: str = "product"):
        return cls(theta, tuple(geometric_points(count, smallest)), mode, lifting)

    def pieces(self, case, p: float) -> PieceCoeffs:
        if self.mode is Mode.LOWER:
            return tangent_underestimator(case, p, self.theta, self.tangent_points)
        return interp_overestimator(case, p, self.theta, self.tangent_points)


@dataclass
class JointLayout:
    n: int
    m: int
    nvars: int
    r0: int
    stride: int
    aux0: int
    t_index: int | None

    def z(self, x) -> np.ndarray:
        return x[:self.n] + 1j * x[self.n:2 * self.n]

    def r(self, x, i):
        b = self.r0 + i * self.stride
        return x[b:b + 2 * self.n]

    def w(self, x, i):
        b = self.r0 + i * self.stride + 2 * self.n
        return x[b:b + 2 * self.n]

    def rho_index(self, i):
        return self.r0 + i * self.stride + 4 * self.n

    def y_index(self, i):
        return self.rho_index(i) + 1

    def y(self, x) -> np.ndarray:
        return np.array([x[self.y_index(i)] for i in range(self.m)])


def build_joint_socp(problem: Problem3CP, spec, p: float, config: JointApproxConfig) -> tuple[SocpProblem, JointLayout]:
    """Lifted SOCP over ``[X; (R_i, W_i, rho_i, y_i)_i; aux; t]``.

    ``R_i`` and ``rho_i`` stand for ``k_p(y_i) z`` and ``k_p(y_i)``, ``W_i`` for
    ``y_i z``.  Each affine piece ``(alpha, beta)`` adds
    ``R_i >= alpha X + beta W_i`` componentwise and ``rho_i >= alpha + beta y_i``.

    In lower mode this is a relaxation only up to the order structure of the
    cone: ``R_i >= k X`` componentwise lets ``||F (M R_i + v0 rho_i)||`` drop
    below ``k ||F (M X + v0)||`` when ``F M`` has mixed signs, so the bound
    stays valid but need not be tight even for ``m = 1``.
    """
    if config.lifting == "reciprocal":
        return build_reciprocal_socp(problem, spec, p, config)
    if not problem.sign_constraints:
        raise ValueError("the joint formulation requires sign constraints (Re z >= 0, Im z >= 0)")
    check_level(spec, p)
    case = case_of(spec)
    pieces = config.pieces(case, p)
    n, m = problem.n, problem.m
    nx = 2 * n
    stride = 2 * nx + 2
    r0 = nx
    models = [row_model(spec, row, i, m) for i, row in enumerate(problem.rows)]
    n_aux = sum(len(md.extras) + 1 for md in models if md.extras)
    aux0 = r0 + m * stride
    nvars = aux0 + n_aux + (1 if problem.random_objective else 0)
    layout = JointLayout(n, m, nvars, r0, stride, aux0, nvars - 1 if problem.random_objective else None)
    M, v0 = conj_stack_map(n)

    blocks = []
    aux = aux0
    for i, md in enumerate(models):
        base = r0 + i * stride
        rho = layout.rho_index(i)
        FM = md.F @ M
        Fe = md.F @ v0
        # main term: ||F (M R_i + v0 rho_i)||
        cols = np.concatenate([np.arange(base, base + nx), [rho]])
        Amain = np.hstack([FM, Fe[:, None]])
        if not md.extras:
            c = np.zeros(nvars)
            c[:nx] = -md.mean_c
            blocks.append(ConeBlock(Amain, np.zeros(Amain.shape[0]), np.zeros(Amain.shape[1]), 0.0)
                          .remapped(nvars, cols).with_rhs(c, -md.mean_d))
            continue
        terms = [(cols, Amain, np.zeros(Amain.shape[0]))]
        terms += [(np.arange(nx), A, b) for A, b in md.extras]
        lin_c = np.zeros(nvars)
        lin_c[:nx] = -md.mean_c
        for cols_j, A, b in terms:
            c = np.zeros(nvars)
            c[aux] = 1.0
            blk = ConeBlock(A, b, np.zeros(A.shape[1]), 0.0).remapped(nvars, cols_j)
            blocks.append(blk.with_rhs(c, 0.0))
            lin_c[aux] = -1.0
            aux += 1
        blocks.append(ConeBlock(np.zeros((0, nvars)), np.zeros(0), lin_c, -md.mean_d))

    objective = np.zeros(nvars)
    if problem.random_objective:
        ob = objective_cone(spec, problem.objective, float(problem.p0), n)
        blocks.append(ob.remapped(nvars, np.concatenate([np.arange(nx), [layout.t_index]])))
        objective[layout.t_index] = 1.0
    else:
        c = problem.objective
        objective[:nx] = np.concatenate([c.real, c.imag])

    # piece inequalities: alpha X_q + beta W_iq - R_iq <= 0 and beta y_i - rho_i <= -alpha
    L = len(pieces)
    rows, cols, vals, rhs = [], [], [], []
    row = 0
    q = np.arange(nx)
    for i in range(m):
        base = r0 + i * stride
        for l in range(L):
            a, b = pieces.alpha[l], pieces.beta[l]
            rr = row + q
            rows += [rr, rr, rr]
            cols += [q, base + nx + q, base + q]
            vals += [np.full(nx, a), np.full(nx, b), np.full(nx, -1.0)]
            rhs.append(np.zeros(nx))
            row += nx
            rows += [np.array([row, row])]
            cols += [np.array([layout.y_index(i), layout.rho_index(i)])]
            vals += [np.array([b, -1.0])]
            rhs.append(np.array([-a]))
            row += 1
    # lifted weights: W_i >= lo X and y_i >= lo
    lo = 0.0 if config.mode is Mode.LOWER else config.tangent_points[0]
    for i in range(m):
        base = r0 + i * stride
        rr = row + q
        rows += [rr, rr]
        cols += [q, base + nx + q]
        vals += [np.full(nx, lo), np.full(nx, -1.0)]
        rhs.append(np.zeros(nx))
        row += nx
        rows += [np.array([row])]
        cols += [np.array([layout.y_index(i)])]
        vals += [np.array([-1.0])]
        rhs.append(np.array([-lo]))
        row += 1
    G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row, nvars))
    h = np.concatenate(rhs)

    # coupling: sum_i W_i = X and sum_i y_i = 1
    erows, ecols, evals = [], [], []
    for i in range(m):
        base = r0 + i * stride
        erows += [q, [nx]]
        ecols += [base + nx + q, [layout.y_index(i)]]
        evals += [np.ones(nx), [1.0]]
    erows.append(q)
    ecols.append(q)
    evals.append(-np.ones(nx))
    E = sp.csr_matrix((np.concatenate(evals), (np.concatenate(erows), np.concatenate(ecols))), shape=(nx + 1, nvars))
    f = np.zeros(nx + 1)
    f[nx] = 1.0

    socp = SocpProblem(nvars, objective, blocks, eq=(E, f), nonneg_indices=np.arange(nx), lin_ineq=(G, h))
    return socp, layout


@dataclass
class ReciprocalLayout:
    n: int
    m: int
    nvars: int
    w_start: np.ndarray
    y_indices: np.ndarray
    t_index: int | None

    def z(self, x) -> np.ndarray:
        return x[:self.n] + 1j * x[self.n:2 * self.n]

    def w(self, x, i):
        return x[self.w_start[i]:self.w_start[i] + 2 * self.n]

    def y(self, x) -> np.ndarray:
        return np.asarray(x)[self.y_indices]


def reciprocal_factor(case, p: float, theta: float, y):
    """``g(y) = 1 / k_p(y)`` and its derivative."""
    k = np.atleast_1d(kp_y(case, p, theta, y)).astype(float)
    dk = np.atleast_1d(kp_y_prime(case, p, theta, y)).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        return 1.0 / k, -dk / (k * k)


def reciprocal_is_concave(case, p: float, theta: float, grid: int = 2001) -> bool:
    """Numerical concavity check of ``1 / k_p(y)`` on ``(0, 1]``.

    Checks that every tangent over-estimates ``g`` on a geometric grid, which is
    what the reciprocal lower bound needs.
    """
    ys = np.unique(np.concatenate([geometric_points(grid, 1e-6), np.linspace(1e-6, 1, grid)]))
    g, dg = reciprocal_factor(case, p, theta, ys)
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(dg)) and np.all(g > 0)):
        return False
    sub = ys[:: max(1, ys.size // 200)]
    gs, dgs = reciprocal_factor(case, p, theta, sub)
    over = gs[:, None] + dgs[:, None] * (ys[None, :] - sub[:, None]) - g[None, :]
    return bool(over.min() >= -1e-10 * max(1.0, g.max()))


def build_reciprocal_socp(problem: Problem3CP, spec, p: float, config: JointApproxConfig
                          ) -> tuple[SocpProblem, ReciprocalLayout]:
    """Lower-bound SOCP using tangent over-estimators of ``g = 1 / k_p``.

    Row ``i`` of the joint problem reads ``s_i <= g(y_i) S_i(X)`` with
    ``s_i = ||F (M X + v0)||`` and ``S_i = -mean_i(X) - extras_i(X) >= 0``.  For
    concave ``g`` each tangent ``g_l + g'_l (y - t_l)`` bounds ``g`` from above,
    and ``y_i S_i(X)`` equals ``S_i`` evaluated in the lifted ``(W_i, y_i)``
    (the extra norm terms become perspectives), so

        s_i + a_l E_i + g'_l Fw_i <= a_l (-mean_i(X)) + g'_l (-mean_c W_i - mean_d y_i)

    for every tangent ``a_l + g'_l y`` (``a_l = g_l - g'_l t_l``), with ``E_i >= extras_i(X)`` and
    ``Fw_i >= sum ||A W_i + b y_i||``.  The true ``(X, y, W = y X)`` satisfies
    every constraint, so the optimum is a lower bound; for ``m = 1`` it is
    exact once ``t = 1`` is a tangent point.  Requires ``g`` concave, checked
    numerically.
    """
    if not problem.sign_constraints:
        raise ValueError("the joint formulation requires sign constraints (Re z >= 0, Im z >= 0)")
    check_level(spec, p)
    case = case_of(spec)
    if not reciprocal_is_concave(case, p, config.theta):
        raise ValueError(f"1 / k_p(y) is not concave for {case} at p={p}, theta={config.theta}; "
                         "use the product lifting")
    t = np.asarray(config.tangent_points)
    g, dg = reciprocal_factor(case, p, config.theta, t)
    # tangent l: g_l + g'_l (y - t_l) = icpt_l + g'_l y
    icpt = g - dg * t
    n, m = problem.n, problem.m
    nx = 2 * n
    models = [row_model(spec, row, i, m) for i, row in enumerate(problem.rows)]
    # per row: W_i (nx), y_i, s_i, one aux per extra term for X and one for W
    sizes = [nx + 2 + 2 * len(md.extras) for md in models]
    starts = nx + np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(int)
    nvars = nx + int(sum(sizes)) + (1 if problem.random_objective else 0)
    t_index = nvars - 1 if problem.random_objective else None
    layout = ReciprocalLayout(n, m, nvars, starts, starts + nx, t_index)
    M, v0 = conj_stack_map(n)
    q = np.arange(nx)

    blocks = []
    rows, cols, vals, rhs = [], [], [], []
    row = 0
    for i, md in enumerate(models):
        w0 = int(starts[i])
        yi, si = w0 + nx, w0 + nx + 1
        ne = len(md.extras)
        e_idx = w0 + nx + 2 + np.arange(ne)
        f_idx = e_idx + ne
        c = np.zeros(nvars)
        c[si] = 1.0
        blocks.append(ConeBlock(md.F @ M, md.F @ v0, np.zeros(nx), 0.0).remapped(nvars, q).with_rhs(c, 0.0))
        for e, (A, b) in enumerate(md.extras):
            c = np.zeros(nvars)
            c[e_idx[e]] = 1.0
            blocks.append(ConeBlock(A, b, np.zeros(nx), 0.0).remapped(nvars, q).with_rhs(c, 0.0))
            c = np.zeros(nvars)
            c[f_idx[e]] = 1.0
            Aw = np.hstack([A, b[:, None]])
            blocks.append(ConeBlock(Aw, np.zeros(A.shape[0]), np.zeros(nx + 1), 0.0)
                          .remapped(nvars, np.concatenate([w0 + q, [yi]])).with_rhs(c, 0.0))
        for gl, dgl in zip(icpt, dg):
            rr = np.full(nx, row)
            rows += [rr, rr, np.full(2 + 2 * ne, row)]
            cols += [q, w0 + q, np.concatenate([[si, yi], e_idx, f_idx])]
            vals += [gl * md.mean_c, dgl * md.mean_c,
                     np.concatenate([[1.0, dgl * md.mean_d], np.full(ne, gl), np.full(ne, dgl)])]
            rhs.append(np.array([-gl * md.mean_d]))
            row += 1
        # W_i <= X
        rr = row + q
        rows += [rr, rr]
        cols += [w0 + q, q]
        vals += [np.ones(nx), -np.ones(nx)]
        rhs.append(np.zeros(nx))
        row += nx
    G = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row, nvars))
    h = np.concatenate(rhs)

    objective = np.zeros(nvars)
    if problem.random_objective:
        ob = objective_cone(spec, problem.objective, float(problem.p0), n)
        blocks.append(ob.remapped(nvars, np.concatenate([q, [t_index]])))
        objective[t_index] = 1.0
    else:
        c = problem.objective
        objective[:nx] = np.concatenate([c.real, c.imag])

    erows, ecols, evals = [], [], []
    for i in range(m):
        w0 = int(starts[i])
        erows += [q, [nx]]
        ecols += [w0 + q, [w0 + nx]]
        evals += [np.ones(nx), [1.0]]
    erows.append(q)
    ecols.append(q)
    evals.append(-np.ones(nx))
    E = sp.csr_matrix((np.concatenate(evals), (np.concatenate(erows), np.concatenate(ecols))), shape=(nx + 1, nvars))
    f = np.zeros(nx + 1)
    f[nx] = 1.0
    nonneg = np.concatenate([q] + [np.arange(int(w0), int(w0) + nx + 1) for w0 in starts])
    socp = SocpProblem(nvars, objective, blocks, eq=(E, f), nonneg_indices=nonneg, lin_ineq=(G, h))
    return socp, layout


@dataclass
class JointResult:
    """Lifted SOCP outcome plus a feasible point of the exact joint problem.

    ``objective`` is the lifted SOCP value.  ``certified`` says whether the
    SOCP's own ``z`` satisfies the exact joint constraint (``sum(y_min) <= 1``).
    ``feasible_objective``/``feasible_z`` come from re-solving the individual
    problem at the levels implied by the SOCP weights ``y`` and then
    :func:`descend_weights`; that point is always feasible, so its value is a
    valid upper bound.
    """

    z: np.ndarray | None
    objective: float
    y: np.ndarray | None
    mode: Mode
    solution: SocpSolution
    y_min: np.ndarray | None = None
    certified: bool | None = None
    feasible_objective: float = math.inf
    feasible_z: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.solution.optimal

    @property
    def upper_bound(self) -> float:
        """Smallest objective among points known to satisfy the exact joint constraint."""
        own = self.objective if self.certified else math.inf
        return min(own, self.feasible_objective)

    @property
    def lower_bound(self) -> float:
        if self.mode is not Mode.LOWER:
            raise ValueError("only the tangent approximation gives a lower bound")
        return self.objective


def row_margins(problem: Problem3CP, spec, z) -> list[tuple[float, float]]:
    """Per row ``(mean + extra terms, sigma)`` of the deterministic counterpart at ``z``."""
    z = np.asarray(z, dtype=complex)
    X = np.concatenate([z.real, z.imag])
    M, v0 = conj_stack_map(problem.n)
    out = []
    for i, row in enumerate(problem.rows):
        md = row_model(spec, row, i, problem.m)
        mean = float(md.mean_c @ X + md.mean_d + sum(np.linalg.norm(A @ X + b) for A, b in md.extras))
        out.append((mean, float(np.linalg.norm(md.F @ (M @ X + v0)))))
    return out


def minimal_weights(problem: Problem3CP, spec, p: float, theta: float, z) -> np.ndarray:
    """Smallest ``y_i`` with ``mean_i + k_p(y_i) sigma_i <= 0`` (``inf`` when no level works)."""
    case = case_of(spec)
    out = []
    for mean, sigma in row_margins(problem, spec, z):
        if sigma <= 0:
            out.append(0.0 if mean <= 1e-12 else math.inf)
            continue
        q = level_of_k(case, -mean / sigma)
        if q <= 0:
            out.append(math.inf)
        elif q >= 1:
            out.append(0.0)
        else:
            out.append((math.log(q) / math.log(p)) ** theta)
    return np.array(out)


def certify_joint(problem: Problem3CP, spec, p: float, theta: float, z, tol: float = 1e-7) -> tuple[bool, np.ndarray]:
    """Whether ``z`` is feasible for the exact joint problem for some simplex weights."""
    ymin = minimal_weights(problem, spec, p, theta, z)
    return bool(np.all(np.isfinite(ymin)) and ymin.sum() <= 1 + tol), ymin


def _simplex_weights(y) -> np.ndarray:
    y = np.maximum(np.asarray(y, dtype=float), 1e-12)
    return y / y.sum()


def solve_at_weights(problem: Problem3CP, spec, p: float, theta: float, y,
                     tol: float = 1e-8, backend: str = "reference") -> Solved:
    """Individual problem at the levels ``decompose_joint(p, y, theta)``."""
    levels = decompose_joint(p, _simplex_weights(y), theta)
    sub = Problem3CP(problem.n, problem.objective, problem.rows, levels, problem.p0, True)
    return solve_individual(sub, spec, tol=tol, backend=backend)


def descend_weights(problem: Problem3CP, spec, p: float, theta: float, y0, max_rounds: int = 40,
                    tol: float = 1e-8, backend: str = "reference") -> tuple[Solved, np.ndarray]:
    """Local descent over simplex weights; every iterate is feasible for the joint problem.

    The optimal value ``V(y)`` of the individual problem at levels
    ``decompose_joint(p, y, theta)`` has ``dV/dy_i = (dV/dk_i) k_p'(y_i)``, with
    ``dV/dk_i`` read off the cone multipliers.  Steps are multiplicative
    (exponentiated gradient) with backtracking, accepted only when ``V``
    decreases, so the returned value never exceeds ``V(y0)``.
    """
    case = case_of(spec)
    y = _simplex_weights(y0)
    best = solve_at_weights(problem, spec, p, theta, y, tol=tol, backend=backend)
    if not best.ok or problem.m == 1:
        return best, y
    eta = 1.0
    for _ in range(max_rounds):
        grad = best.k_sensitivity * np.atleast_1d(kp_y_prime(case, p, theta, y))
        span = np.abs(grad).max()
        if not np.isfinite(span) or span == 0:
            break
        # the gradient projected on the simplex tangent space is what can be improved
        if np.abs(grad - y @ grad).max() <= 1e-9 * span:
            break
        improved = False
        while eta >= 1.0 / 256:
            y_new = _simplex_weights(y * np.exp(-eta * grad / span))
            res = solve_at_weights(problem, spec, p, theta, y_new, tol=tol, backend=backend)
            if res.ok and res.objective < best.objective - 1e-10 * (1 + abs(best.objective)):
                best, y = res, y_new
                improved = True
                eta = min(2.0 * eta, 4.0)
                break
            eta /= 2.0
        if not improved:
            break
    return best, y


def solve_joint(problem: Problem3CP, spec, p: float, config: JointApproxConfig,
                tol: float = 1e-8, backend: str = "reference", descent_rounds: int = 40) -> JointResult:
    socp, layout = build_joint_socp(problem, spec, p, config)
    sol = solve(socp, tol=tol, backend=backend)
    if not sol.optimal:
        return JointResult(None, sol.objective_value, None, config.mode, sol)
    z = layout.z(sol.x)
    y = layout.y(sol.x)
    ok, ymin = certify_joint(problem, spec, p, config.theta, z, tol=max(1e-7, 100 * tol))
    res = JointResult(z, sol.objective_value, y, config.mode, sol, ymin, ok)
    feas, _ = descend_weights(problem, spec, p, config.theta, y, max_rounds=descent_rounds, tol=tol, backend=backend)
    if feas.ok:
        res.feasible_objective, res.feasible_z = feas.objective, feas.z
    return res


def grid_oracle(problem: Problem3CP, spec, p: float, theta: float, points: int = 200,
                tol: float = 1e-8, backend: str = "reference", refine: bool = True):
    """Joint optimum for ``m = 2`` by scanning ``y_1`` over ``points`` interior grid values.

    Each grid value fixes the individual levels, leaving one convex solve.  With
    ``refine`` a bounded scalar search then polishes ``y_1`` inside the best
    grid cell.  Returns ``(best objective, best y, best z)``.
    """
    if problem.m != 2:
        raise ValueError("grid oracle supports exactly two rows")
    grid = np.linspace(0.0, 1.0, points + 2)
    cache = {}

    def value(y1):
        res = solve_at_weights(problem, spec, p, theta, [y1, 1.0 - y1], tol=tol, backend=backend)
        cache[y1] = res
        return res.objective if res.ok else math.inf

    vals = np.array([value(y1) for y1 in grid[1:-1]])
    k = int(np.argmin(vals)) + 1
    if refine and np.isfinite(vals[k - 1]):
        out = optimize.minimize_scalar(value, bounds=(grid[k - 1], grid[k + 1]), method="bounded",
                                       options={"xatol": 1e-10})
        del out
    y1 = min((y for y in cache if cache[y].ok), key=lambda y: cache[y].objective, default=None)
    if y1 is None:
        return math.inf, None, None
    return cache[y1].objective, np.array([y1, 1.0 - y1]), cache[y1].z
