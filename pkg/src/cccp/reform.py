"""Deterministic SOCP counterparts of individual complex chance constraints.

Every constraint ``P[Re(a z) - b <= 0] >= p`` is written through the row
vector ``d = [a, -b]`` and ``z~ = [z; 1]`` as ``Re(d z~) <= 0``.  Each
uncertainty model then yields

    mean(z) + k * sqrt(v' K v) + (extra norms) <= 0,      v = [Re z~; -Im z~]

where ``K`` is a real ``2(n+1)`` PSD matrix (the augmented covariance of ``d``
for the moment models, ``diag(l^2, l^2)`` for the norm-bounded model) and
``k`` the model's safety factor.  Decision variables are always stacked as
``X = [Re z; Im z]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import math

import numpy as np
import scipy.sparse as sp

from . import ces
from .complex_core import (
    ConstraintRow,
    MomentError,
    MomentTriple,
    augmented_covariance,
    check_moment_triple,
    psd_factor,
)
from .solver import ConeBlock, SocpProblem, SocpSolution, block_duals, solve


# --- uncertainty models -------------------------------------------------------

@dataclass(frozen=True)
class CesKnown:
    family: ces.CesFamily = field(default_factory=ces.Gaussian)
    tag = "ces"


@dataclass(frozen=True)
class MomentExact:
    tag = "moment_exact"


@dataclass(frozen=True)
class MomentSymmetric:
    tag = "moment_symmetric"


def _per_row(items, m, what):
    items = tuple(items) if isinstance(items, (list, tuple)) else (items,)
    if len(items) == 1:
        return items * m
    if len(items) != m:
        raise ValueError(f"{what}: expected 1 or {m} per-row entries, got {len(items)}")
    return items


@dataclass(frozen=True)
class CovBounded:
    """Known mean; covariance of ``[Re d; Im d]`` (``d = [a, b]``) bounded by ``L`` (one per row or shared)."""

    L: tuple
    tag = "cov_bounded"

    def __post_init__(self):
        Ls = self.L if isinstance(self.L, (list, tuple)) else (self.L,)
        Ls = tuple(np.asarray(L, dtype=float) for L in Ls)
        for L in Ls:
            if L.ndim != 2 or L.shape[0] != L.shape[1] or L.shape[0] % 2:
                raise ValueError(f"covariance bound must be square of even size, got {L.shape}")
            if not np.allclose(L, L.T, atol=1e-10 * max(1.0, np.abs(L).max())):
                raise ValueError("covariance bound must be symmetric")
            eig = np.linalg.eigvalsh((L + L.T) / 2)
            if eig[0] < -1e-9 * max(abs(eig[-1]), 1.0):
                raise ValueError(f"covariance bound not PSD (min eigenvalue {eig[0]:.3g})")
        object.__setattr__(self, "L", Ls)


@dataclass(frozen=True)
class MomentsEllipsoid:
    """Mean in the ellipsoid ``(mu - mu_hat)^H cov_hat^-1 (mu - mu_hat) <= zeta``; covariance bounded by ``(cov_hat, pcov_hat)``.

    ``estimates`` holds one :class:`MomentTriple` of ``d = [a, b]`` per row (or one shared).
    """

    zeta: float
    estimates: tuple
    tag = "moments_ellipsoid"

    def __post_init__(self):
        if not (self.zeta >= 0):
            raise ValueError("zeta must be >= 0")
        est = self.estimates if isinstance(self.estimates, (list, tuple)) else (self.estimates,)
        for e in est:
            check_moment_triple(e)
            lam = np.linalg.eigvalsh((e.cov + e.cov.conj().T) / 2)
            if lam[0] < 1e-10 * max(lam[-1], 1e-300):
                raise MomentError(f"estimated covariance must be positive definite (min eigenvalue {lam[0]:.3g})")
        object.__setattr__(self, "estimates", tuple(est))


@dataclass(frozen=True)
class NormSupport:
    """Known mean; independent zero-mean deviations with ``|d_j - mu_j| <= l_j`` (``j = 1..n+1``).

    Conservative: the reformulation is a sufficient condition only.
    """

    l: np.ndarray
    tag = "norm_support"
    conservative = True

    def __post_init__(self):
        l = np.asarray(self.l, dtype=float).reshape(-1)
        if l.size == 0 or np.any(~(l > 0)):
            raise ValueError("norm bounds must all be > 0")
        object.__setattr__(self, "l", l)


@dataclass(frozen=True)
class DataDriven:
    """Empirical moments of ``d = [a, b]`` with concentration radii ``r1``, ``r2``.

    Estimates and radii are each one per row or one shared value.
    """

    estimates: tuple
    r1: float | tuple = 0.0
    r2: float | tuple = 0.0
    tag = "data_driven"

    def __post_init__(self):
        for name in ("r1", "r2"):
            v = getattr(self, name)
            v = tuple(float(x) for x in v) if isinstance(v, (list, tuple, np.ndarray)) else float(v)
            if not all(x >= 0 for x in (v if isinstance(v, tuple) else (v,))):
                raise ValueError("radii must be >= 0")
            object.__setattr__(self, name, v)
        est = self.estimates if isinstance(self.estimates, (list, tuple)) else (self.estimates,)
        for e in est:
            check_moment_triple(e)
        object.__setattr__(self, "estimates", tuple(est))


AmbiguitySpec = CesKnown | MomentExact | MomentSymmetric | CovBounded | MomentsEllipsoid | NormSupport | DataDriven

HALF_OPEN = {"ces", "moment_symmetric"}


def p_range(spec) -> tuple[float, bool]:
    """``(lower, inclusive)`` for the valid probability range; the upper end is always 1 exclusive."""
    return (0.5, True) if spec.tag in HALF_OPEN else (0.0, False)


def check_level(spec, p: float) -> None:
    lo, inclusive = p_range(spec)
    ok = (p >= lo if inclusive else p > lo) and p < 1
    if not ok:
        bracket = "[" if inclusive else "("
        raise ValueError(f"probability {p} outside {bracket}{lo}, 1) for {spec.tag}")


def safety_factor(spec, p: float) -> float:
    check_level(spec, p)
    tag = spec.tag
    if tag == "ces":
        return ces.marginal_quantile(spec.family, p)
    if tag == "moment_symmetric":
        return 1.0 / math.sqrt(2.0 * (1.0 - p))
    if tag == "norm_support":
        return math.sqrt(-2.0 * math.log1p(-p))
    return math.sqrt(p / (1.0 - p))


# --- problem data -------------------------------------------------------------

@dataclass
class Problem3CP:
    """``min Re(c^H z)`` s.t. ``P[Re(a_i z) - b_i <= 0] >= p_i``.

    ``objective`` is a complex vector (deterministic) or a :class:`MomentTriple`
    (random, handled through the epigraph at level ``p0``).
    """

    n: int
    objective: np.ndarray | MomentTriple
    rows: list[ConstraintRow]
    levels: np.ndarray
    p0: float | None = None
    sign_constraints: bool = False

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=float).reshape(-1)
        if self.levels.size == 1 and len(self.rows) > 1:
            self.levels = np.full(len(self.rows), self.levels[0])
        if self.levels.size != len(self.rows):
            raise ValueError("one probability level per row required")
        if isinstance(self.objective, MomentTriple):
            check_moment_triple(self.objective)
            if self.objective.n != self.n:
                raise ValueError("objective dimension mismatch")
            if self.p0 is None:
                raise ValueError("random objective requires p0")
        else:
            self.objective = np.asarray(self.objective, dtype=complex).reshape(-1)
            if self.objective.size != self.n:
                raise ValueError("objective dimension mismatch")
        for i, row in enumerate(self.rows):
            if row.n != self.n:
                raise ValueError(f"row {i} has dimension {row.n}, expected {self.n}")
            check_moment_triple(row.a_moments)

    @property
    def m(self) -> int:
        return len(self.rows)

    @property
    def random_objective(self) -> bool:
        return isinstance(self.objective, MomentTriple)

    def check_levels(self, spec) -> None:
        for p in self.levels:
            check_level(spec, float(p))
        if self.random_objective:
            check_level(spec, float(self.p0))


# --- building blocks ----------------------------------------------------------

def _flip_b(m: MomentTriple) -> MomentTriple:
    """Moments of ``[a; -b]`` from moments of ``[a; b]``."""
    D = np.ones(m.n)
    D[-1] = -1.0
    return m.affine(np.diag(D))


def _flip_b_real(L: np.ndarray) -> np.ndarray:
    k = L.shape[0] // 2
    D = np.ones(2 * k)
    D[k - 1] = D[2 * k - 1] = -1.0
    return L * np.outer(D, D)


def conj_stack_map(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``(M, v0)`` with ``[Re z~; -Im z~] = M X + v0`` for ``X = [Re z; Im z]``, ``z~ = [z; 1]``."""
    M = np.zeros((2 * (n + 1), 2 * n))
    M[:n, :n] = np.eye(n)
    M[n + 1:2 * n + 1, n:] = -np.eye(n)
    v0 = np.zeros(2 * (n + 1))
    v0[n] = 1.0
    return M, v0


def real_stack_map(n: int) -> tuple[np.ndarray, np.ndarray]:
    """``(M, v0)`` with ``[Re z~; Im z~] = M X + v0``."""
    M = np.zeros((2 * (n + 1), 2 * n))
    M[:n, :n] = np.eye(n)
    M[n + 1:2 * n + 1, n:] = np.eye(n)
    v0 = np.zeros(2 * (n + 1))
    v0[n] = 1.0
    return M, v0


@dataclass
class RowModel:
    """``mean_c @ X + mean_d + k * ||F v|| + sum ||A_e X + b_e|| <= 0``."""

    mean_c: np.ndarray
    mean_d: float
    F: np.ndarray
    extras: list[tuple[np.ndarray, np.ndarray]]
    label: str = ""


def row_model(spec, row: ConstraintRow, index: int, m: int) -> RowModel:
    n = row.n
    tag = spec.tag
    if tag in ("ces", "moment_exact", "moment_symmetric", "norm_support"):
        d = row.d_moments()
    elif tag == "cov_bounded":
        d = row.d_moments()
    elif tag == "moments_ellipsoid":
        d = _flip_b(_per_row(spec.estimates, m, "estimates")[index])
    elif tag == "data_driven":
        d = _flip_b(_per_row(spec.estimates, m, "estimates")[index])
    else:
        raise TypeError(f"unknown ambiguity spec {spec!r}")
    if d.n != n + 1:
        raise ValueError(f"row {index}: moments for d must have dimension {n + 1}, got {d.n}")
    mu = d.mean
    mean_c = np.concatenate([mu.real[:n], -mu.imag[:n]])
    mean_d = float(mu.real[n])
    extras = []
    if tag == "norm_support":
        l = spec.l
        if l.size != n + 1:
            raise ValueError(f"norm bounds need {n + 1} entries, got {l.size}")
        K = np.diag(np.concatenate([l, l]) ** 2)
    elif tag == "cov_bounded":
        L = _per_row(spec.L, m, "L")[index]
        if L.shape[0] != 2 * (n + 1):
            raise ValueError(f"row {index}: covariance bound must be {2 * (n + 1)} square")
        K = _flip_b_real(L)
    elif tag == "data_driven":
        eye = np.eye(n + 1)
        r1 = _per_row(spec.r1, m, "r1")[index]
        r2 = _per_row(spec.r2, m, "r2")[index]
        K = augmented_covariance(d.cov + r2 * eye, d.pcov + r2 * eye)
        if r1 > 0:
            Mr, v0r = real_stack_map(n)
            extras.append((r1 * Mr, r1 * v0r))
    else:
        K = augmented_covariance(d.cov, d.pcov)
    if tag == "moments_ellipsoid" and spec.zeta > 0:
        M, v0 = conj_stack_map(n)
        F0 = psd_factor(augmented_covariance(d.cov, np.zeros_like(d.cov)))
        scale = math.sqrt(2.0 * spec.zeta)
        extras.append((scale * F0 @ M, scale * F0 @ v0))
    return RowModel(mean_c, mean_d, psd_factor(K), extras, label=f"row{index}:{tag}")


@dataclass
class RowCones:
    """Cone blocks over ``[X; aux]`` (``2n + n_aux`` columns) for one row."""

    blocks: list[ConeBlock]
    n_aux: int


def _norm_sum_blocks(main, extras, mean_c, mean_d, nx: int) -> RowCones:
    """``||main|| + sum ||extras|| <= -(mean_c @ X + mean_d)`` as cone blocks over ``[X; aux]``."""
    A0, b0 = main
    if not extras:
        return RowCones([ConeBlock(A0, b0, -mean_c, -mean_d)], 0)
    terms = [main] + list(extras)
    n_aux = len(terms)
    width = nx + n_aux
    blocks = []
    for j, (A, b) in enumerate(terms):
        Ap = np.hstack([A, np.zeros((A.shape[0], n_aux))])
        c = np.zeros(width)
        c[nx + j] = 1.0
        blocks.append(ConeBlock(Ap, b, c, 0.0))
    c = np.zeros(width)
    c[:nx] = -mean_c
    c[nx:] = -1.0
    blocks.append(ConeBlock(np.zeros((0, width)), np.zeros(0), c, -mean_d))
    return RowCones(blocks, n_aux)


def reformulate_constraint(spec, row: ConstraintRow, p: float, n: int, index: int = 0, m: int = 1) -> RowCones:
    """Cone blocks over ``[Re z; Im z; aux]`` whose feasible set implies the chance constraint."""
    if row.n != n:
        raise ValueError(f"row dimension {row.n} differs from n={n}")
    k = safety_factor(spec, p)
    model = row_model(spec, row, index, m)
    M, v0 = conj_stack_map(n)
    main = (k * model.F @ M, k * model.F @ v0)
    return _norm_sum_blocks(main, model.extras, model.mean_c, model.mean_d, 2 * n)


def objective_cone(spec, c_moments: MomentTriple, p0: float, n: int) -> ConeBlock:
    """``mean + k sigma <= t`` for ``Re(c^H z)``, over ``[X; t]``."""
    k = safety_factor(spec, p0)
    K = c_moments.augmented()
    F = psd_factor(K)
    A = np.hstack([k * F, np.zeros((F.shape[0], 1))])
    mu = c_moments.mean
    c = np.concatenate([-mu.real, -mu.imag, [1.0]])
    return ConeBlock(A, np.zeros(F.shape[0]), c, 0.0)


def _objective_vector(problem: Problem3CP) -> np.ndarray:
    c = problem.objective
    return np.concatenate([c.real, c.imag])


@dataclass
class Layout:
    """Where things live in the SOCP variable vector."""

    n: int
    nvars: int
    t_index: int | None = None
    extra: dict = field(default_factory=dict)

    def z(self, x) -> np.ndarray:
        x = np.asarray(x)
        return x[:self.n] + 1j * x[self.n:2 * self.n]


def reformulate_problem(problem: Problem3CP, spec) -> tuple[SocpProblem, Layout]:
    problem.check_levels(spec)
    n = problem.n
    nx = 2 * n
    row_cones = [reformulate_constraint(spec, row, float(p), n, i, problem.m)
                 for i, (row, p) in enumerate(zip(problem.rows, problem.levels))]
    main_blocks = []
    n_aux = sum(rc.n_aux for rc in row_cones)
    nvars = nx + n_aux + (1 if problem.random_objective else 0)
    blocks = []
    offset = nx
    for rc in row_cones:
        # the k-scaled term is always the first block of a row
        main_blocks.append(len(blocks))
        cols = np.concatenate([np.arange(nx), np.arange(offset, offset + rc.n_aux)])
        blocks.extend(b.remapped(nvars, cols) if rc.n_aux else b.padded(nvars) for b in rc.blocks)
        offset += rc.n_aux
    objective = np.zeros(nvars)
    t_index = None
    if problem.random_objective:
        t_index = nvars - 1
        ob = objective_cone(spec, problem.objective, float(problem.p0), n)
        blocks.append(ob.remapped(nvars, np.concatenate([np.arange(nx), [t_index]])))
        objective[t_index] = 1.0
    else:
        objective[:nx] = _objective_vector(problem)
    nonneg = np.arange(nx) if problem.sign_constraints else np.zeros(0, dtype=int)
    socp = SocpProblem(nvars, objective, blocks, nonneg_indices=nonneg)
    return socp, Layout(n, nvars, t_index, {"main_blocks": main_blocks})


@dataclass
class Solved:
    z: np.ndarray
    objective: float
    solution: SocpSolution
    # d(optimal value) / d(safety factor of row i), from the cone multipliers
    k_sensitivity: np.ndarray | None = None

    @property
    def ok(self) -> bool:
        return self.solution.optimal


def solve_individual(problem: Problem3CP, spec, tol: float = 1e-8, backend: str = "reference") -> Solved:
    socp, layout = reformulate_problem(problem, spec)
    sol = solve(socp, tol=tol, backend=backend)
    z = layout.z(sol.x) if sol.x is not None else None
    sens = None
    if sol.optimal and sol.z is not None:
        duals = block_duals(socp, sol.z)
        sens = np.empty(problem.m)
        for i, (bi, p) in enumerate(zip(layout.extra["main_blocks"], problem.levels)):
            blk = socp.cone_blocks[bi]
            k = safety_factor(spec, float(p))
            # the block is ||k (F v)|| <= ..., so its k-derivative pairs the multiplier with F v
            fv = (blk.A @ sol.x + blk.b) / k if k > 0 else np.zeros(blk.b.size)
            sens[i] = -float(duals[bi][1:] @ fv)
    return Solved(z, sol.objective_value, sol, sens)


def chance_lhs(spec, row: ConstraintRow, p: float, z, index: int = 0, m: int = 1) -> float:
    """Left-hand side of the deterministic counterpart evaluated directly at ``z`` (``<= 0`` means satisfied)."""
    z = np.asarray(z, dtype=complex)
    n = row.n
    model = row_model(spec, row, index, m)
    X = np.concatenate([z.real, z.imag])
    M, v0 = conj_stack_map(n)
    val = model.mean_c @ X + model.mean_d + safety_factor(spec, p) * np.linalg.norm(model.F @ (M @ X + v0))
    for A, b in model.extras:
        val += np.linalg.norm(A @ X + b)
    return float(val)


def as_sparse(block: ConeBlock) -> ConeBlock:
    return ConeBlock(sp.csr_matrix(block.A), block.b, block.c, block.d)
