"""SOCP solving with pluggable backends.

``solve(problem, tol, backend="reference")`` dispatches to a registered
backend.  The built-in ``"reference"`` backend is the interior point method in
:mod:`cccp.solver.ipm`; ``"cvxpy"`` hands the problem to cvxpy/Clarabel and is
mostly useful as a cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp

from . import ipm
from .problem import ConeBlock, SocpProblem, SocpSolution, Status, conic_form

__all__ = [
    "ConeBlock", "SocpProblem", "SocpSolution", "Status", "Residuals",
    "solve", "residuals", "register_backend", "backends", "conic_form", "block_duals",
]

DEFAULT_TOL = 1e-8

_BACKENDS: dict[str, Callable[[SocpProblem, float], SocpSolution]] = {}


def register_backend(name: str, fn: Callable[[SocpProblem, float], SocpSolution]) -> None:
    _BACKENDS[name] = fn


def backends() -> list[str]:
    return sorted(_BACKENDS)


def solve(p: SocpProblem, tol: float = DEFAULT_TOL, backend: str = "reference") -> SocpSolution:
    try:
        fn = _BACKENDS[backend]
    except KeyError:
        raise ValueError(f"unknown SOCP backend {backend!r}; available: {backends()}") from None
    return fn(p, tol)


@dataclass(frozen=True)
class Residuals:
    primal: float
    dual: float
    gap: float
    cone_violation: float


def residuals(p: SocpProblem, x, y=None, z=None) -> Residuals:
    """Re-evaluate a candidate directly on the problem's blocks.

    ``primal`` is the worst equality residual or constraint violation relative
    to ``1 + max |rhs data|``.  With duals (``z`` ordered like
    :func:`conic_form` rows), ``dual`` is the stationarity residual plus dual
    cone violation relative to ``1 + max |objective|`` and ``gap`` the
    primal-dual objective gap relative to ``1 + |objective value|``; without
    duals both are NaN.
    """
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.size != p.nvars:
        raise ValueError(f"dimension mismatch: problem has {p.nvars} variables, x has {x.size}")
    data = [0.0]
    viol = 0.0
    eq_res = 0.0
    if p.nonneg_indices.size:
        viol = max(viol, float(np.max(-x[p.nonneg_indices], initial=0.0)))
    if p.lin_ineq is not None:
        G, h = p.lin_ineq
        viol = max(viol, float(np.max(G @ x - h, initial=0.0)))
        data.append(np.abs(h).max(initial=0.0))
    for blk in p.cone_blocks:
        viol = max(viol, blk.violation(x))
        data.append(abs(blk.d))
        data.append(np.abs(blk.b).max(initial=0.0))
    if p.eq is not None:
        E, f = p.eq
        eq_res = float(np.abs(E @ x - f).max())
        data.append(np.abs(f).max())
    scale = 1.0 + max(data)
    primal = max(viol, eq_res) / scale
    if z is None:
        return Residuals(primal, float("nan"), float("nan"), viol)

    z = np.asarray(z, dtype=float)
    y = np.zeros(0) if y is None else np.asarray(y, dtype=float)
    grad = p.objective.copy()
    dobj = 0.0
    dual_viol = 0.0
    k = 0
    if p.nonneg_indices.size:
        zk = z[k:k + p.nonneg_indices.size]
        np.add.at(grad, p.nonneg_indices, -zk)
        dual_viol = max(dual_viol, float(np.max(-zk, initial=0.0)))
        k += zk.size
    if p.lin_ineq is not None:
        G, h = p.lin_ineq
        zk = z[k:k + h.size]
        grad += G.T @ zk
        dobj -= h @ zk
        dual_viol = max(dual_viol, float(np.max(-zk, initial=0.0)))
        k += h.size
    soc = []
    for blk in p.cone_blocks:
        if blk.b.size == 0:
            zk = z[k]
            grad -= blk.c * zk
            dobj -= blk.d * zk
            dual_viol = max(dual_viol, -zk)
            k += 1
        else:
            soc.append(blk)
    for blk in soc:
        z0, z1 = z[k], z[k + 1:k + blk.dim]
        grad -= blk.c * z0 + blk.A.T @ z1
        dobj -= blk.d * z0 + blk.b @ z1
        dual_viol = max(dual_viol, float(np.linalg.norm(z1) - z0))
        k += blk.dim
    if p.eq is not None:
        E, f = p.eq
        grad += E.T @ y
        dobj -= f @ y
    cscale = 1.0 + np.abs(p.objective).max(initial=0.0)
    dual = max(float(np.abs(grad).max()), dual_viol) / cscale
    pobj = float(p.objective @ x)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    return Residuals(primal, dual, gap, viol)


def block_duals(p: SocpProblem, z) -> list[np.ndarray]:
    """Split a cone multiplier vector (``conic_form`` order) into one array per cone block."""
    z = np.asarray(z, dtype=float)
    k = p.nonneg_indices.size + (p.lin_ineq[1].size if p.lin_ineq is not None else 0)
    out: list[np.ndarray | None] = [None] * len(p.cone_blocks)
    for i, blk in enumerate(p.cone_blocks):
        if blk.b.size == 0:
            out[i] = z[k:k + 1]
            k += 1
    for i, blk in enumerate(p.cone_blocks):
        if blk.b.size:
            out[i] = z[k:k + blk.dim]
            k += blk.dim
    if k != z.size:
        raise ValueError(f"multiplier length {z.size} does not match the problem ({k})")
    return out


def _reference(p: SocpProblem, tol: float) -> SocpSolution:
    return ipm.solve(p, tol=tol)


def _cvxpy(p: SocpProblem, tol: float) -> SocpSolution:
    import cvxpy as cp

    x = cp.Variable(p.nvars)
    cons = []
    if p.nonneg_indices.size:
        cons.append(x[p.nonneg_indices] >= 0)
    if p.lin_ineq is not None:
        G, h = p.lin_ineq
        cons.append(G @ x <= h)
    lin_blocks = [b for b in p.cone_blocks if b.b.size == 0]
    soc_blocks = [b for b in p.cone_blocks if b.b.size]
    lin_cons = [blk.c @ x + blk.d >= 0 for blk in lin_blocks]
    soc_cons = [cp.SOC(blk.c @ x + blk.d, blk.A @ x + blk.b) for blk in soc_blocks]
    eq_cons = []
    if p.eq is not None:
        E, f = p.eq
        eq_cons.append(E @ x == f)
    prob = cp.Problem(cp.Minimize(p.objective @ x), cons + lin_cons + soc_cons + eq_cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=tol, tol_gap_rel=tol, tol_feas=tol)
    if prob.status in (cp.INFEASIBLE, cp.INFEASIBLE_INACCURATE):
        return SocpSolution(np.full(p.nvars, np.nan), float("inf"), Status.INFEASIBLE,
                            float("inf"), float("nan"), float("nan"))
    if prob.status in (cp.UNBOUNDED, cp.UNBOUNDED_INACCURATE):
        return SocpSolution(np.full(p.nvars, np.nan), float("-inf"), Status.UNBOUNDED,
                            float("nan"), float("inf"), float("nan"))
    xv = np.asarray(x.value, dtype=float)
    z = []
    if p.nonneg_indices.size:
        z.append(np.asarray(cons[0].dual_value, dtype=float).reshape(-1))
    if p.lin_ineq is not None:
        z.append(np.asarray(cons[-1].dual_value, dtype=float).reshape(-1))
    z.extend(np.atleast_1d(np.asarray(c.dual_value, dtype=float)) for c in lin_cons)
    for c in soc_cons:
        t, X = c.dual_value
        z.append(np.concatenate([np.atleast_1d(t).astype(float), np.asarray(X, dtype=float).reshape(-1)]))
    y = np.asarray(eq_cons[0].dual_value, dtype=float).reshape(-1) if eq_cons else None
    zz = np.concatenate(z) if z else np.zeros(0)
    r = residuals(p, xv, y, zz)
    status = Status.OPTIMAL if prob.status == cp.OPTIMAL else Status.MAX_ITER
    return SocpSolution(xv, p.objective_value(xv), status, r.primal, r.dual, r.gap, y=y, z=zz)


register_backend("reference", _reference)
register_backend("cvxpy", _cvxpy)
