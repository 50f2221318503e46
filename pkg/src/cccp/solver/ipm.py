"""Reference SOCP solver: homogeneous self-dual primal-dual interior point method.

Nesterov-Todd scaling on every cone, Mehrotra predictor-corrector steps.  The
Newton systems are reduced to ``[[G' W^-2 G, A'], [A, 0]]``, regularised
statically and polished by iterative refinement against the unreduced system.
Small systems are factored densely, large ones with SuperLU.

Conic form (see :func:`conic_form`)::

    min c'x   s.t.  G x + s = h,  A x = b,  s in K = R+^l x Q^q1 x ... x Q^qN
"""

from __future__ import annotations

import logging
import math

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .problem import SocpProblem, SocpSolution, Status, conic_form

log = logging.getLogger(__name__)

MAX_ITER = 200
STEP_FRACTION = 0.99
REG = 1e-13
DENSE_LIMIT = 1500


class Cones:
    """Index bookkeeping and Jordan algebra for ``R+^l x Q^q1 x ...``."""

    def __init__(self, l: int, soc_dims):
        self.l = l
        self.soc = []
        start = l
        for q in soc_dims:
            self.soc.append((start, start + q))
            start += q
        self.size = start
        self.degree = l + len(self.soc)
        e = np.zeros(self.size)
        e[:l] = 1.0
        for a, _ in self.soc:
            e[a] = 1.0
        self.e = e

    def prod(self, u, v):
        w = np.empty_like(u)
        l = self.l
        w[:l] = u[:l] * v[:l]
        for a, b in self.soc:
            w[a] = u[a:b] @ v[a:b]
            w[a + 1:b] = u[a] * v[a + 1:b] + v[a] * u[a + 1:b]
        return w

    def div(self, lam, u):
        """Solve ``lam o v = u`` for ``v``."""
        v = np.empty_like(u)
        l = self.l
        v[:l] = u[:l] / lam[:l]
        for a, b in self.soc:
            l0, l1 = lam[a], lam[a + 1:b]
            u0, u1 = u[a], u[a + 1:b]
            det = l0 * l0 - l1 @ l1
            v0 = (l0 * u0 - l1 @ u1) / det
            v[a] = v0
            v[a + 1:b] = (u1 - v0 * l1) / l0
        return v

    def min_eig(self, u) -> float:
        m = np.inf
        if self.l:
            m = u[:self.l].min()
        for a, b in self.soc:
            m = min(m, u[a] - np.linalg.norm(u[a + 1:b]))
        return m

    def max_step(self, u, du) -> float:
        """Largest ``alpha`` with ``u + alpha du`` in the cone (``u`` interior)."""
        alpha = np.inf
        l = self.l
        if l:
            neg = du[:l] < 0
            if np.any(neg):
                alpha = min(alpha, np.min(-u[:l][neg] / du[:l][neg]))
        for a, b in self.soc:
            alpha = min(alpha, _soc_step(u[a:b], du[a:b]))
        return alpha

    def violation(self, u) -> float:
        """Distance-like measure of ``u`` leaving the cone (0 when inside)."""
        v = 0.0
        if self.l:
            v = max(v, float(np.max(-u[:self.l], initial=0.0)))
        for a, b in self.soc:
            v = max(v, float(np.linalg.norm(u[a + 1:b]) - u[a]))
        return v


def _soc_step(u, du) -> float:
    u0, u1, d0, d1 = u[0], u[1:], du[0], du[1:]
    qa = d0 * d0 - d1 @ d1
    qb = 2.0 * (u0 * d0 - u1 @ d1)
    qc = max(u0 * u0 - u1 @ u1, 0.0)
    roots = []
    if abs(qa) <= 1e-14 * max(1.0, abs(qb), qc):
        if qb < 0:
            roots.append(-qc / qb)
    else:
        disc = qb * qb - 4 * qa * qc
        if disc >= 0:
            sq = math.sqrt(disc)
            q = -0.5 * (qb + math.copysign(sq, qb))
            if q != 0:
                roots.extend([q / qa, qc / q])
            else:
                roots.append(0.0)
    pos = [r for r in roots if r > 0]
    alpha = min(pos) if pos else np.inf
    if d0 < 0:
        alpha = min(alpha, -u0 / d0)
    return alpha


class Scaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^-1 s = lam`` (``W`` symmetric)."""

    def __init__(self, cones: Cones, s, z):
        self.cones = cones
        l = cones.l
        self.d = np.sqrt(s[:l] / z[:l])
        self.W = []
        self.Winv = []
        for a, b in cones.soc:
            sk, zk = s[a:b], z[a:b]
            sJs = sk[0] ** 2 - sk[1:] @ sk[1:]
            zJz = zk[0] ** 2 - zk[1:] @ zk[1:]
            sJs = max(sJs, 1e-300)
            zJz = max(zJz, 1e-300)
            sb = sk / math.sqrt(sJs)
            zb = zk / math.sqrt(zJz)
            gamma = math.sqrt(max((1.0 + sb @ zb) / 2.0, 1e-300))
            wb = sb.copy()
            wb[0] += zb[0]
            wb[1:] -= zb[1:]
            wb /= 2.0 * gamma
            v = wb.copy()
            v[0] += 1.0
            v /= math.sqrt(2.0 * (wb[0] + 1.0))
            beta = (sJs / zJz) ** 0.25
            q = b - a
            J = np.eye(q)
            J[1:, 1:] *= -1
            Jv = v.copy()
            Jv[1:] *= -1
            self.W.append(beta * (2.0 * np.outer(v, v) - J))
            self.Winv.append((2.0 * np.outer(Jv, Jv) - J) / beta)
        self.lam = self.apply(z)

    def apply(self, u):
        out = np.empty_like(u)
        l = self.cones.l
        out[:l] = self.d * u[:l]
        for (a, b), W in zip(self.cones.soc, self.W):
            out[a:b] = W @ u[a:b]
        return out

    def apply_inv(self, u):
        out = np.empty_like(u)
        l = self.cones.l
        out[:l] = u[:l] / self.d
        for (a, b), Wi in zip(self.cones.soc, self.Winv):
            out[a:b] = Wi @ u[a:b]
        return out

    def apply_sq(self, u):
        return self.apply(self.apply(u))

    def apply_inv_sq(self, u):
        return self.apply_inv(self.apply_inv(u))


class IdentityScaling(Scaling):
    def __init__(self, cones: Cones):
        self.cones = cones
        self.d = np.ones(cones.l)
        self.W = [np.eye(b - a) for a, b in cones.soc]
        self.Winv = [np.eye(b - a) for a, b in cones.soc]


class KKTStructure:
    """Per-solve constant pieces of ``G``: linear rows and each cone's dense column support."""

    def __init__(self, G, cones: Cones):
        self.Gl = G[:cones.l]
        self.blocks = []
        for a, b in cones.soc:
            Gk = G[a:b]
            support = np.unique(Gk.indices)
            self.blocks.append((support, Gk[:, support].toarray()))


class KKTSolver:
    """Factor ``[[G' W^-2 G, A'], [A, 0]]`` once and solve the full 3x3 system repeatedly."""

    def __init__(self, G, A, cones: Cones, scaling: Scaling, refine: int = 8, structure: KKTStructure | None = None):
        self.G, self.A, self.cones, self.W = G, A, cones, scaling
        self.n = G.shape[1]
        self.p = A.shape[0]
        self.refine = refine
        self.structure = structure or KKTStructure(G, cones)
        n, p = self.n, self.p
        dense = n + p <= DENSE_LIMIT
        H = self._normal_matrix(dense)
        # per-variable regularisation: a single scale tied to the largest diagonal
        # swamps weakly scaled variables once the NT scaling becomes extreme
        reg = REG * np.maximum(np.abs(H.diagonal()), 1.0)
        reg_y = REG
        self.reg = reg
        if dense:
            K = np.zeros((n + p, n + p))
            K[:n, :n] = H
            K[np.arange(n), np.arange(n)] += reg
            if p:
                Ad = A.toarray()
                K[n:, :n] = Ad
                K[:n, n:] = Ad.T
                K[n:, n:] = -reg_y * np.eye(p)
            self._lu = sl.lu_factor(K, check_finite=False)
            self._solve = lambda r: sl.lu_solve(self._lu, r, check_finite=False)
        else:
            K = sp.bmat([[H + sp.diags(reg), A.T],
                         [A, -reg_y * sp.identity(p) if p else None]], format="csc")
            try:
                # quasi-definite: a symmetric ordering without pivoting keeps fill low
                lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                               options=dict(SymmetricMode=True))
            except RuntimeError:
                lu = spla.splu(K, permc_spec="COLAMD")
            self._solve = lu.solve

    def _normal_matrix(self, dense: bool = False):
        cones, W, st = self.cones, self.W, self.structure
        n = self.n
        dl = 1.0 / W.d ** 2 if cones.l else None
        if dense:
            H = np.zeros((n, n))
            if cones.l:
                H += (st.Gl.T @ sp.diags(dl) @ st.Gl).toarray()
            for (support, Gd), Wi in zip(st.blocks, W.Winv):
                if support.size:
                    WG = Wi @ Gd
                    H[np.ix_(support, support)] += WG.T @ WG
            return H
        parts = []
        if cones.l:
            parts.append((st.Gl.T @ sp.diags(dl) @ st.Gl).tocoo())
        rows, cols, vals = [], [], []
        for (support, Gd), Wi in zip(st.blocks, W.Winv):
            if support.size == 0:
                continue
            WG = Wi @ Gd
            Hk = WG.T @ WG
            r, c = np.meshgrid(support, support, indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(Hk.ravel())
        if rows:
            parts.append(sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                       shape=(n, n)))
        if not parts:
            return sp.csr_matrix((n, n))
        H = parts[0]
        for P in parts[1:]:
            H = H + P
        return sp.csr_matrix(H)

    def _reduced(self, r1, r2, r3):
        G, W = self.G, self.W
        rhs = np.concatenate([r1 + G.T @ W.apply_inv_sq(r3), r2])
        sol = self._solve(rhs)
        dx, dy = sol[:self.n], sol[self.n:]
        dz = W.apply_inv_sq(G @ dx - r3)
        return dx, dy, dz

    def solve(self, r1, r2, r3):
        G, A, W = self.G, self.A, self.W
        dx, dy, dz = self._reduced(r1, r2, r3)
        scale = 1.0 + max(np.abs(r1).max(initial=0), np.abs(r2).max(initial=0), np.abs(r3).max(initial=0))
        prev = np.inf
        for _ in range(self.refine):
            e1 = r1 - (A.T @ dy + G.T @ dz)
            e2 = r2 - A @ dx
            e3 = r3 - (G @ dx - W.apply_sq(dz))
            err = max(np.abs(e1).max(initial=0), np.abs(e2).max(initial=0), np.abs(e3).max(initial=0))
            # stop once accurate or once refinement stops paying off
            if err <= 1e-13 * scale or err > 0.5 * prev:
                break
            prev = err
            cx, cy, cz = self._reduced(e1, e2, e3)
            dx, dy, dz = dx + cx, dy + cy, dz + cz
        return dx, dy, dz


def _report(c, G, h, A, b, cones: Cones, x, y, z):
    """Unscaled residuals of a candidate (x, y, z) on the conic form."""
    scale_p = 1.0 + max(np.abs(h).max(initial=0.0), np.abs(b).max(initial=0.0))
    s = h - G @ x
    pres = cones.violation(s)
    if A.shape[0]:
        pres = max(pres, float(np.abs(A @ x - b).max()))
    pres /= scale_p
    dres = float(np.abs(c + G.T @ z + A.T @ y).max(initial=0.0)) / (1.0 + np.abs(c).max(initial=0.0))
    dres = max(dres, cones.violation(z) / (1.0 + np.abs(c).max(initial=0.0)))
    pobj = float(c @ x)
    dobj = float(-h @ z - b @ y)
    gap = abs(pobj - dobj) / (1.0 + abs(pobj))
    return pres, dres, gap, pobj, dobj


def solve_conic(c, G, h, A, b, l, soc_dims, tol=1e-8, max_iter=MAX_ITER):
    """Solve the conic form; returns ``(status, x, y, z, iterations, info)``."""
    n = c.size
    cones = Cones(l, soc_dims)
    m = cones.size

    structure = KKTStructure(G, cones)
    kkt = KKTSolver(G, A, cones, IdentityScaling(cones), structure=structure)
    x, _, zz = kkt.solve(np.zeros(n), b, h)
    s = -zz
    _, y, z = kkt.solve(-c, np.zeros(b.size), np.zeros(m))
    if m:
        ap = -cones.min_eig(s)
        if ap >= 0:
            s = s + (1 + ap) * cones.e
        ad = -cones.min_eig(z)
        if ad >= 0:
            z = z + (1 + ad) * cones.e
    tau = kappa = 1.0
    nu = cones.degree

    norm_c = max(1.0, np.linalg.norm(c))
    norm_bh = max(1.0, np.linalg.norm(np.concatenate([b, h])))
    best = None
    status = Status.MAX_ITER
    it = 0
    for it in range(max_iter + 1):
        xh, yh, zh = x / tau, y / tau, z / tau
        pres, dres, gap, pobj, dobj = _report(c, G, h, A, b, cones, xh, yh, zh)
        merit = max(pres, dres, gap)
        log.debug("it %3d pres %.2e dres %.2e gap %.2e tau %.2e kappa %.2e", it, pres, dres, gap, tau, kappa)
        if best is None or merit < best[0]:
            best = (merit, xh, yh, zh)
        if pres <= tol and dres <= tol and gap <= tol:
            status = Status.OPTIMAL
            break

        hz_by = float(h @ z + b @ y)
        if hz_by < 0:
            r = np.linalg.norm(A.T @ y + G.T @ z) / norm_c
            if r / (-hz_by / norm_bh) <= tol:
                status = Status.INFEASIBLE
                scale = -hz_by
                return status, x, y / scale, z / scale, it, {}
        cx = float(c @ x)
        if cx < 0:
            r = max(np.linalg.norm(A @ x), np.linalg.norm(G @ x + s)) / norm_bh
            if r / (-cx / norm_c) <= tol:
                status = Status.UNBOUNDED
                return status, x / -cx, y, z, it, {}
        if it == max_iter:
            break

        rx = A.T @ y + G.T @ z + c * tau
        ry = A @ x - b * tau
        rz = G @ x + s - h * tau
        rt = kappa + cx + float(b @ y) + float(h @ z)
        mu = (float(s @ z) + kappa * tau) / (nu + 1)

        W = Scaling(cones, s, z)
        lam = W.lam
        try:
            kkt = KKTSolver(G, A, cones, W, structure=structure)
        except (np.linalg.LinAlgError, RuntimeError) as err:
            log.warning("KKT factorisation failed at iteration %d: %s", it, err)
            break
        x1, y1, z1 = kkt.solve(-c, b, h)
        denom = float(c @ x1 + b @ y1 + h @ z1) - kappa / tau

        def direction(ds_rhs, dk_rhs, frac):
            wdiv = W.apply(cones.div(lam, ds_rhs))
            x2, y2, z2 = kkt.solve(-frac * rx, -frac * ry, -frac * rz - wdiv)
            num = -frac * rt - dk_rhs / tau - float(c @ x2 + b @ y2 + h @ z2)
            dtau = num / denom
            dx = x2 + dtau * x1
            dy = y2 + dtau * y1
            dz = z2 + dtau * z1
            ds = wdiv - W.apply_sq(dz)
            dkappa = (dk_rhs - kappa * dtau) / tau
            return dx, dy, dz, ds, dtau, dkappa

        def step_length(ds, dz, dtau, dkappa):
            a = min(cones.max_step(s, ds), cones.max_step(z, dz))
            if dtau < 0:
                a = min(a, -tau / dtau)
            if dkappa < 0:
                a = min(a, -kappa / dkappa)
            return a

        lam_sq = cones.prod(lam, lam)
        aff = direction(-lam_sq, -kappa * tau, 1.0)
        dx_a, dy_a, dz_a, ds_a, dtau_a, dkappa_a = aff
        alpha_aff = min(1.0, step_length(ds_a, dz_a, dtau_a, dkappa_a))
        sigma = min(1.0, max(0.0, (1.0 - alpha_aff) ** 3))

        corr = cones.prod(W.apply_inv(ds_a), W.apply(dz_a))
        ds_rhs = -lam_sq - corr + sigma * mu * cones.e
        dk_rhs = -kappa * tau - dkappa_a * dtau_a + sigma * mu
        dx, dy, dz, ds, dtau, dkappa = direction(ds_rhs, dk_rhs, 1.0 - sigma)
        alpha = min(1.0, STEP_FRACTION * step_length(ds, dz, dtau, dkappa))

        x = x + alpha * dx
        y = y + alpha * dy
        z = z + alpha * dz
        s = s + alpha * ds
        tau = tau + alpha * dtau
        kappa = kappa + alpha * dkappa
        if not (np.all(np.isfinite(x)) and np.isfinite(tau)) or tau <= 0:
            log.warning("iterate lost finiteness at iteration %d", it)
            break

    if status is Status.OPTIMAL:
        return status, x / tau, y / tau, z / tau, it, {}
    _, xh, yh, zh = best
    return Status.MAX_ITER, xh, yh, zh, it, {"merit": best[0]}


def solve(p: SocpProblem, tol: float = 1e-8, max_iter: int = MAX_ITER) -> SocpSolution:
    if not (1e-12 <= tol <= 1e-3):
        raise ValueError(f"tol must lie in [1e-12, 1e-3], got {tol}")
    G, h, A, b, l, soc_dims = conic_form(p)
    c = p.objective
    status, x, y, z, it, _ = solve_conic(c, G, h, A, b, l, soc_dims, tol=tol, max_iter=max_iter)
    cones = Cones(l, soc_dims)
    if status in (Status.OPTIMAL, Status.MAX_ITER):
        pres, dres, gap, pobj, _ = _report(c, G, h, A, b, cones, x, y, z)
        return SocpSolution(x=x, objective_value=pobj + p.objective_offset, status=status,
                            primal_residual=pres, dual_residual=dres, duality_gap=gap,
                            iterations=it, y=y, z=z)
    if status is Status.INFEASIBLE:
        cert = {"y": y, "z": z}
        return SocpSolution(x=np.full(p.nvars, np.nan), objective_value=math.inf, status=status,
                            primal_residual=math.inf, dual_residual=math.nan, duality_gap=math.nan,
                            iterations=it, y=y, z=z, certificate=cert)
    cert = {"ray": x}
    return SocpSolution(x=x, objective_value=-math.inf, status=status,
                        primal_residual=math.nan, dual_residual=math.inf, duality_gap=math.nan,
                        iterations=it, y=y, z=z, certificate=cert)
