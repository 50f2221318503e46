"""Standard-form second-order cone programs.

A :class:`SocpProblem` minimises ``objective @ x`` subject to

* cone blocks ``||A x + b|| <= c @ x + d`` (a block with zero rows is the
  linear inequality ``0 <= c @ x + d``),
* linear inequalities ``G x <= h`` (dense or ``scipy.sparse``),
* equalities ``E x = f``,
* ``x[j] >= 0`` for ``j`` in ``nonneg_indices``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import enum

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class ConeBlock:
    """``||A x + b|| <= c @ x + d``."""

    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    d: float

    def __post_init__(self):
        A = self.A
        if not sp.issparse(A):
            A = np.atleast_2d(np.asarray(A, dtype=float))
        c = np.asarray(self.c, dtype=float).reshape(-1)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] == 0:
            A = np.zeros((0, c.size))
        if A.shape[1] != c.size or A.shape[0] != b.size:
            raise ValueError(f"inconsistent cone block: A {A.shape}, b {b.shape}, c {c.shape}")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", float(self.d))

    @property
    def nvars(self) -> int:
        return self.c.size

    @property
    def dim(self) -> int:
        return self.b.size + 1

    def lhs(self, x) -> float:
        return float(np.linalg.norm(self.A @ x + self.b))

    def rhs(self, x) -> float:
        return float(self.c @ x + self.d)

    def violation(self, x) -> float:
        return max(0.0, self.lhs(x) - self.rhs(x))

    def padded(self, nvars: int, offset: int = 0) -> "ConeBlock":
        """Same block over a larger variable vector, own variables starting at ``offset``."""
        k = self.nvars
        A = sp.csr_matrix(self.A) if sp.issparse(self.A) else self.A
        if sp.issparse(A):
            A = sp.hstack([sp.csr_matrix((A.shape[0], offset)), A,
                           sp.csr_matrix((A.shape[0], nvars - offset - k))]).tocsr()
        else:
            A = np.hstack([np.zeros((A.shape[0], offset)), A, np.zeros((A.shape[0], nvars - offset - k))])
        c = np.zeros(nvars)
        c[offset:offset + k] = self.c
        return ConeBlock(A, self.b, c, self.d)

    def with_rhs(self, c, d: float) -> "ConeBlock":
        return ConeBlock(self.A, self.b, c, d)

    def remapped(self, nvars: int, columns) -> "ConeBlock":
        """Block whose column ``j`` moves to ``columns[j]`` in an ``nvars`` vector."""
        columns = np.asarray(columns, dtype=int)
        A = sp.csr_matrix(self.A) if sp.issparse(self.A) else sp.csr_matrix(np.asarray(self.A))
        P = sp.csr_matrix((np.ones(columns.size), (np.arange(columns.size), columns)),
                          shape=(columns.size, nvars))
        c = np.zeros(nvars)
        np.add.at(c, columns, self.c)
        A2 = (A @ P)
        if not sp.issparse(self.A):
            A2 = A2.toarray()
        return ConeBlock(A2, self.b, c, self.d)


@dataclass
class SocpProblem:
    nvars: int
    objective: np.ndarray
    cone_blocks: list[ConeBlock] = field(default_factory=list)
    eq: tuple | None = None
    nonneg_indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    lin_ineq: tuple | None = None
    objective_offset: float = 0.0

    def __post_init__(self):
        if self.nvars < 1:
            raise ValueError("problem needs at least one variable")
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        if self.objective.size != self.nvars:
            raise ValueError("objective length differs from nvars")
        for k, blk in enumerate(self.cone_blocks):
            if blk.nvars != self.nvars:
                raise ValueError(f"cone block {k} has {blk.nvars} columns, expected {self.nvars}")
        self.nonneg_indices = np.unique(np.asarray(self.nonneg_indices, dtype=int).reshape(-1))
        if self.nonneg_indices.size and (self.nonneg_indices.min() < 0 or self.nonneg_indices.max() >= self.nvars):
            raise ValueError("nonneg index out of range")
        if self.eq is not None:
            E, f = self.eq
            E = E.tocsr() if sp.issparse(E) else np.atleast_2d(np.asarray(E, dtype=float))
            f = np.asarray(f, dtype=float).reshape(-1)
            if E.shape != (f.size, self.nvars):
                raise ValueError(f"equality matrix shape {E.shape} inconsistent with rhs {f.size}")
            self.eq = (E, f) if f.size else None
        if self.lin_ineq is not None:
            G, h = self.lin_ineq
            G = G.tocsr() if sp.issparse(G) else np.atleast_2d(np.asarray(G, dtype=float))
            h = np.asarray(h, dtype=float).reshape(-1)
            if G.shape != (h.size, self.nvars):
                raise ValueError(f"inequality matrix shape {G.shape} inconsistent with rhs {h.size}")
            self.lin_ineq = (G, h) if h.size else None

    def objective_value(self, x) -> float:
        return float(self.objective @ x + self.objective_offset)


class Status(enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"
    MAX_ITER = "max_iter"


@dataclass
class SocpSolution:
    x: np.ndarray
    objective_value: float
    status: Status
    primal_residual: float
    dual_residual: float
    duality_gap: float
    iterations: int = 0
    # duals: equality multipliers and cone multipliers (in residuals() ordering)
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    certificate: dict | None = None

    @property
    def optimal(self) -> bool:
        return self.status is Status.OPTIMAL


def _rows(M) -> int:
    return M.shape[0]


def conic_form(p: SocpProblem):
    """Stack ``p`` as ``G x + s = h``, ``s`` in ``R+^l x Q^q1 x ...``; ``A x = b``.

    Linear rows come first in this order: nonneg bounds, ``lin_ineq``, zero-row
    cone blocks.  Each remaining cone block then contributes ``[c; A]`` rows.
    Returns ``(G, h, A, b, l, soc_dims)`` with ``G`` and ``A`` sparse CSR.
    """
    n = p.nvars
    lin_G, lin_h, soc_G, soc_h, soc_dims = [], [], [], [], []
    if p.nonneg_indices.size:
        k = p.nonneg_indices.size
        lin_G.append(sp.csr_matrix((-np.ones(k), (np.arange(k), p.nonneg_indices)), shape=(k, n)))
        lin_h.append(np.zeros(k))
    if p.lin_ineq is not None:
        G, h = p.lin_ineq
        lin_G.append(sp.csr_matrix(G))
        lin_h.append(h)
    for blk in p.cone_blocks:
        if blk.b.size == 0:
            lin_G.append(sp.csr_matrix(-blk.c[None, :]))
            lin_h.append(np.array([blk.d]))
    for blk in p.cone_blocks:
        if blk.b.size:
            soc_G.append(sp.vstack([sp.csr_matrix(-blk.c[None, :]), -sp.csr_matrix(blk.A)]))
            soc_h.append(np.concatenate([[blk.d], blk.b]))
            soc_dims.append(blk.dim)
    blocks = lin_G + soc_G
    G = sp.vstack(blocks).tocsr() if blocks else sp.csr_matrix((0, n))
    h = np.concatenate(lin_h + soc_h) if blocks else np.zeros(0)
    l = int(sum(_rows(M) for M in lin_G))
    if p.eq is not None:
        A = sp.csr_matrix(p.eq[0])
        b = p.eq[1].copy()
    else:
        A = sp.csr_matrix((0, n))
        b = np.zeros(0)
    return G, h, A, b, l, soc_dims
