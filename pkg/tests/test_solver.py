import numpy as np
import pytest
from hypothesis import given, strategies as st

from cccp.solver import ConeBlock, SocpProblem, Status, backends, block_duals, conic_form, residuals, solve
from socp_cases import cases, random_feasible

CASES = cases()


def test_regression_set_size():
    assert len(CASES) == 20


@pytest.mark.parametrize("name,prob,status,expected", CASES, ids=[c[0] for c in CASES])
def test_regression_case(name, prob, status, expected):
    sol = solve(prob)
    assert sol.status.value == status
    if status != "optimal":
        return
    r = residuals(prob, sol.x, sol.y, sol.z)
    assert max(r.primal, r.dual, r.gap) <= 1e-7
    if expected is not None:
        assert sol.objective_value == pytest.approx(expected, abs=1e-7)


@pytest.mark.parametrize("name,prob,status,expected", CASES, ids=[c[0] for c in CASES])
def test_matches_cvxpy(name, prob, status, expected):
    pytest.importorskip("cvxpy")
    ref = solve(prob, backend="cvxpy")
    ours = solve(prob)
    assert ours.status is ref.status
    if ours.optimal:
        assert ours.objective_value == pytest.approx(ref.objective_value, rel=1e-6, abs=1e-6)


def test_infeasibility_certificate():
    prob = [c for c in CASES if c[0] == "infeasible"][0][1]
    sol = solve(prob)
    z = sol.certificate["z"]
    G, h, *_ = conic_form(prob)
    # Farkas: G' z = 0, z >= 0, h' z < 0
    assert np.abs(G.T @ z).max() <= 1e-7 and np.all(z >= -1e-9) and h @ z < 0


def test_unbounded_ray():
    prob = [c for c in CASES if c[0] == "unbounded"][0][1]
    ray = solve(prob).certificate["ray"]
    assert prob.objective @ ray < 0 and ray[0] <= 1e-9


@given(st.integers(0, 10_000))
def test_random_problems_certified(seed):
    prob = random_feasible(seed, n=5, ncones=3, q=3, neq=1, nlin=2)
    sol = solve(prob)
    assert sol.optimal
    r = residuals(prob, sol.x, sol.y, sol.z)
    assert max(r.primal, r.dual, r.gap) <= 1e-7


def test_block_duals_split():
    prob = random_feasible(1)
    sol = solve(prob)
    parts = block_duals(prob, sol.z)
    assert len(parts) == len(prob.cone_blocks)
    for blk, zk in zip(prob.cone_blocks, parts):
        assert zk.size == blk.dim
        assert zk[0] >= np.linalg.norm(zk[1:]) - 1e-9
        # complementary slackness
        s = np.concatenate([[blk.rhs(sol.x)], blk.A @ sol.x + blk.b])
        assert abs(s @ zk) <= 1e-6


def test_sparse_blocks_same_answer():
    import scipy.sparse as sp

    prob = random_feasible(3)
    sparse = SocpProblem(prob.nvars, prob.objective,
                         [ConeBlock(sp.csr_matrix(b.A), b.b, b.c, b.d) for b in prob.cone_blocks],
                         eq=prob.eq, lin_ineq=prob.lin_ineq)
    assert solve(sparse).objective_value == pytest.approx(solve(prob).objective_value, rel=1e-9)


def test_input_validation():
    with pytest.raises(ValueError):
        ConeBlock(np.ones((2, 3)), np.ones(3), np.ones(3), 0.0)
    with pytest.raises(ValueError):
        SocpProblem(2, [1.0], [])
    with pytest.raises(ValueError, match="unknown SOCP backend"):
        solve(SocpProblem(1, [1.0], [ConeBlock([[1.0]], [-1.0], [1.0], 0.0)]), backend="nope")
    with pytest.raises(ValueError):
        solve(SocpProblem(1, [1.0], []), tol=0.5)
    with pytest.raises(ValueError, match="dimension"):
        residuals(SocpProblem(2, [1.0, 1.0], []), [1.0])
    assert "reference" in backends()


def test_residuals_flag_violations():
    prob = SocpProblem(1, [1.0], [ConeBlock([[1.0]], [-1.0], [1.0], 0.0)])
    assert residuals(prob, [0.4]).primal > 0
    assert residuals(prob, [0.5]).primal == 0
    assert np.isnan(residuals(prob, [0.5]).dual)
    assert solve(prob).status is Status.OPTIMAL
