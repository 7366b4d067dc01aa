import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from covsteer.solver import (DUAL_INFEASIBLE, OPTIMAL, PRIMAL_INFEASIBLE, Cones, SolverSettings, project_psd,
                             project_soc, smat, solve, svec)


def test_soc_projection_example():
    assert np.allclose(project_soc(np.array([0.0, 3.0, 4.0])), [2.5, 1.5, 2.0])


def test_psd_projection_example():
    out = smat(project_psd(svec(np.diag([1.0, -2.0]))))
    assert np.allclose(out, np.diag([1.0, 0.0]))


def test_svec_round_trip_preserves_inner_product(rng):
    A, B = rng.normal(size=(2, 4, 4))
    A, B = A + A.T, B + B.T
    assert np.allclose(smat(svec(A)), A)
    assert svec(A) @ svec(B) == pytest.approx(np.trace(A @ B))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=2, max_size=8))
def test_soc_projection_lands_in_cone(v):
    p = project_soc(np.array(v))
    assert p[0] >= np.linalg.norm(p[1:]) - 1e-9 * (1 + abs(p[0]))


def test_qp_with_bound():
    # min 1/2 x^2 s.t. x >= 2  (as -x <= -2)
    s = solve(sp.csc_matrix([[1.0]]), np.zeros(1), sp.csc_matrix([[-1.0]]), np.array([-2.0]), Cones(nonneg=1))
    assert s.report.status == OPTIMAL
    assert s.report.objective == pytest.approx(2.0, rel=1e-6)


def test_pinned_psd_block():
    # min tr(X) with X_11 = 2, X psd (2x2): optimum 2
    P = sp.csc_matrix((3, 3))
    q = np.array([1.0, 0.0, 1.0])
    A = sp.vstack([sp.csc_matrix([[1.0, 0, 0]]), -sp.identity(3)]).tocsc()
    b = np.array([2.0, 0, 0, 0])
    s = solve(P, q, A, b, Cones(zero=1, psd=(2,)))
    assert s.report.status == OPTIMAL
    assert s.report.objective == pytest.approx(2.0, abs=1e-5)


def test_primal_infeasible_certificate():
    # x <= -1 and -x <= -1
    A = sp.csc_matrix([[1.0], [-1.0]])
    s = solve(sp.csc_matrix((1, 1)), np.zeros(1), A, np.array([-1.0, -1.0]), Cones(nonneg=2))
    assert s.report.status == PRIMAL_INFEASIBLE


def test_dual_infeasible_certificate():
    # min -x s.t. -x <= 0
    s = solve(sp.csc_matrix((1, 1)), np.array([-1.0]), sp.csc_matrix([[-1.0]]), np.zeros(1), Cones(nonneg=1))
    assert s.report.status == DUAL_INFEASIBLE


def _kkt_qp(rng, n, m_eq, m_in):
    """Random convex QP whose optimum is fixed by construction through its KKT conditions."""
    G = rng.normal(size=(n, n))
    P = G @ G.T / n + 0.1 * np.eye(n)
    A = rng.normal(size=(m_eq + m_in, n))
    x = rng.normal(size=n)
    y = np.zeros(m_eq + m_in)
    y[:m_eq] = rng.normal(size=m_eq)
    active = rng.random(m_in) < 0.5
    y[m_eq:][active] = rng.uniform(0.1, 2.0, active.sum())
    slack = np.where(active, 0.0, rng.uniform(0.1, 2.0, m_in))
    b = A @ x
    b[m_eq:] += slack
    q = -P @ x - A.T @ y
    return P, q, A, b, 0.5 * x @ P @ x + q @ x


def test_kkt_constructed_qps_match():
    rng = np.random.default_rng(7)
    for _ in range(20):
        n = int(rng.integers(2, 30))
        m_eq, m_in = int(rng.integers(0, n // 2 + 1)), int(rng.integers(1, 2 * n))
        P, q, A, b, opt = _kkt_qp(rng, n, m_eq, m_in)
        s = solve(sp.csc_matrix(P), q, sp.csc_matrix(A), b, Cones(zero=m_eq, nonneg=m_in),
                  SolverSettings(eps_abs=1e-9, eps_rel=1e-9))
        assert s.report.status == OPTIMAL
        assert abs(s.report.objective - opt) <= 1e-5 * max(1.0, abs(opt))


def test_warm_start_from_solution_finishes_quickly():
    rng = np.random.default_rng(3)
    P, q, A, b, _ = _kkt_qp(rng, 10, 3, 12)
    args = (sp.csc_matrix(P), q, sp.csc_matrix(A), b, Cones(zero=3, nonneg=12))
    cold = solve(*args)
    warm = solve(*args, warm_x=cold.x, warm_y=cold.y)
    assert warm.report.iterations <= cold.report.iterations
    assert np.allclose(warm.x, cold.x, atol=1e-5)


def test_iteration_log_written(tmp_path):
    path = tmp_path / "log.csv"
    solve(sp.csc_matrix([[1.0]]), np.zeros(1), sp.csc_matrix([[-1.0]]), np.array([-2.0]), Cones(nonneg=1),
          SolverSettings(log_path=str(path)))
    lines = path.read_text().splitlines()
    assert lines[0] == "# covsteer-csv v1 solver-iterations"
    assert lines[1].startswith("iteration,")


def test_dimension_mismatch_raises():
    with pytest.raises(ValueError):
        solve(sp.csc_matrix([[1.0]]), np.zeros(1), sp.csc_matrix([[1.0]]), np.zeros(1), Cones(nonneg=2))
