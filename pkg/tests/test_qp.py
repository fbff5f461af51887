import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dr_stackelberg.qp import (
    INFEASIBLE,
    OPTIMAL,
    QpError,
    QpProblem,
    UnboundedQpError,
    kkt_certificate,
    project_equality_box,
    solve_qp,
)


def assert_certified(problem, sol, tol=1e-8):
    assert sol.status == OPTIMAL
    cert = kkt_certificate(problem, sol)
    assert cert["stationarity"] <= tol
    assert cert["complementarity"] <= tol
    assert cert["dual_feasibility"] >= -1e-10
    assert cert["primal_feasibility"] <= 1e-9


def random_qp(rng, n, rank=None, m_ineq=0, lp=False):
    """PSD problem with box bounds, one equality and ``m_ineq`` rows, feasible by construction."""
    if lp:
        Q = np.zeros((n, n))
    else:
        M = rng.normal(size=(rank or n, n))
        Q = M.T @ M
    q = rng.normal(size=n) * 3
    lo = rng.uniform(-2, 0, n)
    hi = lo + rng.uniform(0.5, 3, n)
    x0 = rng.uniform(lo, hi)
    a = rng.uniform(0.2, 2.0, n)
    G = rng.normal(size=(m_ineq, n))
    h = G @ x0 + rng.uniform(0, 1, m_ineq)
    return QpProblem(Q, q, lo, hi, a, float(a @ x0), G if m_ineq else None, h if m_ineq else None), x0


def random_feasible_points(problem, rng, count):
    """Project random vectors onto the equality and box, keep the ones meeting the rows."""
    pts = []
    for _ in range(count):
        z = rng.uniform(problem.lower, problem.upper)
        x = project_equality_box(z, problem.eq_coef, problem.eq_rhs, problem.lower, problem.upper)
        if x is not None and problem.violation(x) <= 1e-9:
            pts.append(x)
    return pts


def test_sum_of_squares_symmetric():
    n = 5
    p = QpProblem(2 * np.eye(n), np.zeros(n), np.zeros(n), np.ones(n), np.ones(n), 1.0)
    sol = solve_qp(p)
    np.testing.assert_allclose(sol.x, np.full(n, 0.2), atol=1e-12)
    assert_certified(p, sol)


def test_equality_binding_example():
    # (x1-2)^2 + (x2-2)^2 = x'x - 4(x1+x2) + 8
    p = QpProblem(2 * np.eye(2), [-4.0, -4.0], [0, 0], [1, 1], [1, 1], 1.0, offset=8.0)
    sol = solve_qp(p)
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-12)
    assert sol.objective == pytest.approx(4.5)
    assert_certified(p, sol)


def test_bound_binding_example():
    # (x1-1)^2 + x2^2 with x1 + x2 = 1, x1 in [0, 0.25]
    p = QpProblem(2 * np.eye(2), [-2.0, 0.0], [0, -np.inf], [0.25, np.inf], [1, 1], 1.0, offset=1.0)
    sol = solve_qp(p)
    np.testing.assert_allclose(sol.x, [0.25, 0.75], atol=1e-12)
    assert_certified(p, sol)
    # dense grid over the feasible segment
    x1 = np.linspace(0, 0.25, 2501)
    grid = (x1 - 1) ** 2 + (1 - x1) ** 2
    assert sol.objective <= grid.min() + 1e-12
    assert x1[np.argmin(grid)] == pytest.approx(0.25)


def test_linear_program():
    # min -x1 - 2 x2 + x3, x1 + x2 + x3 = 1.5, x <= (0.3, 0.2, 1), x2 <= x1
    p = QpProblem(
        np.zeros((3, 3)), [-1.0, -2.0, 1.0], [0, 0, 0], [0.3, 0.2, 1.0],
        [1, 1, 1], 1.5, [[-1.0, 1.0, 0.0]], [0.0],
    )
    sol = solve_qp(p)
    np.testing.assert_allclose(sol.x, [0.3, 0.2, 1.0], atol=1e-12)
    assert_certified(p, sol)


def test_infeasible():
    p = QpProblem(np.eye(2), np.zeros(2), [0, 0], [1, 1], [1, 1], 3.0)
    assert solve_qp(p).status == INFEASIBLE
    rows = QpProblem(np.eye(2), np.zeros(2), [0, 0], [1, 1], None, 0.0, [[-1, -1]], [-2.5])
    assert solve_qp(rows).status == INFEASIBLE


def test_unbounded():
    p = QpProblem(np.zeros((2, 2)), [-1.0, 0.0], [0, 0], [np.inf, 1])
    with pytest.raises(UnboundedQpError):
        solve_qp(p)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(Q=[[1, 2], [0, 1]], q=[0, 0]),
        dict(Q=[[1, 0], [0, -1]], q=[0, 0]),
        dict(Q=[[1, 2], [2, 1]], q=[0, 0]),
        dict(Q=np.eye(2), q=[0, 0], lower=[1, 0], upper=[0, 1]),
        dict(Q=np.eye(2), q=[np.nan, 0]),
    ],
)
def test_malformed(kwargs):
    with pytest.raises(QpError):
        solve_qp(QpProblem(**kwargs))


def test_deterministic(rng):
    p, _ = random_qp(rng, 8, rank=3, m_ineq=3)
    a, b = solve_qp(p), solve_qp(p)
    assert a.x.tobytes() == b.x.tobytes()
    assert a.active_set == b.active_set


def test_degenerate_duplicate_rows():
    # the same row three times plus a bound at the same vertex
    G = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
    p = QpProblem(np.eye(2), [-3.0, -3.0], [0, 0], [1, 5], None, 0.0, G, [1.0, 1.0, 2.0])
    sol = solve_qp(p)
    np.testing.assert_allclose(sol.x, [0.5, 0.5], atol=1e-10)
    assert_certified(p, sol)


@pytest.mark.parametrize("kind", ["full", "low_rank", "lp", "rows"])
def test_random_certified_and_dominant(rng, kind):
    for _ in range(15):
        n = int(rng.integers(2, 9))
        p, _ = random_qp(
            rng, n,
            rank=1 if kind == "low_rank" else None,
            lp=kind == "lp",
            m_ineq=3 if kind == "rows" else 0,
        )
        sol = solve_qp(p)
        assert_certified(p, sol)
        for x in random_feasible_points(p, rng, 100):
            assert sol.objective <= p.objective(x) + 1e-9


@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_property_psd(n, seed):
    rng = np.random.default_rng(seed)
    p, x0 = random_qp(rng, n, rank=int(rng.integers(1, n + 1)))
    sol = solve_qp(p)
    assert_certified(p, sol, tol=1e-8 * max(1.0, float(np.abs(p.Q).max())))
    assert sol.objective <= p.objective(x0) + 1e-9


def test_projection_lands_on_equality(rng):
    for _ in range(50):
        n = 6
        lo = rng.uniform(-1, 0, n)
        hi = lo + rng.uniform(0.1, 2, n)
        a = rng.uniform(0.1, 1, n)
        b = float(a @ rng.uniform(lo, hi))
        x = project_equality_box(rng.normal(size=n) * 5, a, b, lo, hi)
        assert abs(a @ x - b) <= 1e-9
        assert np.all(x >= lo) and np.all(x <= hi)



def test_initial_working_set_keeps_independent_rows():
    # rows with no free variable left used to shift the rank test and drop valid rows
    from dr_stackelberg.qp import _ActiveSet

    n = 40
    rng = np.random.default_rng(3)
    w = rng.uniform(1, 5, n)
    B = w + np.where(np.arange(n) % 5 == 0, 0.0, 2.0)
    Q = np.zeros((2 * n, 2 * n))
    Q[:n, :n] = 0.02 * (np.eye(n) - 1.0 / n)
    p = QpProblem(
        Q, np.r_[np.zeros(n), -np.ones(n) * 0.2], np.zeros(2 * n), np.r_[B, w],
        np.r_[np.ones(n), np.zeros(n)], float(w.sum()),
        np.hstack([-np.eye(n), np.eye(n)]), np.zeros(n),
    )
    solver = _ActiveSet(p)
    solver._initial_working_set(np.r_[w, w])
    free = solver._free()
    C = solver.rows[np.ix_([0] + solver.work_rows, free)]
    every = solver.rows[np.ix_(range(n + 1), free)]  # every row is active here
    assert np.linalg.matrix_rank(C) == C.shape[0] == np.linalg.matrix_rank(every)
