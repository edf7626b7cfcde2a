import numpy as np
import pytest

from chanceplan.qp import DenseQP, QPStatus, kkt_residual, solve_qp

from oracles import qp_active_set_enumeration, random_qp


def test_unconstrained_minimum():
    b = np.array([1.0, -2.0, 0.5])
    sol = solve_qp(DenseQP(np.eye(3), -b, np.zeros((0, 3)), np.zeros(0)))
    assert sol.status is QPStatus.OPTIMAL
    np.testing.assert_allclose(sol.x, b, atol=1e-15)
    assert kkt_residual(DenseQP(np.eye(3), -b, np.zeros((0, 3)), np.zeros(0)), b, np.zeros(0)) == 0.0


def test_one_dimensional_active_constraint():
    qp = DenseQP([[1.0]], [0.0], [[-1.0]], [-1.0])  # x >= 1
    sol = solve_qp(qp)
    assert sol.status is QPStatus.OPTIMAL
    assert sol.x[0] == pytest.approx(1.0, abs=1e-15)
    assert sol.duals[0] == pytest.approx(1.0, abs=1e-15)
    assert sol.active_set == (0,)
    assert kkt_residual(qp, np.array([1.0]), np.array([1.0])) <= 1e-12


def test_one_dimensional_bound():
    qp = DenseQP([[1.0]], [0.0], np.zeros((0, 1)), np.zeros(0), lb=[1.0])
    sol = solve_qp(qp)
    assert sol.x[0] == 1.0
    assert sol.lb_duals[0] == pytest.approx(1.0)
    assert sol.kkt_residual <= 1e-12


def test_six_by_eight_example():
    rng = np.random.default_rng(68)
    for _ in range(10):
        H, f, G, h = random_qp(rng, 6, 8)
        sol = solve_qp(DenseQP(H, f, G, h))
        x_ref, obj_ref = qp_active_set_enumeration(H, f, G, h)
        assert sol.status is QPStatus.OPTIMAL
        np.testing.assert_allclose(sol.x, x_ref, atol=1e-6)


def test_matches_enumeration_with_bounds():
    rng = np.random.default_rng(5)
    for _ in range(40):
        n, m = int(rng.integers(1, 6)), int(rng.integers(0, 5))
        H, f, G, h = random_qp(rng, n, m)
        lb = np.where(rng.random(n) < 0.5, -rng.uniform(0.0, 1.0, n), -np.inf)
        ub = np.where(rng.random(n) < 0.5, rng.uniform(0.0, 1.0, n), np.inf)
        # keep the problem feasible: centre the random point at zero
        h = np.maximum(h, 0.1)
        qp = DenseQP(H, f, G.reshape(m, n), h, lb=lb, ub=ub)
        sol = solve_qp(qp)
        C = np.vstack([G.reshape(m, n), -np.eye(n)[np.isfinite(lb)], np.eye(n)[np.isfinite(ub)]])
        d = np.concatenate([h, -lb[np.isfinite(lb)], ub[np.isfinite(ub)]])
        x_ref, _ = qp_active_set_enumeration(H, f, C, d)
        assert sol.status is QPStatus.OPTIMAL
        np.testing.assert_allclose(sol.x, x_ref, atol=1e-6)
        assert sol.kkt_residual <= 1e-8


def test_kkt_residual_grows_linearly_under_perturbation():
    H = np.array([[2.0, 0.5], [0.5, 1.0]])
    qp = DenseQP(H, [-1.0, -1.0], [[1.0, 1.0]], [0.5])
    sol = solve_qp(qp)
    eps = np.array([1e-4, 2e-4, 4e-4, 8e-4])
    res = []
    for e in eps:
        x = sol.x + e * np.array([1.0, 0.0])
        res.append(kkt_residual(qp, x, sol.duals))
    slopes = np.array(res) / eps
    # finite-difference sensitivity: constant slope equal to the largest derivative
    np.testing.assert_allclose(slopes, slopes[0], rtol=1e-6)
    assert slopes[0] == pytest.approx(max(H[0, 0], H[1, 0], 1.0, sol.duals[0]), rel=1e-6)


def test_scaling_invariance():
    rng = np.random.default_rng(11)
    for _ in range(20):
        H, f, G, h = random_qp(rng, 5, 7)
        base = solve_qp(DenseQP(H, f, G, h)).x
        for alpha in (1e-3, 0.5, 7.0, 1e3):
            scaled = solve_qp(DenseQP(alpha * H, alpha * f, G, h), tol_kkt=1e-8 * max(1.0, alpha)).x
            np.testing.assert_allclose(scaled, base, atol=1e-8)


def test_objective_trace_monotone_and_residual_converges():
    rng = np.random.default_rng(2)
    for _ in range(30):
        H, f, G, h = random_qp(rng, 8, 10)
        sol = solve_qp(DenseQP(H, f, G, h))
        trace = np.array(sol.objective_trace)
        assert np.all(np.diff(trace) >= -1e-12 * np.maximum(1.0, np.abs(trace[1:])))
        assert sol.kkt_residual <= 1e-8


def test_infeasible_detected():
    qp = DenseQP([[1.0]], [0.0], [[1.0], [-1.0]], [0.0, -1.0])  # x <= 0 and x >= 1
    assert solve_qp(qp).status is QPStatus.INFEASIBLE


def test_infeasible_after_dropping():
    qp = DenseQP(np.eye(2), [0.0, 0.0], [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]], [-1.0, -1.0, -1.0])
    # x1 <= -1, x2 <= -1 but x1 + x2 >= 1
    assert solve_qp(qp).status is QPStatus.INFEASIBLE


def test_max_iter_returns_iterate():
    rng = np.random.default_rng(0)
    H, f, G, h = random_qp(rng, 6, 10)
    h = h - 5.0 * np.abs(G).sum(axis=1)  # force many active constraints
    qp = DenseQP(H, f, G, h)
    sol = solve_qp(qp, max_iter=1)
    assert sol.status in (QPStatus.MAX_ITER, QPStatus.INFEASIBLE)
    assert sol.iterations <= 1
    assert np.isfinite(sol.kkt_residual)


def test_semidefinite_hessian_regularized():
    H = np.diag([1.0, 0.0])
    qp = DenseQP(H, [0.0, 1.0], np.zeros((0, 2)), np.zeros(0), lb=[-np.inf, 0.0])
    sol = solve_qp(qp)
    assert sol.regularization == 1e-9
    assert sol.status is QPStatus.OPTIMAL
    np.testing.assert_allclose(sol.x, [0.0, 0.0], atol=1e-12)


def test_lowest_index_enters_first_on_ties():
    qp = DenseQP(np.eye(2), [0.0, 0.0], [[0.0, -1.0], [-1.0, 0.0]], [-1.0, -1.0])
    sol = solve_qp(qp)
    assert sol.active_set == (0, 1)


def test_deterministic():
    rng = np.random.default_rng(9)
    H, f, G, h = random_qp(rng, 8, 10)
    a = solve_qp(DenseQP(H, f, G, h))
    b = solve_qp(DenseQP(H, f, G, h))
    assert a.x.tobytes() == b.x.tobytes()
    assert a.active_set == b.active_set


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(H=[[1.0, 2.0], [0.0, 1.0]], f=[0, 0], G=np.zeros((0, 2)), h=[]),
        dict(H=np.eye(2), f=[0, 0], G=[[1.0, 1.0]], h=[1.0, 2.0]),
        dict(H=np.eye(2), f=[0, 0], G=np.zeros((0, 2)), h=[], lb=[1.0, 1.0], ub=[0.0, 2.0]),
        dict(H=np.eye(3), f=[0, 0], G=np.zeros((0, 2)), h=[]),
    ],
)
def test_invalid_problems_rejected(kwargs):
    with pytest.raises(ValueError):
        DenseQP(**kwargs)


def test_indefinite_hessian_rejected():
    with pytest.raises(ValueError):
        solve_qp(DenseQP(np.diag([1.0, -1.0]), [0.0, 0.0], np.zeros((0, 2)), np.zeros(0)))
