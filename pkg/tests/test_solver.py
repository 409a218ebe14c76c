import numpy as np
import pytest
import scipy.optimize

from storagemarket.solver import (ConvexProgram, Infeasible, MaxIterations,
                                  SolverSettings, Unbounded, kkt_residual, solve)


def test_scalar_bound():
    # min 1/2 x^2 s.t. x >= 1: KKT gives x = 1, multiplier 1
    prog = ConvexProgram.from_quadratic([[1.0]], [0.0], G=[[-1.0]], h=[-1.0])
    sol = solve(prog)
    assert sol.point == pytest.approx([1.0], abs=1e-10)
    assert sol.ineq_duals == pytest.approx([1.0], abs=1e-8)
    assert sol.kkt_residual <= 1e-8


def test_equality_symmetry():
    # min x^2 + y^2 s.t. x + y = 2 -> (1, 1); our Lagrangian sign gives dual -2
    prog = ConvexProgram.from_quadratic(2 * np.eye(2), np.zeros(2), A=[[1.0, 1.0]], b=[2.0])
    sol = solve(prog)
    assert sol.point == pytest.approx([1.0, 1.0], abs=1e-10)
    assert sol.eq_duals == pytest.approx([-2.0], abs=1e-8)


def test_scalarized_best_response():
    # max -dtau*x - 0.95125 x^2 on [0, 1] at dtau = -1.19 -> x = 1.19/1.9025
    prog = ConvexProgram.from_quadratic([[1.9025]], [-1.19], G=[[-1.0], [1.0]], h=[0.0, 1.0])
    sol = solve(prog)
    assert sol.point == pytest.approx([1.19 / 1.9025], abs=1e-10)


def test_infeasible():
    prog = ConvexProgram.from_quadratic([[1.0]], [0.0], G=[[1.0], [-1.0]], h=[0.0, -1.0])
    with pytest.raises(Infeasible):
        solve(prog)


def test_unbounded():
    prog = ConvexProgram.from_quadratic([[0.0]], [-1.0])
    with pytest.raises(Unbounded):
        solve(prog)


def test_max_iterations_reports_best_iterate():
    n = 8
    rng = np.random.default_rng(3)
    M = rng.normal(size=(n, n))
    prog = ConvexProgram.from_quadratic(M @ M.T + np.eye(n), rng.normal(size=n),
                                        G=np.vstack([np.eye(n), -np.eye(n)]),
                                        h=np.concatenate([np.ones(n), np.ones(n)]))
    with pytest.raises(MaxIterations) as err:
        solve(prog, SolverSettings(max_iterations=1))
    assert err.value.best_point.shape == (n,)
    assert np.isfinite(err.value.residual)


def test_degenerate_duplicate_rows_min_norm_duals():
    # two copies of x >= 0.5: the multiplier mass splits evenly
    prog = ConvexProgram.from_quadratic([[2.0]], [0.0], G=[[-1.0], [-1.0]], h=[-0.5, -0.5])
    sol = solve(prog)
    assert sol.point == pytest.approx([0.5], abs=1e-10)
    assert sol.ineq_duals == pytest.approx([0.5, 0.5], abs=1e-7)
    assert sol.kkt_residual <= 1e-8


def test_residual_recomputes_from_returned_point():
    rng = np.random.default_rng(11)
    for _ in range(25):
        n = int(rng.integers(2, 6))
        M = rng.normal(size=(n, n))
        P = M @ M.T + 0.2 * np.eye(n)
        q = rng.normal(size=n)
        G = rng.normal(size=(3, n))
        xf = rng.normal(size=n)
        h = G @ xf + rng.uniform(0.05, 1.0, size=3)
        prog = ConvexProgram.from_quadratic(P, q, G=G, h=h)
        sol = solve(prog)
        again = kkt_residual(prog, sol.point, sol.eq_duals, sol.ineq_duals)
        assert abs(again - sol.kkt_residual) <= 1e-12
        assert sol.kkt_residual <= 1e-8
        assert np.all(sol.ineq_duals >= -1e-12)


def test_random_qps_match_slsqp():
    rng = np.random.default_rng(0)
    for trial in range(40):
        n = int(rng.integers(2, 7))
        m = int(rng.integers(1, 5))
        M = rng.normal(size=(n, n))
        P = M @ M.T + 0.1 * np.eye(n)
        q = rng.normal(size=n)
        G = rng.normal(size=(m, n))
        xf = rng.normal(size=n)
        h = G @ xf + rng.uniform(0.1, 1.0, size=m)
        A = b = None
        if rng.random() < 0.5:
            A = rng.normal(size=(1, n))
            b = A @ xf
        prog = ConvexProgram.from_quadratic(P, q, A=A, b=b, G=G, h=h)
        sol = solve(prog)
        cons = [{"type": "ineq", "fun": lambda x, G=G, h=h: h - G @ x}]
        if A is not None:
            cons.append({"type": "eq", "fun": lambda x, A=A, b=b: A @ x - b})
        ref = scipy.optimize.minimize(lambda x: 0.5 * x @ P @ x + q @ x, xf,
                                      jac=lambda x: P @ x + q, constraints=cons,
                                      method="SLSQP",
                                      options={"maxiter": 300, "ftol": 1e-12})
        assert sol.objective_value <= ref.fun + 1e-7, trial


def test_dual_sensitivity_of_equality_rhs():
    # value function slope equals -eq_dual under this Lagrangian convention
    rng = np.random.default_rng(5)
    for _ in range(10):
        n = int(rng.integers(2, 5))
        M = rng.normal(size=(n, n))
        P = M @ M.T + 0.5 * np.eye(n)
        q = rng.normal(size=n)
        A = rng.normal(size=(1, n))
        b = np.array([rng.normal()])
        prog = ConvexProgram.from_quadratic(P, q, A=A, b=b)
        sol = solve(prog)
        eps = 1e-6
        up = solve(ConvexProgram.from_quadratic(P, q, A=A, b=b + eps)).objective_value
        dn = solve(ConvexProgram.from_quadratic(P, q, A=A, b=b - eps)).objective_value
        fd = (up - dn) / (2 * eps)
        assert fd == pytest.approx(-sol.eq_duals[0], abs=1e-5)


def test_gradient_oracle_check():
    prog = ConvexProgram.from_quadratic(np.diag([2.0, 4.0]), [1.0, -1.0])
    rng = np.random.default_rng(2)
    assert prog.check_gradient(rng.normal(size=(5, 2))) <= 1e-5
    bad = ConvexProgram(dimension=1, objective=lambda x: float(x[0] ** 2),
                        gradient=lambda x: 3 * x)
    with pytest.raises(ValueError):
        bad.check_gradient([np.array([1.0])])


def test_projected_gradient_general_convex():
    c = np.array([1.0, 2.0, 3.0])
    prog = ConvexProgram(dimension=3,
                         objective=lambda x: float(np.sum(np.exp(x)) - c @ x),
                         gradient=lambda x: np.exp(x) - c,
                         A=[[1.0, 1.0, 1.0]], b=[0.0], G=np.eye(3), h=np.ones(3))
    sol = solve(prog, SolverSettings(step_control="backtracking"))
    ref = scipy.optimize.minimize(prog.objective, np.zeros(3), jac=prog.gradient,
                                  constraints=[{"type": "eq", "fun": lambda x: np.sum(x)},
                                               {"type": "ineq", "fun": lambda x: 1 - x}],
                                  method="SLSQP", options={"ftol": 1e-14})
    assert sol.objective_value == pytest.approx(ref.fun, abs=1e-7)
    assert sol.kkt_residual <= 1e-8
