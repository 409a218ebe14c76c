import itertools

import numpy as np
import pytest

from conftest import (S_SOCIAL, S_STAR, S_ZERO, X_STAR, make_unit,
                      single_bus_network)
from storagemarket.clearing import (InfeasibleDispatch, clear_market, convexity_check,
                                    dispatch_cost, lmp_sensitivity_check, system_cost)
from storagemarket.network import DemandProfile, Network, NodalInjections
from storagemarket.sampling import random_feasible_schedule
from storagemarket.storage import StorageSchedule

DEMAND_15 = DemandProfile([[0.0, 5.0]])


def test_zero_storage_costs_and_prices(example1):
    out = clear_market(example1.network, example1.demand)
    assert out.system_cost == pytest.approx(S_ZERO, abs=1e-9)
    assert out.lmps == pytest.approx(np.array([[0.0, 5.0]]), abs=1e-9)


def test_social_point_cost(example1):
    out = clear_market(example1.network, example1.demand,
                       NodalInjections([[-1.0, 0.95]]),
                       storage_costs=0.5 * (1 + 0.9025))
    assert out.system_cost == pytest.approx(S_SOCIAL, abs=1e-9)


def test_market_point_cost(example1):
    inj = NodalInjections([[-X_STAR, 0.95 * X_STAR]])
    out = clear_market(example1.network, example1.demand, inj,
                       storage_costs=0.95125 * X_STAR ** 2)
    assert out.system_cost == pytest.approx(S_STAR, abs=1e-9)


def test_system_cost_of_schedules(example1):
    sched = {"su1": StorageSchedule([0.0, 0.95 * X_STAR], [X_STAR, 0.0])}
    val = system_cost(example1.network, example1.demand, example1.units, sched)
    assert val == pytest.approx(S_STAR, abs=1e-9)
    zero = {"su1": StorageSchedule.zero(2)}
    assert system_cost(example1.network, example1.demand, example1.units,
                       zero) == pytest.approx(S_ZERO, abs=1e-12)


def test_generation_cost_matches_quadrature():
    # oracle: numerical quadrature of the marginal curve a + b*x
    rng = np.random.default_rng(8)
    for _ in range(10):
        a, bslope = rng.uniform(0, 2), rng.uniform(0, 3)
        net = single_bus_network(slope=bslope, intercept=a, periods=1)
        q = rng.uniform(0.5, 4.0)
        out = clear_market(net, DemandProfile([[q]]))
        xs = np.linspace(0.0, q, 20001)
        quad = np.trapz(a + bslope * xs, xs)
        assert out.generation_cost == pytest.approx(quad, abs=1e-9)


def _enumerate_two_bus(network, q_t, d_t):
    """Brute-force oracle: enumerate candidate active sets of the one-period KKT
    system (line rows and g=0 rows), solve each, keep the feasible stationary
    candidates, return the cheapest with its prices."""
    n = network.n_buses
    H, f = network.shift_factors, network.line_limits
    a = network.gen_cost_intercept[:, 0]
    b = network.gen_cost_slope[:, 0]
    total = np.sum(q_t) - np.sum(d_t)
    rows = [("line", l) for l in range(len(f))] + [("g0", i) for i in range(n)]
    best = None
    for r in range(len(rows) + 1):
        for combo in itertools.combinations(range(len(rows)), r):
            act = [rows[k] for k in combo]
            # variables: g (n), zeta, mu per active line, gamma per active bound
            m = len(act)
            dim = n + 1 + m
            S = np.zeros((dim, dim))
            rhs = np.zeros(dim)
            for i in range(n):
                S[i, i] = b[i]
                S[i, n] = 1.0
                rhs[i] = -a[i]
            for k, (kind, idx) in enumerate(act):
                col = n + 1 + k
                for i in range(n):
                    S[i, col] = H[idx, i] if kind == "line" else (-1.0 if i == idx else 0.0)
            S[n, :n] = 1.0
            rhs[n] = total
            for k, (kind, idx) in enumerate(act):
                row = n + 1 + k
                if kind == "line":
                    S[row, :n] = H[idx]
                    rhs[row] = f[idx] + H[idx] @ (q_t - d_t)
                else:
                    S[row, idx] = 1.0
            try:
                sol = np.linalg.solve(S, rhs)
            except np.linalg.LinAlgError:
                continue
            g = sol[:n]
            duals = sol[n + 1:]
            if np.any(g < -1e-9) or np.any(duals < -1e-9):
                continue
            flows = H @ (g - q_t + d_t) if len(f) else np.zeros(0)
            if len(f) and np.any(flows > f + 1e-9):
                continue
            cost = float(np.sum(a * g + 0.5 * b * g * g))
            zeta = sol[n]
            mu = np.zeros(len(f))
            for k, (kind, idx) in enumerate(act):
                if kind == "line":
                    mu[idx] = duals[k]
            lam = -zeta * np.ones(n) - H.T @ mu
            if best is None or cost < best[0] - 1e-12:
                best = (cost, g, lam)
    return best


def test_congested_two_bus_against_enumeration():
    net = Network(gen_cost_intercept=[[0.0], [1.0]], gen_cost_slope=[[1.0], [2.0]],
                  shift_factors=[[1.0, 0.0], [-1.0, 0.0]], line_limits=[0.5, 0.5])
    q = np.array([1.0, 4.0])
    d = np.array([0.5, -0.2])
    cost, g, lam = _enumerate_two_bus(net, q, d)
    out = clear_market(net, DemandProfile(q.reshape(2, 1)),
                       NodalInjections(d.reshape(2, 1)))
    assert out.generation == pytest.approx(g.reshape(2, 1), abs=1e-7)
    assert out.lmps == pytest.approx(lam.reshape(2, 1), abs=1e-7)
    assert out.generation_cost == pytest.approx(cost, abs=1e-9)
    assert lam[0] != pytest.approx(lam[1], abs=1e-3)  # the line at its limit splits prices


def test_lmp_matches_finite_differences(example1):
    rep = lmp_sensitivity_check(example1.network, example1.demand)
    assert rep.passed
    assert rep.deviations[0, 1] < 1e-6  # quadratic cost, exact gradient at bus 0, t=1


def test_lmp_sensitivity_congested_two_bus():
    net = Network(gen_cost_intercept=[[0.0], [1.0]], gen_cost_slope=[[1.0], [2.0]],
                  shift_factors=[[1.0, 0.0], [-1.0, 0.0]], line_limits=[0.5, 0.5])
    rep = lmp_sensitivity_check(net, DemandProfile([[1.0], [4.0]]))
    assert rep.passed


def test_zero_demand_prices_at_intercept():
    net = single_bus_network(slope=1.0, intercept=0.7, periods=2)
    out = clear_market(net, DemandProfile([[0.0, 0.0]]))
    assert out.lmps == pytest.approx(0.7 * np.ones((1, 2)), abs=1e-9)


def test_convexity_scalarized_second_difference(example1, example1_model):
    # hand differentiation of the scalar cost: S(x) = 12.5 - 4.75x + 1.9025x^2,
    # so the second derivative is 3.805
    h = 1e-3
    xs = [0.4 - h, 0.4, 0.4 + h]
    vals = [example1_model.system_cost(x) for x in xs]
    second = (vals[0] - 2 * vals[1] + vals[2]) / h ** 2
    assert second == pytest.approx(3.805, abs=1e-6)
    assert second > 0


def test_convexity_check_reports(example1):
    pts = [NodalInjections([[0.0, 0.0]]),
           NodalInjections([[-1.0, 0.95]]),
           NodalInjections([[-0.5, 0.4]])]
    rep = convexity_check(example1.network, example1.demand, pts)
    assert rep.passed
    assert rep.worst_midpoint_violation <= 1e-9


def test_convexity_check_congested_two_bus():
    net = Network(gen_cost_intercept=[[0.0], [1.0]], gen_cost_slope=[[1.0], [2.0]],
                  shift_factors=[[1.0, 0.0], [-1.0, 0.0]], line_limits=[0.5, 0.5])
    pts = [NodalInjections([[0.0], [0.0]]), NodalInjections([[0.3], [-0.1]]),
           NodalInjections([[-0.4], [0.2]])]
    rep = convexity_check(net, DemandProfile([[1.0], [4.0]]), pts)
    assert rep.min_hessian_eigenvalue >= -1e-6
    assert rep.worst_midpoint_violation <= 1e-9


def test_revenue_bounded_by_cost_change(all_scenarios):
    # net revenue never exceeds the system-cost reduction, any feasible
    # physically-pure schedule (no revenue filter needed)
    rng = np.random.default_rng(17)
    for sc in all_scenarios.values():
        for _ in range(40):
            scheds = {u.id: random_feasible_schedule(u, sc.horizon, rng)
                      for u in sc.units}
            inj = NodalInjections.from_schedules(sc.units, scheds, sc.network.n_buses)
            c = sum(u.cost(scheds[u.id]) for u in sc.units)
            at = clear_market(sc.network, sc.demand, inj, c)
            base = clear_market(sc.network, sc.demand)
            revenue = float(np.sum(at.lmps * inj.d_bus))
            assert revenue <= base.system_cost - at.system_cost + 1e-8


def test_zero_injections_equal_storage_free_dispatch(example1):
    a = clear_market(example1.network, example1.demand)
    b = clear_market(example1.network, example1.demand,
                     NodalInjections.zeros(1, 2), 0.0)
    assert a.system_cost == b.system_cost
    assert np.array_equal(a.generation, b.generation)


def test_quadratic_scaling(example1):
    # doubling demand, limits, and actions scales the cost by 4 when the
    # marginal cost passes through the origin
    sched = StorageSchedule([0.0, 0.95 * 0.6], [0.6, 0.0])
    unit = example1.units[0]
    big = make_unit(uid="su1", d_max=2 * unit.d_plus_max, soc_max=2 * unit.soc_max)
    sched2 = StorageSchedule(2 * sched.d_plus, 2 * sched.d_minus)
    base = system_cost(example1.network, example1.demand, [unit], {"su1": sched})
    scaled = system_cost(example1.network, DemandProfile(2 * example1.demand.q),
                         [big], {"su1": sched2})
    assert scaled == pytest.approx(4 * base, rel=1e-10)


def test_over_injection_is_infeasible(example1):
    with pytest.raises(InfeasibleDispatch):
        clear_market(example1.network, example1.demand,
                     NodalInjections([[1.0, 1.0]]))
