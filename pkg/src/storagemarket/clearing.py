"""Market clearing: minimum-cost dispatch, locational marginal prices, sanity checks.

The clearing problem per period is

    min  sum_b integral_0^{g_b} (a_b + b_b x) dx
    s.t. 1.g - 1.q + 1.d_bus = 0          (zeta)
         H (g - q + d_bus) <= f_bar       (mu >= 0)
         g >= 0

and prices follow the convention lambda = -1*zeta - H'.mu, which makes the
LMP equal the marginal generation cost in an uncongested single-bus system
and equal the sensitivity of the dispatch cost to nodal demand.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .network import DemandProfile, Network, NodalInjections
from .solver import ConvexProgram, Infeasible, SolverSettings, solve


class InfeasibleDispatch(Exception):
    """Line limits or generation nonnegativity make power balance impossible."""


@dataclass(frozen=True)
class MarketOutcome:
    """Cleared dispatch with duals.  `system_cost` includes the storage-cost term."""

    generation: np.ndarray      # (n_buses, T)
    lmps: np.ndarray            # (n_buses, T)
    balance_duals: np.ndarray   # (T,)
    line_duals: np.ndarray      # (n_lines, T)
    system_cost: float
    generation_cost: float
    storage_cost: float
    kkt_residual: float


def _clear_period(network: Network, q_t: np.ndarray, d_t: np.ndarray, t: int,
                  settings: SolverSettings):
    n = network.n_buses
    H = network.shift_factors
    net_withdrawal = float(np.sum(q_t) - np.sum(d_t))
    if net_withdrawal < -settings.kkt_tolerance:
        raise InfeasibleDispatch(
            f"period {t}: storage injects more than total demand; g >= 0 cannot balance")
    P = np.diag(network.gen_cost_slope[:, t])
    qlin = network.gen_cost_intercept[:, t]
    A = np.ones((1, n))
    b = np.array([max(net_withdrawal, 0.0)])
    G = np.vstack([H, -np.eye(n)]) if network.n_lines else -np.eye(n)
    h = (np.concatenate([network.line_limits + H @ (q_t - d_t), np.zeros(n)])
         if network.n_lines else np.zeros(n))
    prog = ConvexProgram.from_quadratic(P, qlin, A=A, b=b, G=G, h=h)
    x0 = np.full(n, b[0] / n)
    try:
        sol = solve(prog, settings, x0=x0)
    except Infeasible as exc:
        raise InfeasibleDispatch(f"period {t}: {exc}") from exc
    zeta = float(sol.eq_duals[0])
    mu = sol.ineq_duals[:network.n_lines]
    lam = -zeta * np.ones(n) - (H.T @ mu if network.n_lines else 0.0)
    return sol, zeta, mu, lam


def clear_market(network: Network, demand: DemandProfile,
                 injections: Optional[NodalInjections] = None,
                 storage_costs: float = 0.0,
                 settings: SolverSettings = SolverSettings()) -> MarketOutcome:
    """Clear every period against fixed storage injections.

    The storage cost enters the reported system cost as the precomputed
    scalar `storage_costs`; the dispatch itself only sees net injections.
    Periods are independent, so concurrent calls over disjoint scenarios
    are safe (all inputs immutable).
    """
    n, T = network.n_buses, demand.n_periods
    if network.n_periods != T:
        raise ValueError("network horizon differs from demand horizon")
    d = injections.d_bus if injections is not None else np.zeros((n, T))
    if d.shape != (n, T):
        raise ValueError("injections shape differs from (n_buses, n_periods)")
    gen = np.zeros((n, T))
    lmps = np.zeros((n, T))
    zetas = np.zeros(T)
    mus = np.zeros((network.n_lines, T))
    worst = 0.0
    for t in range(T):
        sol, zeta, mu, lam = _clear_period(network, demand.q[:, t], d[:, t], t, settings)
        gen[:, t] = sol.point
        lmps[:, t] = lam
        zetas[t] = zeta
        mus[:, t] = mu
        worst = max(worst, sol.kkt_residual)
    gen_cost = network.generation_cost(gen)
    return MarketOutcome(generation=gen, lmps=lmps, balance_duals=zetas,
                         line_duals=mus, system_cost=gen_cost + storage_costs,
                         generation_cost=gen_cost, storage_cost=storage_costs,
                         kkt_residual=worst)


def clear_single_period(network: Network, demand: DemandProfile, t: int,
                        injections_t: np.ndarray,
                        settings: SolverSettings = SolverSettings()):
    """Dispatch one period at the given injection vector.

    Returns (generation_t, lmps_t); cheaper than a full horizon clear inside
    per-period model fits.
    """
    sol, zeta, mu, lam = _clear_period(network, demand.q[:, t],
                                       np.asarray(injections_t, float), t, settings)
    return sol.point, lam


def system_cost(network: Network, demand: DemandProfile, units: Sequence,
                schedules: dict, settings: SolverSettings = SolverSettings()) -> float:
    """Dispatch cost plus storage degradation cost at the given unit schedules."""
    injections = NodalInjections.from_schedules(units, schedules, network.n_buses)
    c_storage = sum(u.cost(schedules[u.id]) for u in units if u.id in schedules)
    return clear_market(network, demand, injections, c_storage, settings).system_cost


def dispatch_cost(network: Network, demand: DemandProfile, injections: NodalInjections,
                  settings: SolverSettings = SolverSettings()) -> float:
    """Generation-side cost only, as a function of net nodal injections."""
    return clear_market(network, demand, injections, 0.0, settings).generation_cost


def _active_pattern(network: Network, outcome: MarketOutcome, demand, d,
                    tol: float = 1e-7):
    """Which line and g>=0 constraints bind, per period; used to flag degeneracy."""
    pats = []
    for t in range(network.n_periods):
        g = outcome.generation[:, t]
        act = {("g0", b) for b in range(network.n_buses) if g[b] <= tol}
        if network.n_lines:
            flows = network.shift_factors @ (g - demand.q[:, t] + d[:, t])
            act |= {("line", l) for l in range(network.n_lines)
                    if flows[l] >= network.line_limits[l] - tol}
        pats.append(frozenset(act))
    return pats


@dataclass(frozen=True)
class LmpSensitivityReport:
    max_rel_deviation: float
    deviations: np.ndarray          # (n_buses, T); NaN where degenerate
    degenerate: tuple               # ((bus, t), ...) entries with active-set changes
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_rel_deviation <= self.tolerance


def lmp_sensitivity_check(network: Network, demand: DemandProfile,
                          injections: Optional[NodalInjections] = None,
                          epsilon: float = 1e-5, tolerance: float = 1e-4,
                          settings: SolverSettings = SolverSettings()) -> LmpSensitivityReport:
    """Compare LMPs against central finite differences of the dispatch cost in demand.

    Entries where the binding constraint pattern changes inside the
    finite-difference step are reported as degenerate, not failed.
    """
    n, T = network.n_buses, demand.n_periods
    base = clear_market(network, demand, injections, 0.0, settings)
    d = injections.d_bus if injections is not None else np.zeros((n, T))
    devs = np.full((n, T), np.nan)
    degenerate = []
    for bus in range(n):
        for t in range(T):
            shifted = []
            pats = []
            ok = True
            for sign in (+1, -1):
                q2 = demand.q.copy()
                q2[bus, t] += sign * epsilon
                if q2[bus, t] < 0:
                    ok = False
                    break
                out = clear_market(network, DemandProfile(q2), NodalInjections(d), 0.0, settings)
                shifted.append(out.generation_cost)
                pats.append(_active_pattern(network, out, DemandProfile(q2), d)[t])
            if not ok:
                degenerate.append((bus, t))
                continue
            if pats[0] != pats[1]:
                degenerate.append((bus, t))
                continue
            fd = (shifted[0] - shifted[1]) / (2 * epsilon)
            lam = base.lmps[bus, t]
            devs[bus, t] = abs(fd - lam) / max(1.0, abs(lam))
    finite = devs[np.isfinite(devs)]
    worst = float(np.max(finite)) if finite.size else 0.0
    return LmpSensitivityReport(max_rel_deviation=worst, deviations=devs,
                                degenerate=tuple(degenerate), tolerance=tolerance)


@dataclass(frozen=True)
class ConvexityReport:
    worst_midpoint_violation: float
    min_hessian_eigenvalue: float
    skipped_hessian_points: int

    @property
    def passed(self) -> bool:
        return (self.worst_midpoint_violation <= 1e-9
                and self.min_hessian_eigenvalue >= -1e-6)


def convexity_check(network: Network, demand: DemandProfile,
                    region_sample: Sequence[NodalInjections],
                    n_pairs: int = 20, seed: int = 0,
                    settings: SolverSettings = SolverSettings()) -> ConvexityReport:
    """Numerically probe convexity of the dispatch cost in the injections.

    Midpoint inequality over random pairs from the sample, plus a
    finite-difference Hessian (per period, fixed active set) at each point.
    The storage-cost term is additively convex by construction and excluded.
    """
    rng = np.random.default_rng(seed)
    pts = list(region_sample)
    costs = [dispatch_cost(network, demand, p, settings) for p in pts]
    worst = -np.inf
    for _ in range(n_pairs):
        i, j = rng.integers(0, len(pts), size=2)
        theta = rng.uniform(0.05, 0.95)
        mid = NodalInjections(theta * pts[i].d_bus + (1 - theta) * pts[j].d_bus)
        lhs = dispatch_cost(network, demand, mid, settings)
        rhs = theta * costs[i] + (1 - theta) * costs[j]
        worst = max(worst, lhs - rhs)

    eps = 1e-4
    min_eig = np.inf
    skipped = 0
    n = network.n_buses
    for p in pts:
        for t in range(demand.n_periods):
            def cost_at(delta):
                d2 = p.d_bus.copy()
                d2[:, t] += delta
                out = clear_market(network, demand, NodalInjections(d2), 0.0, settings)
                pat = _active_pattern(network, out, demand, d2)[t]
                return out.generation_cost, pat

            base_cost, base_pat = cost_at(np.zeros(n))
            H_fd = np.zeros((n, n))
            consistent = True
            for i in range(n):
                for j in range(i, n):
                    vals = []
                    for si, sj in ((1, 1), (1, -1), (-1, 1), (-1, -1)):
                        delta = np.zeros(n)
                        delta[i] += si * eps
                        delta[j] += sj * eps
                        try:
                            c, pat = cost_at(delta)
                        except InfeasibleDispatch:
                            consistent = False
                            break
                        if pat != base_pat:
                            consistent = False
                            break
                        vals.append(c)
                    if not consistent:
                        break
                    H_fd[i, j] = H_fd[j, i] = (vals[0] - vals[1] - vals[2] + vals[3]) / (4 * eps * eps)
                if not consistent:
                    break
            if not consistent:
                skipped += 1
                continue
            min_eig = min(min_eig, float(np.min(np.linalg.eigvalsh(H_fd))))
    if not np.isfinite(min_eig):
        min_eig = 0.0
    return ConvexityReport(worst_midpoint_violation=float(worst),
                           min_hessian_eigenvalue=min_eig,
                           skipped_hessian_points=skipped)
