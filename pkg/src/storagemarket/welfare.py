"""System-welfare analysis: social optimum, storage-benefit checks, mitigated pricing.

The social optimum collapses the dispatch-then-act bilevel program into one
convex QP over generation and storage actions jointly.  The mitigated price
replaces the aggregator's LMP settlement with the negated generation-cost
integral plus regulator constants, which aligns its bid with the social
optimum and makes its profit a free parameter of the constants.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
import scipy.linalg

from .clearing import InfeasibleDispatch, MarketOutcome, clear_market, clear_single_period
from .games import SearchSettings
from .network import DemandProfile, Network, NodalInjections
from .schedopt import default_starts, joint_constraints, maximize_over_schedules, unstack_schedules
from .solver import ConvexProgram, SolverSettings, solve
from .storage import StorageSchedule, StorageUnit
from .twoperiod import TwoPeriodModel, scalarizable


class NonInteriorSolution(Exception):
    """The symmetric split violates a cooperation bound; carries the clamped split."""

    def __init__(self, message: str, constrained_split: tuple):
        super().__init__(message)
        self.constrained_split = constrained_split


@dataclass(frozen=True)
class MpmpConfig:
    """Regulator constants, one per bus and period."""

    constants: np.ndarray

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.constants, float))
        if not np.all(np.isfinite(c)):
            raise ValueError("constants must be finite")
        object.__setattr__(self, "constants", c)

    @classmethod
    def zero(cls, n_buses: int, n_periods: int) -> "MpmpConfig":
        return cls(np.zeros((n_buses, n_periods)))

    @classmethod
    def uniform(cls, value: float, n_buses: int, n_periods: int) -> "MpmpConfig":
        return cls(np.full((n_buses, n_periods), value))

    @property
    def total(self) -> float:
        return float(np.sum(self.constants))


@dataclass(frozen=True)
class WelfareReport:
    cost_no_storage: float
    cost_at_actions: float
    cost_social: float
    agg_su_profit: float
    load_payment: float


def load_payment(outcome: MarketOutcome, demand: DemandProfile) -> float:
    """What consumers pay at the cleared prices."""
    return float(np.sum(outcome.lmps * demand.q))


def social_optimum(network: Network, demand: DemandProfile,
                   units: Sequence[StorageUnit],
                   settings: SolverSettings = SolverSettings()) -> Dict[str, StorageSchedule]:
    """Storage actions minimizing the system cost, as one joint convex QP.

    Dispatch cost is jointly convex in (generation, actions), so the nested
    clear-then-choose structure collapses exactly.
    """
    units = list(units)
    n, T = network.n_buses, demand.n_periods
    ng = n * T

    A_su, b_su, G_su, h_su = joint_constraints(units, T)
    nz = A_su.shape[1]

    # objective over [g; z]
    P = np.zeros((ng + nz, ng + nz))
    qlin = np.zeros(ng + nz)
    P[:ng, :ng] = np.diag(network.gen_cost_slope.reshape(-1))
    qlin[:ng] = network.gen_cost_intercept.reshape(-1)
    for k, u in enumerate(units):
        base = ng + 2 * T * k
        P[base:base + T, base:base + T] = u.w_plus * np.eye(T)
        P[base + T:base + 2 * T, base + T:base + 2 * T] = u.w_minus * np.eye(T)

    # net injection at bus b, period t as a row over [g; z]
    def injection_row(b, t):
        row = np.zeros(ng + nz)
        for k, u in enumerate(units):
            if u.bus == b:
                base = ng + 2 * T * k
                row[base + t] = 1.0       # discharge
                row[base + T + t] = -1.0  # charge
        return row

    rows_eq, rhs_eq = [], []
    for t in range(T):
        row = np.zeros(ng + nz)
        for b in range(n):
            row[b * T + t] = 1.0
            row += injection_row(b, t)
        rows_eq.append(row)
        rhs_eq.append(float(np.sum(demand.q[:, t])))
    A = np.vstack([np.array(rows_eq),
                   np.hstack([np.zeros((A_su.shape[0], ng)), A_su])])
    b_vec = np.concatenate([np.array(rhs_eq), b_su])

    rows_iq, rhs_iq = [], []
    for t in range(T):
        inj = np.array([injection_row(b, t) for b in range(n)])
        gsel = np.zeros((n, ng + nz))
        for b in range(n):
            gsel[b, b * T + t] = 1.0
        for l in range(network.n_lines):
            rows_iq.append(network.shift_factors[l] @ (gsel + inj))
            rhs_iq.append(float(network.line_limits[l]
                                + network.shift_factors[l] @ demand.q[:, t]))
    gnn = np.hstack([-np.eye(ng), np.zeros((ng, nz))])
    G = np.vstack([np.array(rows_iq).reshape(-1, ng + nz), gnn,
                   np.hstack([np.zeros((G_su.shape[0], ng)), G_su])])
    h = np.concatenate([np.array(rhs_iq), np.zeros(ng), h_su])

    prog = ConvexProgram.from_quadratic(P, qlin, A=A, b=b_vec, G=G, h=h)
    g0 = clear_market(network, demand, settings=settings).generation
    x0 = np.concatenate([g0.reshape(-1), np.zeros(nz)])
    sol = solve(prog, settings, x0=x0)
    return unstack_schedules(units, sol.point[ng:], T)


@dataclass(frozen=True)
class Theorem1Report:
    cost_no_storage: float
    cost_at_actions: float
    net_revenue: float
    prop2_slack: float
    precondition_ok: bool

    @property
    def holds(self) -> bool:
        return self.cost_at_actions <= self.cost_no_storage + 1e-8

    @property
    def prop2_ok(self) -> bool:
        return self.prop2_slack >= -1e-8


def verify_theorem1(network: Network, demand: DemandProfile,
                    units: Sequence[StorageUnit], schedules: Dict[str, StorageSchedule],
                    settings: SolverSettings = SolverSettings()) -> Theorem1Report:
    """Check that the given storage actions do not raise the system cost.

    Preconditions the check on nonnegative aggregator net revenue; a
    negative-revenue schedule makes the claim vacuous and is reported, not
    asserted.  Also reports the slack of the revenue-vs-cost-change bound
    S(q,0) - S(q,d) - sum lmp.d_bus.
    """
    units = list(units)
    injections = NodalInjections.from_schedules(units, schedules, network.n_buses)
    c_storage = sum(u.cost(schedules[u.id]) for u in units)
    at = clear_market(network, demand, injections, c_storage, settings)
    base = clear_market(network, demand, settings=settings)
    revenue = float(np.sum(at.lmps * injections.d_bus))
    slack = base.system_cost - at.system_cost - revenue
    return Theorem1Report(cost_no_storage=base.system_cost,
                          cost_at_actions=at.system_cost,
                          net_revenue=revenue, prop2_slack=slack,
                          precondition_ok=revenue >= -1e-9)


@dataclass(frozen=True)
class MpmpResult:
    payments: np.ndarray   # paid to the aggregator, per bus/period
    prices: np.ndarray     # per-unit-energy price; NaN where net injection ~ 0
    defined: np.ndarray    # bool mask for the price entries


def mpmp_payment(network: Network, outcome: MarketOutcome,
                 injections: NodalInjections, config: MpmpConfig) -> MpmpResult:
    """Mitigated-price settlement: negated generation-cost integral plus constants.

    The payment form is primary; the per-unit price is the payment divided
    by the net injection and is only reported where that division is
    well-defined.
    """
    g = outcome.generation
    integral = (network.gen_cost_intercept * g
                + 0.5 * network.gen_cost_slope * g * g)
    payments = -(integral - config.constants)
    d = injections.d_bus
    defined = np.abs(d) > 1e-9
    prices = np.full_like(payments, np.nan)
    prices[defined] = payments[defined] / d[defined]
    return MpmpResult(payments=payments, prices=prices, defined=defined)


def mpmp_aggregator_profit(network: Network, demand: DemandProfile,
                           units: Sequence[StorageUnit],
                           schedules: Dict[str, StorageSchedule],
                           config: MpmpConfig,
                           settings: SolverSettings = SolverSettings()) -> float:
    """Aggregator profit when settled at the mitigated price instead of LMPs."""
    units = list(units)
    injections = NodalInjections.from_schedules(units, schedules, network.n_buses)
    cleared = clear_market(network, demand, injections, 0.0, settings)
    settled = mpmp_payment(network, cleared, injections, config)
    cost = sum(u.cost(schedules[u.id]) for u in units)
    return float(np.sum(settled.payments)) - cost


@dataclass(frozen=True)
class MpmpOutcome:
    schedules: Dict[str, StorageSchedule]
    aggregator_profit: float
    market: MarketOutcome
    report: WelfareReport


def clear_with_mpmp(network: Network, demand: DemandProfile,
                    units: Sequence[StorageUnit], config: MpmpConfig,
                    search: SearchSettings = SearchSettings()) -> MpmpOutcome:
    """Profit-maximizing aggregator bid under the mitigated price.

    Solved as an honest profit maximization over the joint action space (not
    by calling the social optimum), so the equivalence between the two is a
    checkable property rather than an implementation artifact.
    """
    units = list(units)

    def objective(schedules):
        return mpmp_aggregator_profit(network, demand, units, schedules, config,
                                      search.solver)

    if scalarizable(network, demand, units):
        model = TwoPeriodModel(network, demand, units[0])
        u = units[0]

        def scalar_obj(x):
            return objective({u.id: model.schedule(x)})

        best_x = model._maximize(scalar_obj, 0.0, model.x_max)
        schedules = {u.id: model.schedule(best_x)}
    else:
        def settlement(t, y_t):
            g_t, _ = clear_single_period(network, demand, t, y_t, search.solver)
            integral = (network.gen_cost_intercept[:, t] * g_t
                        + 0.5 * network.gen_cost_slope[:, t] * g_t * g_t)
            return float(np.sum(config.constants[:, t] - integral))

        starts = default_starts(network, demand, units, search.solver)
        schedules, _ = maximize_over_schedules(network, demand, units, settlement,
                                               starts, settings=search.solver)

    injections = NodalInjections.from_schedules(units, schedules, network.n_buses)
    c_storage = sum(u.cost(schedules[u.id]) for u in units)
    cleared = clear_market(network, demand, injections, c_storage, search.solver)
    profit = objective(schedules)
    social = social_optimum(network, demand, units, search.solver)
    inj_soc = NodalInjections.from_schedules(units, social, network.n_buses)
    c_soc = sum(u.cost(social[u.id]) for u in units)
    cost_social = clear_market(network, demand, inj_soc, c_soc, search.solver).system_cost
    report = WelfareReport(
        cost_no_storage=clear_market(network, demand, settings=search.solver).system_cost,
        cost_at_actions=cleared.system_cost,
        cost_social=cost_social,
        agg_su_profit=profit,
        load_payment=load_payment(cleared, demand))
    return MpmpOutcome(schedules=schedules, aggregator_profit=profit,
                       market=cleared, report=report)


def uniform_constant_for_target(network: Network, demand: DemandProfile,
                                units: Sequence[StorageUnit], target_profit: float,
                                settings: SolverSettings = SolverSettings()) -> MpmpConfig:
    """Uniform regulator constant achieving a target aggregator profit.

    Profit under the mitigated price is affine in the constants with unit
    slope: profit(C) = profit(0) + sum(C).
    """
    units = list(units)
    schedules = social_optimum(network, demand, units, settings)
    base = mpmp_aggregator_profit(network, demand, units, schedules,
                                  MpmpConfig.zero(network.n_buses, demand.n_periods),
                                  settings)
    cells = network.n_buses * demand.n_periods
    return MpmpConfig.uniform((target_profit - base) / cells,
                              network.n_buses, demand.n_periods)


def regulated_split(pi_reg: float, pi_a_disagree: float, pi_s_disagree: float,
                    su_profit_bounds: Optional[tuple] = None) -> tuple:
    """Symmetric bargaining split of a regulated joint profit.

    Returns (unit profit, aggregator profit); each moves by half a unit per
    unit of regulated profit.  With explicit cooperation bounds on the unit
    profit, a violated bound raises NonInteriorSolution carrying the
    clamped split.
    """
    leverage = pi_a_disagree - pi_s_disagree
    pi_s = (pi_reg - leverage) / 2.0
    pi_a = (pi_reg + leverage) / 2.0
    if su_profit_bounds is not None:
        lo, hi = su_profit_bounds
        if not lo - 1e-12 <= pi_s <= hi + 1e-12:
            clamped = float(np.clip(pi_s, lo, hi))
            raise NonInteriorSolution("cooperation bound binds the symmetric split",
                                      (clamped, pi_reg - clamped))
    return pi_s, pi_a


@dataclass(frozen=True)
class CurvePoint:
    x: float
    system_cost: float
    aggregate_profit: float
    label: str


def sweep_cost_profit_curves(network: Network, demand: DemandProfile,
                             unit: StorageUnit, x_values: Sequence[float]) -> list:
    """System cost and aggregate profit along the charge-amount axis.

    Labels: A at zero storage, B at the profit maximizer, C at the cost
    minimizer.  Grid points are independent (safe to evaluate in parallel).
    """
    model = TwoPeriodModel(network, demand, unit)
    x_b = model.maximize_aggregate()
    x_c = model.social_x()

    def make(x, label=""):
        return CurvePoint(x=float(x), system_cost=model.system_cost(float(x)),
                          aggregate_profit=model.aggregate_profit(float(x)), label=label)

    points = [make(x) for x in x_values if not np.isclose(x, 0.0)
              and not np.isclose(x, x_b) and not np.isclose(x, x_c)]
    points.append(make(0.0, "A"))
    points.append(make(x_b, "B"))
    points.append(make(x_c, "C"))
    points.sort(key=lambda p: p.x)
    return points


def compare_table(network: Network, demand: DemandProfile,
                  units: Sequence[StorageUnit],
                  search: SearchSettings = SearchSettings()) -> dict:
    """Profit / system cost / load payment at the social vs market-clearing actions."""
    from .bargaining import max_aggregate_profit

    units = list(units)
    social = social_optimum(network, demand, units, search.solver)
    inj_soc = NodalInjections.from_schedules(units, social, network.n_buses)
    c_soc = sum(u.cost(social[u.id]) for u in units)
    cleared_soc = clear_market(network, demand, inj_soc, c_soc, search.solver)
    profit_soc = (float(np.sum(cleared_soc.lmps * inj_soc.d_bus)) - c_soc)

    bid, profit_bid = max_aggregate_profit(network, demand, units, search)
    inj_bid = NodalInjections.from_schedules(units, bid, network.n_buses)
    c_bid = sum(u.cost(bid[u.id]) for u in units)
    cleared_bid = clear_market(network, demand, inj_bid, c_bid, search.solver)

    return {
        "social": {"profit": profit_soc,
                   "system_cost": cleared_soc.system_cost,
                   "load_payment": load_payment(cleared_soc, demand),
                   "schedules": social},
        "market": {"profit": profit_bid,
                   "system_cost": cleared_bid.system_cost,
                   "load_payment": load_payment(cleared_bid, demand),
                   "schedules": bid},
    }
