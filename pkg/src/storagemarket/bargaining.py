"""Nash bargaining between the aggregator and each unit over the long-run agreement.

The parties first pin the storage actions at the joint-profit maximizer
(price terms cancel in the aggregate), then split the pie by maximizing the
product of profit gains over the disagreement point, restricted to the
cooperative set so that grim-trigger play sustains the agreement.
Bilateral: each unit negotiates separately with the others held at their
agreed outcomes, swept to a fixed point.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Dict, Optional, Sequence

import numpy as np

from .clearing import clear_market, clear_single_period
from .cooperation import MARGIN_TOL, ScalarMargins, cooperation_interval
from .games import (AggregatorConfig, SearchSettings, agg_profit, compass_search,
                    defection_equilibrium)
from .network import DemandProfile, Network, NodalInjections
from .schedopt import default_starts, maximize_over_schedules
from .storage import (PriceSchedule, StorageSchedule, StorageUnit, su_best_response,
                      su_profit)
from .twoperiod import TwoPeriodModel, scalarizable


class EmptyBargainingSet(Exception):
    """The cooperative set excludes the aggregate-optimal schedule."""


def max_aggregate_profit(network: Network, demand: DemandProfile,
                         units: Sequence[StorageUnit],
                         search: SearchSettings = SearchSettings()):
    """Joint aggregator+units profit maximizer (the aggregator's market bid).

    Returns (schedules, value) of
        max  sum_t lmp_t . d_bus_t  -  sum_i c_i(d_i)
    over the joint feasible set, with LMPs cleared at the candidate
    injections (price-anticipatory).  Posted prices cancel out of the
    aggregate and do not appear.
    """
    units = list(units)
    if scalarizable(network, demand, units):
        model = TwoPeriodModel(network, demand, units[0])
        x = model.maximize_aggregate()
        return {units[0].id: model.schedule(x)}, model.aggregate_profit(x)

    def settlement(t, y_t):
        _, lam = clear_single_period(network, demand, t, y_t, search.solver)
        return float(lam @ y_t)

    starts = default_starts(network, demand, units, search.solver)
    return maximize_over_schedules(network, demand, units, settlement, starts,
                                   settings=search.solver)


@dataclass
class BargainingProblem:
    """Inputs of the per-unit bargaining round."""

    network: Network
    demand: DemandProfile
    units: Sequence[StorageUnit]
    config: AggregatorConfig
    discount: float
    d_star: Dict[str, StorageSchedule]
    pi_star: float
    disagreement: Dict[str, tuple]  # unit id -> (aggregator, unit) defection profits

    @classmethod
    def build(cls, network, demand, units, config: AggregatorConfig, discount: float,
              search: SearchSettings = SearchSettings()) -> "BargainingProblem":
        units = [u for u in units if u.id in config.managed_units]
        d_star, pi_star = max_aggregate_profit(network, demand, units, search)
        # defection equilibria with the others at the agreed actions and zero
        # prices; see adjusted_agg_disagreement for the price-term correction
        seed_prices = {u.id: PriceSchedule(tau=np.zeros(demand.n_periods),
                                           bound=config.price_bound) for u in units}
        disagreement = {}
        for u in units:
            defect = defection_equilibrium(network, demand, units, config,
                                           seed_prices, d_star, u.id, search)
            disagreement[u.id] = (defect.agg_profit, defect.su_profits[u.id])
        return cls(network=network, demand=demand, units=units, config=config,
                   discount=discount, d_star=d_star, pi_star=pi_star,
                   disagreement=disagreement)

    def adjusted_agg_disagreement(self, su_id: str,
                                  agreed_prices: Dict[str, PriceSchedule]) -> float:
        """Aggregator disagreement value under the actual prices of the other units.

        The other units' payments enter both the agreed and the defection
        profit as the same constant, so the stored zero-price defection value
        shifts by exactly -sum_j tau_j . d_star_j over the others.
        """
        base = self.disagreement[su_id][0]
        for u in self.units:
            if u.id == su_id:
                continue
            base -= float(agreed_prices[u.id].tau @ self.d_star[u.id].net)
        return base


@dataclass(frozen=True)
class BargainingOutcome:
    agreed_prices: Dict[str, PriceSchedule]
    agreed_schedules: Dict[str, StorageSchedule]
    agg_profit: float
    su_profits: Dict[str, float]
    nash_product: float
    interior: bool


def _scalar_slice(problem: BargainingProblem, search: SearchSettings) -> BargainingOutcome:
    unit = problem.units[0]
    model = TwoPeriodModel(problem.network, problem.demand, unit)
    margins = ScalarMargins.build(model, problem.discount, problem.config.price_bound)
    pi_a_def, pi_s_def = problem.disagreement[unit.id]
    x_star = float(problem.d_star[unit.id].d_minus[0])
    interval = cooperation_interval(margins, x_star, problem.config.price_bound)
    if interval is None:
        raise EmptyBargainingSet(
            "no spread sustains cooperation at the aggregate-optimal schedule")
    lo, hi = interval
    rev = model.revenue(x_star)

    # product of two affine profit gains: concave parabola in the spread
    def product(dt):
        gain_s = model.su_profit(x_star, dt) - pi_s_def
        gain_a = rev + dt * x_star - pi_a_def
        return gain_s * gain_a

    if x_star > 1e-12:
        cost = model.cost_coeff * x_star * x_star
        vertex = -((pi_s_def + cost) + (rev - pi_a_def)) / (2 * x_star)
        dtau = float(np.clip(vertex, lo, hi))
        interior = lo + 1e-9 < dtau < hi - 1e-9
    else:
        dtau, interior = 0.0, False
    prices = {unit.id: model.prices(dtau, problem.config.price_bound)}
    pi_s = model.su_profit(x_star, dtau)
    pi_a = rev + dtau * x_star
    return BargainingOutcome(agreed_prices=prices,
                             agreed_schedules=dict(problem.d_star),
                             agg_profit=pi_a, su_profits={unit.id: pi_s},
                             nash_product=product(dtau), interior=interior)


def nash_bargain(problem: BargainingProblem, su_id: str,
                 agreed_prices: Optional[Dict[str, PriceSchedule]] = None,
                 search: SearchSettings = SearchSettings()) -> BargainingOutcome:
    """Bargaining slice for one unit: prices maximizing the gain product.

    Schedules stay pinned at the aggregate optimizer; only the named unit's
    prices move, restricted to its cooperative set.  An interior solution
    satisfies the symmetric-split equations; boundary solutions sit on a
    cooperation margin.
    """
    units = list(problem.units)
    if len(units) == 1 and scalarizable(problem.network, problem.demand, units):
        return _scalar_slice(problem, search)

    unit = next(u for u in units if u.id == su_id)
    T = problem.demand.n_periods
    bound = problem.config.price_bound
    if agreed_prices is None:
        agreed_prices = {u.id: PriceSchedule(tau=np.zeros(T), bound=bound) for u in units}
    pi_s_def = problem.disagreement[su_id][1]
    pi_a_def = problem.adjusted_agg_disagreement(su_id, agreed_prices)
    delta = problem.discount

    def evaluate(tau):
        prices = dict(agreed_prices)
        prices[su_id] = PriceSchedule(tau=tau, bound=bound)
        pi_a = agg_profit(problem.network, problem.demand, units, prices,
                          problem.d_star, search.solver)
        pi_s = su_profit(unit, problem.d_star[su_id], prices[su_id])
        deviation = su_best_response(unit, prices[su_id], search.solver)
        dev_profit = su_profit(unit, deviation, prices[su_id])
        alpha_a = pi_a - pi_a_def
        alpha_s = pi_s - (1.0 - delta) * dev_profit - delta * pi_s_def
        margin = min(alpha_a, alpha_s)
        product = (pi_s - pi_s_def) * (pi_a - pi_a_def)
        return product, margin, pi_a, pi_s, prices

    def score(tau):
        product, margin, *_ = evaluate(tau)
        return product if margin >= -MARGIN_TOL else -np.inf

    # phase 1: climb the worst margin into the cooperative set
    lmps = clear_market(problem.network, problem.demand,
                        NodalInjections.from_schedules(units, problem.d_star,
                                                       problem.network.n_buses),
                        0.0, search.solver).lmps
    seeds = [np.clip(np.asarray(agreed_prices[su_id].tau, float), 0, bound),
             np.clip(lmps[unit.bus], 0, bound), np.zeros(T)]
    feasible_tau = None
    budget = search.budget
    for seed in seeds:
        if evaluate(seed)[1] >= -MARGIN_TOL:
            feasible_tau = seed
            break
        tau, margin, used, _ = compass_search(lambda t: evaluate(t)[1], seed,
                                              np.zeros(T), np.full(T, bound),
                                              budget=max(budget // 3, 50),
                                              step_tolerance=search.step_tolerance)
        budget -= used
        if margin >= -MARGIN_TOL:
            feasible_tau = tau
            break
    if feasible_tau is None:
        raise EmptyBargainingSet(
            "no price schedule in the cooperative set at the pinned schedule")

    # phase 2: maximize the gain product from inside the set
    best_tau, best_val, _, _ = compass_search(
        score, feasible_tau, np.zeros(T), np.full(T, bound),
        budget=max(budget, 100), step_tolerance=search.step_tolerance)
    product, margin, pi_a, pi_s, prices = evaluate(best_tau)
    su_profits = {u.id: su_profit(u, problem.d_star[u.id], prices[u.id]) for u in units}
    return BargainingOutcome(agreed_prices=prices,
                             agreed_schedules=dict(problem.d_star),
                             agg_profit=pi_a, su_profits=su_profits,
                             nash_product=product, interior=margin > 1e-6)


def nash_bargain_all(problem: BargainingProblem,
                     search: SearchSettings = SearchSettings(),
                     max_sweeps: int = 100, tol: float = 1e-8) -> BargainingOutcome:
    """Sweep per-unit bargaining slices to a fixed point of the agreed prices."""
    units = list(problem.units)
    if len(units) == 1:
        return nash_bargain(problem, units[0].id, search=search)
    T = problem.demand.n_periods
    prices = {u.id: PriceSchedule(tau=np.zeros(T), bound=problem.config.price_bound)
              for u in units}
    outcome = None
    for _ in range(max_sweeps):
        change = 0.0
        for u in units:
            outcome = nash_bargain(problem, u.id, agreed_prices=prices, search=search)
            new = outcome.agreed_prices[u.id]
            change = max(change, float(np.max(np.abs(new.tau - prices[u.id].tau))))
            prices[u.id] = new
        if change < tol:
            break
    return outcome


@dataclass(frozen=True)
class FrontierPoint:
    pi_s: float
    pi_a: float
    on_pareto_line: bool
    on_symmetry_line: bool


def bargaining_frontier(problem: BargainingProblem, su_id: str,
                        n_points: int = 50,
                        search: SearchSettings = SearchSettings()) -> list:
    """Profit-pair geometry of the bilateral bargain for plotting.

    Emits the realizable profit region boundary, the efficient-split line
    (profits summing to the maximum aggregate), the symmetry line through
    the disagreement point, and their intersection.
    """
    units = list(problem.units)
    if not (len(units) == 1 and scalarizable(problem.network, problem.demand, units)):
        raise ValueError("frontier emission requires a scalarizable scenario")
    unit = units[0]
    model = TwoPeriodModel(problem.network, problem.demand, unit)
    margins = ScalarMargins.build(model, problem.discount, problem.config.price_bound)
    pi_a_def, pi_s_def = problem.disagreement[su_id]
    x_star = float(problem.d_star[su_id].d_minus[0])
    interval = cooperation_interval(margins, x_star, problem.config.price_bound)
    pts = []

    # realizable profit set boundary: hull of profit pairs over (x, dtau)
    lo_r, hi_r = model.dtau_range(problem.config.price_bound)
    xs = np.linspace(0.0, model.x_max, 40)
    dts = np.linspace(lo_r, hi_r, 60)
    cloud = []
    for x in xs:
        rev = model.revenue(float(x))
        for dt in dts:
            cloud.append((model.su_profit(float(x), float(dt)), rev + float(dt) * x))
    cloud = np.asarray(cloud)
    try:
        from scipy.spatial import ConvexHull
        hull = ConvexHull(cloud)
        for idx in hull.vertices:
            pts.append(FrontierPoint(float(cloud[idx, 0]), float(cloud[idx, 1]), False, False))
    except Exception:
        pass

    rev_star = model.revenue(x_star)
    if interval is not None:
        lo, hi = interval
        for dt in np.linspace(lo, hi, n_points):
            pi_s = model.su_profit(x_star, float(dt))
            pts.append(FrontierPoint(pi_s, rev_star + float(dt) * x_star, True, False))
    surplus = problem.pi_star - pi_a_def - pi_s_def
    for s in np.linspace(0.0, max(surplus, 0.0), n_points):
        pts.append(FrontierPoint(pi_s_def + float(s), pi_a_def + float(s), False, True))
    half = max(surplus, 0.0) / 2
    pts.append(FrontierPoint(pi_s_def + half, pi_a_def + half, True, True))
    return pts
