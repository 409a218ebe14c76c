"""Single-shot leader-follower games between the aggregator and its storage units.

The aggregator posts per-unit price schedules; units respond with their
unique profit-maximizing schedules; the aggregator settles the net
injections at the cleared LMPs.  Equilibria are found by multi-start
compass (pattern) search over the price box with exact inner best
responses; two-period single-unit scenarios take an exact scalar path.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Optional, Sequence

import numpy as np

from .clearing import clear_market
from .network import DemandProfile, Network, NodalInjections
from .solver import SolverSettings
from .storage import PriceSchedule, StorageSchedule, StorageUnit, su_best_response, su_profit
from .twoperiod import TwoPeriodModel, scalarizable


class SearchBudgetExceeded(Exception):
    pass


@dataclass(frozen=True)
class AggregatorConfig:
    price_bound: float
    managed_units: tuple

    def __post_init__(self):
        object.__setattr__(self, "managed_units", tuple(self.managed_units))
        if self.price_bound <= 0:
            raise ValueError("price bound must be positive")
        if not self.managed_units:
            raise ValueError("aggregator must manage at least one unit")


@dataclass(frozen=True)
class SearchSettings:
    """Outer-search controls; exposed as CLI flags."""

    multistart: int = 4
    budget: int = 20_000
    step_tolerance: float = 1e-6
    grid_resolution: float = 1e-3
    seed: int = 0
    solver: SolverSettings = field(default_factory=SolverSettings)


@dataclass(frozen=True)
class GameOutcome:
    prices: Dict[str, PriceSchedule]
    schedules: Dict[str, StorageSchedule]
    agg_profit: float
    su_profits: Dict[str, float]
    lmps_at_outcome: np.ndarray
    tag: str = "equilibrium"  # or "budget_exceeded"


def agg_profit(network: Network, demand: DemandProfile, units: Sequence[StorageUnit],
               prices: Dict[str, PriceSchedule], schedules: Dict[str, StorageSchedule],
               settings: SolverSettings = SolverSettings()) -> float:
    """Aggregator profit: LMP settlement of net injections minus payments to units.

    Price-anticipatory: LMPs come from clearing the market at exactly these
    injections.
    """
    injections = NodalInjections.from_schedules(units, schedules, network.n_buses)
    outcome = clear_market(network, demand, injections, 0.0, settings)
    total = 0.0
    for u in units:
        s = schedules[u.id]
        total += float(outcome.lmps[u.bus] @ s.net) - float(prices[u.id].tau @ s.net)
    return total


def _outcome_at(network, demand, units, prices, settings, tag="equilibrium",
                fixed_schedules=None) -> GameOutcome:
    schedules = {}
    for u in units:
        if fixed_schedules is not None and u.id in fixed_schedules:
            schedules[u.id] = fixed_schedules[u.id]
        else:
            schedules[u.id] = su_best_response(u, prices[u.id], settings)
    injections = NodalInjections.from_schedules(units, schedules, network.n_buses)
    cleared = clear_market(network, demand, injections, 0.0, settings)
    profits = {u.id: su_profit(u, schedules[u.id], prices[u.id]) for u in units}
    agg = sum(float(cleared.lmps[u.bus] @ schedules[u.id].net)
              - float(prices[u.id].tau @ schedules[u.id].net) for u in units)
    return GameOutcome(prices=dict(prices), schedules=schedules, agg_profit=agg,
                       su_profits=profits, lmps_at_outcome=cleared.lmps, tag=tag)


def compass_search(f: Callable[[np.ndarray], float], x0: np.ndarray,
                   lower: np.ndarray, upper: np.ndarray,
                   budget: int, step_tolerance: float,
                   initial_step: Optional[float] = None):
    """Maximize f over a box by coordinate pattern search.

    Deterministic; returns (x, value, evaluations, converged).  Candidate
    evaluations are independent, so f may parallelize internally.
    """
    x = np.clip(np.asarray(x0, float), lower, upper)
    span = float(np.max(upper - lower))
    step = initial_step if initial_step is not None else span / 4
    best = f(x)
    evals = 1
    while step > step_tolerance:
        improved = False
        for j in range(len(x)):
            for sign in (+1, -1):
                if evals >= budget:
                    return x, best, evals, False
                cand = x.copy()
                cand[j] = np.clip(cand[j] + sign * step, lower[j], upper[j])
                if cand[j] == x[j]:
                    continue
                val = f(cand)
                evals += 1
                if val > best + 1e-12:
                    x, best = cand, val
                    improved = True
        if not improved:
            step /= 2
    return x, best, evals, True


class _TauObjective:
    """Aggregator profit as a function of the stacked price vector.

    Caches best responses per unit so single-coordinate moves re-solve only
    the affected follower.
    """

    def __init__(self, network, demand, units, bound, settings,
                 fixed_prices=None, fixed_schedules=None, free_ids=None):
        self.network = network
        self.demand = demand
        self.units = list(units)
        self.bound = bound
        self.settings = settings
        self.fixed_prices = fixed_prices or {}
        self.fixed_schedules = fixed_schedules or {}
        self.free = [u for u in self.units
                     if free_ids is None or u.id in free_ids]
        self.horizon = demand.n_periods
        self._response_cache: Dict[tuple, StorageSchedule] = {}

    def dim(self) -> int:
        return len(self.free) * self.horizon

    def split(self, tau_stack: np.ndarray) -> Dict[str, PriceSchedule]:
        T = self.horizon
        prices = {uid: p for uid, p in self.fixed_prices.items()}
        for k, u in enumerate(self.free):
            prices[u.id] = PriceSchedule(tau=tau_stack[k * T:(k + 1) * T], bound=self.bound)
        return prices

    def responses(self, prices) -> Dict[str, StorageSchedule]:
        schedules = {}
        for u in self.units:
            if u.id in self.fixed_schedules:
                schedules[u.id] = self.fixed_schedules[u.id]
                continue
            key = (u.id,) + tuple(np.round(prices[u.id].tau, 12))
            if key not in self._response_cache:
                self._response_cache[key] = su_best_response(u, prices[u.id], self.settings)
            schedules[u.id] = self._response_cache[key]
        return schedules

    def __call__(self, tau_stack: np.ndarray) -> float:
        prices = self.split(tau_stack)
        schedules = self.responses(prices)
        return agg_profit(self.network, self.demand, self.units, prices, schedules,
                          self.settings)


def _starting_points(obj: _TauObjective, search: SearchSettings):
    T = obj.horizon
    starts = [np.zeros(obj.dim())]
    lmps = clear_market(obj.network, obj.demand, settings=search.solver).lmps
    warm = np.concatenate([np.clip(lmps[u.bus], 0, obj.bound) for u in obj.free])
    starts.append(warm)
    rng = np.random.default_rng(search.seed)
    while len(starts) < max(search.multistart, 1):
        starts.append(rng.uniform(0, obj.bound, size=obj.dim()))
    return starts[:max(search.multistart, 1)]


def _push_down(obj: _TauObjective, tau: np.ndarray, best: float, budget: int):
    """Deterministic tie-break: lower coordinates in order while profit is kept."""
    tau = tau.copy()
    evals = 0
    for j in range(len(tau)):
        lo, hi = 0.0, tau[j]
        if obj(_with(tau, j, lo)) >= best - 1e-9:
            tau[j] = lo
            evals += 1
            continue
        for _ in range(40):
            if evals >= budget:
                break
            mid = 0.5 * (lo + hi)
            if obj(_with(tau, j, mid)) >= best - 1e-9:
                hi = mid
            else:
                lo = mid
            evals += 1
        tau[j] = hi
    return tau


def _with(x, j, v):
    y = x.copy()
    y[j] = v
    return y


def solve_stackelberg(network: Network, demand: DemandProfile,
                      units: Sequence[StorageUnit], config: AggregatorConfig,
                      search: SearchSettings = SearchSettings()) -> GameOutcome:
    """Leader-optimal prices against the units' unique best responses.

    Exact scalar path for two-period single-unit scenarios; multi-start
    compass search over the price box otherwise.  When the evaluation
    budget runs out the best point found is returned tagged
    "budget_exceeded".
    """
    units = [u for u in units if u.id in config.managed_units]
    if scalarizable(network, demand, units):
        model = TwoPeriodModel(network, demand, units[0])
        dtau, _, _, _ = model.stackelberg(config.price_bound)
        prices = {units[0].id: model.prices(dtau, config.price_bound)}
        return _outcome_at(network, demand, units, prices, search.solver)

    obj = _TauObjective(network, demand, units, config.price_bound, search.solver)
    lower = np.zeros(obj.dim())
    upper = np.full(obj.dim(), config.price_bound)
    best_tau, best_val, converged = None, -np.inf, True
    spent = 0
    for x0 in _starting_points(obj, search):
        tau, val, used, conv = compass_search(obj, x0, lower, upper,
                                              budget=max(search.budget - spent, 1),
                                              step_tolerance=search.step_tolerance)
        spent += used
        converged = converged and conv
        if val > best_val:
            best_tau, best_val = tau, val
    best_tau = _push_down(obj, best_tau, best_val, budget=max(search.budget - spent, 100))
    prices = obj.split(best_tau)
    return _outcome_at(network, demand, units, prices, search.solver,
                       tag="equilibrium" if converged else "budget_exceeded")


def defection_equilibrium(network: Network, demand: DemandProfile,
                          units: Sequence[StorageUnit], config: AggregatorConfig,
                          fixed_prices: Dict[str, PriceSchedule],
                          fixed_schedules: Dict[str, StorageSchedule],
                          su_id: str,
                          search: SearchSettings = SearchSettings()) -> GameOutcome:
    """Single-leader single-follower equilibrium for one unit, others frozen.

    The named unit best-responds to a re-optimized price schedule while all
    other units keep their supplied prices and schedules.  With one unit
    this coincides with the full Stackelberg game.
    """
    units = [u for u in units if u.id in config.managed_units]
    others = {uid: s for uid, s in fixed_schedules.items() if uid != su_id}
    other_prices = {uid: p for uid, p in fixed_prices.items() if uid != su_id}
    if len(units) == 1 and scalarizable(network, demand, units):
        return solve_stackelberg(network, demand, units, config, search)

    obj = _TauObjective(network, demand, units, config.price_bound, search.solver,
                        fixed_prices=other_prices, fixed_schedules=others,
                        free_ids={su_id})
    lower = np.zeros(obj.dim())
    upper = np.full(obj.dim(), config.price_bound)
    best_tau, best_val, converged = None, -np.inf, True
    spent = 0
    for x0 in _starting_points(obj, search):
        tau, val, used, conv = compass_search(obj, x0, lower, upper,
                                              budget=max(search.budget - spent, 1),
                                              step_tolerance=search.step_tolerance)
        spent += used
        converged = converged and conv
        if val > best_val:
            best_tau, best_val = tau, val
    best_tau = _push_down(obj, best_tau, best_val, budget=max(search.budget - spent, 100))
    prices = obj.split(best_tau)
    return _outcome_at(network, demand, units, prices, search.solver,
                       fixed_schedules=others,
                       tag="equilibrium" if converged else "budget_exceeded")
