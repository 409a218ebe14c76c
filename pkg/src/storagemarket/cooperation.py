"""Infinitely repeated aggregator-unit game: discounted profits and cooperation regions.

Both sides play grim-trigger strategies around an agreed (prices, schedule)
point.  A defecting unit cashes in one deviation round before both revert
to the single-leader single-follower defection equilibrium; a defecting
aggregator is punished immediately because the unit observes prices before
acting.  Cooperation margins are the per-player gains from never defecting.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence

import numpy as np
import scipy.optimize

from .games import AggregatorConfig, SearchSettings, agg_profit, defection_equilibrium
from .network import DemandProfile, Network
from .storage import PriceSchedule, StorageSchedule, StorageUnit, su_best_response, su_profit
from .twoperiod import TwoPeriodModel

MARGIN_TOL = 1e-9  # zero margins count as cooperative


@dataclass(frozen=True)
class RepeatedGameConfig:
    discount: float
    agreed_prices: Dict[str, PriceSchedule]
    agreed_schedules: Dict[str, StorageSchedule]

    def __post_init__(self):
        if not 0.0 < self.discount < 1.0:
            raise ValueError("discount must lie strictly inside (0, 1)")


@dataclass(frozen=True)
class CooperationReport:
    agg_margin_per_su: Dict[str, float]
    su_margins: Dict[str, float]

    @property
    def cooperative(self) -> bool:
        margins = list(self.agg_margin_per_su.values()) + list(self.su_margins.values())
        return min(margins) >= -MARGIN_TOL


def long_term_profit(agreed_profit: float, discount: float,
                     defect_round: float = math.inf,
                     deviation_profit: Optional[float] = None,
                     defection_profit: Optional[float] = None) -> float:
    """Discounted lifetime profit when defecting at round `defect_round`.

    Cooperation pays `agreed_profit` each round before the defection round,
    `deviation_profit` in the defection round itself, and the stationary
    `defection_profit` afterwards.  Closed geometric forms throughout:
    sum_{k=a}^{b} delta^k = (delta^a - delta^{b+1}) / (1 - delta).
    """
    if not 0.0 < discount < 1.0:
        raise ValueError("discount must lie strictly inside (0, 1)")
    if defect_round == math.inf:
        return agreed_profit / (1.0 - discount)
    v = int(defect_round)
    if v < 0:
        raise ValueError("defection round must be nonnegative")
    if defection_profit is None:
        defection_profit = agreed_profit
    if deviation_profit is None:
        deviation_profit = defection_profit
    head = agreed_profit * (1.0 - discount ** v) / (1.0 - discount)
    tail = discount ** (v + 1) * defection_profit / (1.0 - discount)
    return head + discount ** v * deviation_profit + tail


def cooperation_margins(network: Network, demand: DemandProfile,
                        units: Sequence[StorageUnit], config: RepeatedGameConfig,
                        agg_config: AggregatorConfig,
                        search: SearchSettings = SearchSettings()) -> CooperationReport:
    """Per-unit cooperation margins at the agreed point.

    The aggregator margin is its agreed profit over the defection
    equilibrium; the unit margin weighs the one-shot deviation payoff at the
    agreed prices against the discounted defection equilibrium.
    """
    units = [u for u in units if u.id in agg_config.managed_units]
    agreed_agg = agg_profit(network, demand, units, config.agreed_prices,
                            config.agreed_schedules, search.solver)
    agg_margins, su_margins = {}, {}
    for u in units:
        defect = defection_equilibrium(network, demand, units, agg_config,
                                       config.agreed_prices, config.agreed_schedules,
                                       u.id, search)
        agg_margins[u.id] = agreed_agg - defect.agg_profit
        deviation = su_best_response(u, config.agreed_prices[u.id], search.solver)
        dev_profit = su_profit(u, deviation, config.agreed_prices[u.id])
        agreed_su = su_profit(u, config.agreed_schedules[u.id], config.agreed_prices[u.id])
        su_margins[u.id] = (agreed_su
                            - (1.0 - config.discount) * dev_profit
                            - config.discount * defect.su_profits[u.id])
    return CooperationReport(agg_margin_per_su=agg_margins, su_margins=su_margins)


# --- scalarized machinery for two-period single-unit scenarios -------------


@dataclass(frozen=True)
class ScalarMargins:
    """Closed-form margins over (x_hat, dtau_hat) for a TwoPeriodModel."""

    model: TwoPeriodModel
    discount: float
    defection_agg_profit: float
    defection_su_profit: float

    @classmethod
    def build(cls, model: TwoPeriodModel, discount: float, price_bound: float) -> "ScalarMargins":
        _, _, pi_a_def, pi_s_def = model.stackelberg(price_bound)
        return cls(model=model, discount=discount,
                   defection_agg_profit=pi_a_def, defection_su_profit=pi_s_def)

    def agg_margin(self, x_hat: float, dtau_hat: float, revenue: Optional[float] = None) -> float:
        rev = self.model.revenue(x_hat) if revenue is None else revenue
        return rev + dtau_hat * x_hat - self.defection_agg_profit

    def su_margin(self, x_hat: float, dtau_hat: float) -> float:
        agreed = self.model.su_profit(x_hat, dtau_hat)
        deviation = self.model.deviation_profit(dtau_hat)
        return (agreed - (1.0 - self.discount) * deviation
                - self.discount * self.defection_su_profit)


@dataclass(frozen=True)
class RegionCell:
    x_hat: float
    dtau_hat: float
    alpha_s: float
    alpha_a: float
    region_label: str


def _label(alpha_s: float, alpha_a: float) -> str:
    s_ok = alpha_s >= -MARGIN_TOL
    a_ok = alpha_a >= -MARGIN_TOL
    if s_ok and a_ok:
        return "both"
    if s_ok:
        return "su_only"
    if a_ok:
        return "agg_only"
    return "neither"


def cooperation_region(network: Network, demand: DemandProfile, unit: StorageUnit,
                       discount: float, x_values: Sequence[float],
                       dtau_values: Sequence[float],
                       price_bound: float) -> list:
    """Rasterize margin signs over an (x_hat, dtau_hat) grid.

    Cells are independent; revenue is shared across a row so the whole
    raster costs one market clearing per x value.
    """
    model = TwoPeriodModel(network, demand, unit)
    margins = ScalarMargins.build(model, discount, price_bound)
    cells = []
    for x_hat in x_values:
        rev = model.revenue(float(x_hat))
        for dtau_hat in dtau_values:
            a_s = margins.su_margin(float(x_hat), float(dtau_hat))
            a_a = margins.agg_margin(float(x_hat), float(dtau_hat), revenue=rev)
            cells.append(RegionCell(float(x_hat), float(dtau_hat), a_s, a_a,
                                    _label(a_s, a_a)))
    return cells


def cooperation_interval(margins: ScalarMargins, x_hat: float, price_bound: float,
                         tol: float = 1e-6):
    """(lo, hi) spread interval where both margins are nonnegative, or None.

    The aggregator margin is affine increasing in the spread, so it binds
    the lower endpoint; the unit margin is concave, binding the upper one.
    Endpoints are located by bisection to `tol`.
    """
    model = margins.model
    lo_range, hi_range = model.dtau_range(price_bound)
    rev = model.revenue(x_hat)

    if x_hat <= 1e-12:
        # degenerate agreement: nothing is exchanged
        a = margins.agg_margin(0.0, 0.0, revenue=rev)
        s = margins.su_margin(0.0, 0.0)
        return (lo_range, hi_range) if (a >= -MARGIN_TOL and s >= -MARGIN_TOL) else None

    agg_lo = (margins.defection_agg_profit - rev) / x_hat
    if agg_lo > hi_range:
        return None
    agg_lo = max(agg_lo, lo_range)

    def alpha_s(dt):
        return margins.su_margin(x_hat, dt)

    res = scipy.optimize.minimize_scalar(lambda z: -alpha_s(z),
                                         bounds=(lo_range, hi_range), method="bounded",
                                         options={"xatol": tol / 10})
    peak = float(res.x)
    if alpha_s(peak) < -MARGIN_TOL:
        return None
    su_lo = (scipy.optimize.brentq(alpha_s, lo_range, peak, xtol=tol)
             if alpha_s(lo_range) < 0 else lo_range)
    su_hi = (scipy.optimize.brentq(alpha_s, peak, hi_range, xtol=tol)
             if alpha_s(hi_range) < 0 else hi_range)
    lo, hi = max(agg_lo, su_lo), su_hi
    return (lo, hi) if lo <= hi + tol else None
