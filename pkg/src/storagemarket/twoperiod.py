"""Scalar reduction of two-period, single-unit, single-bus scenarios.

For a unit that starts at its SoC floor in a two-period single-bus system,
any profitable plan charges x in the first period and discharges eta*x in
the second (eta = round-trip efficiency).  Posted prices then matter only
through the spread dtau = tau_charge - eta * tau_discharge, turning games
over price vectors into one-dimensional problems.  Every routine here keeps
market revenue exact by clearing the actual network at the implied
injections.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.optimize

from .clearing import clear_market
from .network import DemandProfile, Network, NodalInjections
from .storage import PriceSchedule, StorageSchedule, StorageUnit


def scalarizable(network: Network, demand: DemandProfile, units: Sequence[StorageUnit]) -> bool:
    """True when the scenario admits the exact two-period scalar reduction."""
    return (network.n_buses == 1 and network.n_periods == 2
            and demand.n_periods == 2 and len(units) == 1
            and units[0].bus == 0
            and abs(units[0].soc_init - units[0].soc_min) < 1e-12)


@dataclass(frozen=True)
class TwoPeriodModel:
    network: Network
    demand: DemandProfile
    unit: StorageUnit

    def __post_init__(self):
        if not scalarizable(self.network, self.demand, [self.unit]):
            raise ValueError("scenario does not admit the two-period scalar reduction")

    @property
    def eta(self) -> float:
        return self.unit.round_trip_efficiency

    @property
    def cost_coeff(self) -> float:
        """c(x) = cost_coeff * x^2 for the charge-then-discharge family."""
        return 0.5 * (self.unit.w_minus + self.unit.w_plus * self.eta ** 2)

    @property
    def x_max(self) -> float:
        u = self.unit
        bound = min(u.d_minus_max,
                    (u.soc_max - u.soc_init) / u.eta_minus,
                    u.d_plus_max / self.eta)
        for con in u.extra_constraints:
            rate = con.coeff_minus[0] + con.coeff_plus[1] * self.eta
            if rate > 1e-12:
                bound = min(bound, con.rhs / rate)
        return max(bound, 0.0)

    def schedule(self, x: float) -> StorageSchedule:
        return StorageSchedule(d_plus=[0.0, self.eta * x], d_minus=[x, 0.0])

    def prices(self, dtau: float, bound: float) -> PriceSchedule:
        """Lexicographically smallest price vector realizing the spread."""
        t0 = max(dtau, 0.0)
        t1 = (t0 - dtau) / self.eta
        if t1 > bound + 1e-9 or t0 > bound + 1e-9:
            raise ValueError(f"spread {dtau} not representable within price bound {bound}")
        return PriceSchedule(tau=[t0, min(t1, bound)], bound=bound)

    def dtau_of(self, prices: PriceSchedule) -> float:
        return float(prices.tau[0] - self.eta * prices.tau[1])

    def dtau_range(self, bound: float) -> tuple:
        return (-self.eta * bound, bound)

    # scalar profit pieces -------------------------------------------------

    def su_profit(self, x: float, dtau: float) -> float:
        return -dtau * x - self.cost_coeff * x * x

    def su_best_x(self, dtau: float) -> float:
        return float(np.clip(-dtau / (2 * self.cost_coeff), 0.0, self.x_max))

    def deviation_profit(self, dtau: float) -> float:
        """Best one-shot profit against the spread (the defect-and-cash-in payoff)."""
        return self.su_profit(self.su_best_x(dtau), dtau)

    def revenue(self, x: float) -> float:
        """Market revenue of the net injections (-x, eta*x) at the cleared LMPs."""
        out = clear_market(self.network, self.demand,
                           NodalInjections([[-x, self.eta * x]]))
        return float(out.lmps[0, 0] * (-x) + out.lmps[0, 1] * self.eta * x)

    def agg_profit(self, x: float, dtau: float) -> float:
        return self.revenue(x) + dtau * x

    def aggregate_profit(self, x: float) -> float:
        return self.revenue(x) - self.cost_coeff * x * x

    def system_cost(self, x: float) -> float:
        out = clear_market(self.network, self.demand,
                           NodalInjections([[-x, self.eta * x]]),
                           storage_costs=self.cost_coeff * x * x)
        return out.system_cost

    # one-dimensional optimizers --------------------------------------------

    def _maximize(self, f, lo: float, hi: float, coarse: int = 101) -> float:
        if hi - lo <= 1e-14:
            return lo
        grid = np.linspace(lo, hi, coarse)
        vals = [f(g) for g in grid]
        k = int(np.argmax(vals))
        a = grid[max(k - 1, 0)]
        b = grid[min(k + 1, coarse - 1)]
        res = scipy.optimize.minimize_scalar(lambda z: -f(z), bounds=(a, b),
                                             method="bounded",
                                             options={"xatol": 1e-11})
        best_x, best_v = float(res.x), f(float(res.x))
        if vals[k] > best_v:
            return float(grid[k])
        return best_x

    def maximize_aggregate(self) -> float:
        """Argmax of revenue(x) - c(x) over [0, x_max]."""
        return self._maximize(self.aggregate_profit, 0.0, self.x_max)

    def social_x(self) -> float:
        """Argmin of the system cost over [0, x_max]."""
        return self._maximize(lambda x: -self.system_cost(x), 0.0, self.x_max)

    def stackelberg(self, bound: float) -> tuple:
        """Leader-optimal spread against the unit's best response.

        Returns (dtau, x, leader_profit, follower_profit).
        """
        lo, hi = self.dtau_range(bound)

        def leader(dtau):
            return self.agg_profit(self.su_best_x(dtau), dtau)

        dtau = self._maximize(leader, lo, 0.0)
        if leader(dtau) <= leader(0.0) + 1e-12:
            dtau = 0.0  # ties break toward the smallest prices
        x = self.su_best_x(dtau)
        return dtau, x, self.agg_profit(x, dtau), self.su_profit(x, dtau)
