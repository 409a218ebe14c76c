"""Storage units: feasible action sets, degradation cost, and profit-maximizing response."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .solver import ConvexProgram, SolverSettings, solve


class DimensionMismatch(ValueError):
    pass


@dataclass(frozen=True)
class AffineConstraint:
    """Extra operating constraint  coeff_plus . d_plus + coeff_minus . d_minus <= rhs."""

    coeff_plus: np.ndarray
    coeff_minus: np.ndarray
    rhs: float

    def __post_init__(self):
        object.__setattr__(self, "coeff_plus", np.atleast_1d(np.asarray(self.coeff_plus, float)))
        object.__setattr__(self, "coeff_minus", np.atleast_1d(np.asarray(self.coeff_minus, float)))
        if len(self.coeff_plus) != len(self.coeff_minus):
            raise DimensionMismatch("coeff_plus and coeff_minus lengths differ")


@dataclass(frozen=True)
class StorageUnit:
    """One storage unit: efficiencies, ratings, SoC window, quadratic degradation cost.

    Degradation cost is c(d) = 1/2 * sum_t (w_plus*d_plus_t^2 + w_minus*d_minus_t^2),
    strictly convex on (d_plus, d_minus) with c(0) = 0.  `bus` attaches the unit
    to the network.  `extra_constraints` hook in additional affine inequalities.
    """

    id: str
    bus: int
    eta_plus: float
    eta_minus: float
    d_plus_max: float
    d_minus_max: float
    soc_min: float
    soc_max: float
    soc_init: float
    w_plus: float = 1.0
    w_minus: float = 1.0
    extra_constraints: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("eta_plus", "eta_minus"):
            eta = getattr(self, name)
            if not 0.0 < eta <= 1.0:
                raise ValueError(f"{name} must lie in (0, 1], got {eta}")
        if self.d_plus_max < 0 or self.d_minus_max < 0:
            raise ValueError("charge/discharge limits must be nonnegative")
        if not self.soc_min <= self.soc_init <= self.soc_max:
            raise ValueError("soc_init must lie within [soc_min, soc_max]")
        if self.w_plus <= 0 or self.w_minus <= 0:
            raise ValueError("cost weights must be strictly positive (strict convexity)")

    @property
    def round_trip_efficiency(self) -> float:
        return self.eta_plus * self.eta_minus

    def cost(self, schedule: "StorageSchedule") -> float:
        return 0.5 * float(self.w_plus * schedule.d_plus @ schedule.d_plus
                           + self.w_minus * schedule.d_minus @ schedule.d_minus)


@dataclass(frozen=True)
class StorageSchedule:
    """Grid-side charge/discharge quantities over the horizon (both nonnegative)."""

    d_plus: np.ndarray
    d_minus: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d_plus", np.atleast_1d(np.asarray(self.d_plus, float)))
        object.__setattr__(self, "d_minus", np.atleast_1d(np.asarray(self.d_minus, float)))
        if len(self.d_plus) != len(self.d_minus):
            raise DimensionMismatch("d_plus and d_minus lengths differ")

    @classmethod
    def zero(cls, horizon: int) -> "StorageSchedule":
        return cls(np.zeros(horizon), np.zeros(horizon))

    @property
    def net(self) -> np.ndarray:
        """Net injection per period: discharge minus charge."""
        return self.d_plus - self.d_minus

    @property
    def horizon(self) -> int:
        return len(self.d_plus)

    def stored_energy_deltas(self, unit: StorageUnit) -> np.ndarray:
        """Per-period change of stored energy: eta_minus*d_minus - d_plus/eta_plus."""
        return unit.eta_minus * self.d_minus - self.d_plus / unit.eta_plus

    def soc_trajectory(self, unit: StorageUnit) -> np.ndarray:
        """State of charge after each period, starting from soc_init."""
        return unit.soc_init + np.cumsum(self.stored_energy_deltas(unit))


@dataclass(frozen=True)
class PriceSchedule:
    """Prices the aggregator posts to one unit, bounded to [0, bound]."""

    tau: np.ndarray
    bound: float = 1e6

    def __post_init__(self):
        object.__setattr__(self, "tau", np.atleast_1d(np.asarray(self.tau, float)))
        if self.bound <= 0:
            raise ValueError("price bound must be positive")
        if np.any(self.tau < -1e-12) or np.any(self.tau > self.bound + 1e-12):
            raise ValueError("prices must lie in [0, bound]")

    @property
    def horizon(self) -> int:
        return len(self.tau)


@dataclass(frozen=True)
class Violation:
    constraint: str
    residual: float


@dataclass(frozen=True)
class FeasibilityReport:
    violations: tuple

    @property
    def feasible(self) -> bool:
        return not self.violations


def su_profit(unit: StorageUnit, schedule: StorageSchedule, prices: PriceSchedule) -> float:
    """Revenue at posted prices minus degradation cost; no feasibility requirement."""
    if prices.horizon != schedule.horizon:
        raise DimensionMismatch("price and schedule horizons differ")
    return float(prices.tau @ schedule.net) - unit.cost(schedule)


def feasibility_check(unit: StorageUnit, schedule: StorageSchedule,
                      tol: float = 1e-9) -> FeasibilityReport:
    """Enumerate every violated operating constraint with its residual."""
    out = []
    dp, dm = schedule.d_plus, schedule.d_minus
    for t in range(schedule.horizon):
        if dp[t] < -tol:
            out.append(Violation(f"discharge nonnegativity t={t}", float(-dp[t])))
        if dm[t] < -tol:
            out.append(Violation(f"charge nonnegativity t={t}", float(-dm[t])))
        if dp[t] > unit.d_plus_max + tol:
            out.append(Violation(f"discharge limit t={t}", float(dp[t] - unit.d_plus_max)))
        if dm[t] > unit.d_minus_max + tol:
            out.append(Violation(f"charge limit t={t}", float(dm[t] - unit.d_minus_max)))
    neutrality = float(np.sum(schedule.stored_energy_deltas(unit)))
    if abs(neutrality) > tol:
        out.append(Violation("energy neutrality", abs(neutrality)))
    soc = schedule.soc_trajectory(unit)
    for t, s in enumerate(soc):
        if s < unit.soc_min - tol:
            out.append(Violation(f"soc lower bound t={t}", float(unit.soc_min - s)))
        if s > unit.soc_max + tol:
            out.append(Violation(f"soc upper bound t={t}", float(s - unit.soc_max)))
    for k, con in enumerate(unit.extra_constraints):
        val = float(con.coeff_plus @ dp + con.coeff_minus @ dm)
        if val > con.rhs + tol:
            out.append(Violation(f"extra constraint {k}", val - con.rhs))
    return FeasibilityReport(tuple(out))


def feasible_set_matrices(unit: StorageUnit, horizon: int):
    """(A, b, G, h) over z = [d_plus; d_minus] describing the unit's feasible set.

    Rows: energy neutrality (equality); SoC window per period; box limits;
    nonnegativity; any extra affine constraints.
    """
    T = horizon
    # stored-energy delta per period as a linear map of z
    D = np.hstack([-np.eye(T) / unit.eta_plus, unit.eta_minus * np.eye(T)])
    A = D.sum(axis=0, keepdims=True)
    b = np.zeros(1)
    cum = np.cumsum(D, axis=0) if T else D
    rows, rhs = [], []
    for t in range(T):
        rows.append(cum[t])                      # soc <= soc_max
        rhs.append(unit.soc_max - unit.soc_init)
        rows.append(-cum[t])                     # soc >= soc_min
        rhs.append(unit.soc_init - unit.soc_min)
    eye = np.eye(T)
    zero = np.zeros((T, T))
    rows.extend(np.hstack([eye, zero]))          # d_plus <= max
    rhs.extend([unit.d_plus_max] * T)
    rows.extend(np.hstack([zero, eye]))          # d_minus <= max
    rhs.extend([unit.d_minus_max] * T)
    rows.extend(np.hstack([-eye, zero]))         # d_plus >= 0
    rhs.extend([0.0] * T)
    rows.extend(np.hstack([zero, -eye]))         # d_minus >= 0
    rhs.extend([0.0] * T)
    for con in unit.extra_constraints:
        if len(con.coeff_plus) != T:
            raise DimensionMismatch("extra constraint horizon differs from schedule horizon")
        rows.append(np.concatenate([con.coeff_plus, con.coeff_minus]))
        rhs.append(con.rhs)
    return A, b, np.array(rows), np.array(rhs)


def su_best_response(unit: StorageUnit, prices: PriceSchedule,
                     settings: SolverSettings = SolverSettings()) -> StorageSchedule:
    """Profit-maximizing feasible schedule for the posted prices.

    Strict convexity of the degradation cost makes the optimum unique.  At
    nonnegative prices the optimum never charges and discharges in the same
    period; this is checked and enforced up to solver tolerance.
    """
    T = prices.horizon
    A, b, G, h = feasible_set_matrices(unit, T)
    P = np.diag(np.concatenate([np.full(T, unit.w_plus), np.full(T, unit.w_minus)]))
    q = np.concatenate([-prices.tau, prices.tau])
    prog = ConvexProgram.from_quadratic(P, q, A=A, b=b, G=G, h=h)
    sol = solve(prog, settings, x0=np.zeros(2 * T))
    dp = np.where(np.abs(sol.point[:T]) < 1e-12, 0.0, sol.point[:T])
    dm = np.where(np.abs(sol.point[T:]) < 1e-12, 0.0, sol.point[T:])
    if np.any(dp * dm > 1e-6):
        raise RuntimeError("simultaneous charge/discharge at a best response; "
                           "cost weights or prices are degenerate")
    return StorageSchedule(dp, dm)
