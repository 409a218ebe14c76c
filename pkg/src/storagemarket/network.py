"""Physical market substrate: buses, affine marginal generation costs, lines, demand."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _as_matrix(x, name: str) -> np.ndarray:
    arr = np.atleast_2d(np.asarray(x, dtype=float))
    if arr.ndim != 2:
        raise ValueError(f"{name} must be a (bus, period) matrix")
    return arr


@dataclass(frozen=True)
class Network:
    """Buses with affine marginal generation cost a + b*x and a shift-factor line model.

    `gen_cost_intercept` and `gen_cost_slope` are (n_buses, n_periods);
    slopes must be nonnegative (increasing marginal cost).  `shift_factors`
    is (n_lines, n_buses) applied to net nodal withdrawals-adjusted
    injections, and `line_limits` the corresponding (n_lines,) MW bounds.
    """

    gen_cost_intercept: np.ndarray
    gen_cost_slope: np.ndarray
    shift_factors: np.ndarray
    line_limits: np.ndarray

    def __post_init__(self):
        a = _as_matrix(self.gen_cost_intercept, "gen_cost_intercept")
        b = _as_matrix(self.gen_cost_slope, "gen_cost_slope")
        H = np.asarray(self.shift_factors, dtype=float).reshape(-1, a.shape[0])
        f = np.atleast_1d(np.asarray(self.line_limits, dtype=float))
        object.__setattr__(self, "gen_cost_intercept", a)
        object.__setattr__(self, "gen_cost_slope", b)
        object.__setattr__(self, "shift_factors", H)
        object.__setattr__(self, "line_limits", f)
        if a.shape != b.shape:
            raise ValueError("gen cost intercept/slope shapes differ")
        if np.any(b < 0):
            raise ValueError("marginal cost slope must be nonnegative at every bus/period")
        if H.shape[0] != len(f):
            raise ValueError("shift_factors row count must equal line_limits length")
        if np.any(f < 0):
            raise ValueError("line limits must be nonnegative")

    @property
    def n_buses(self) -> int:
        return self.gen_cost_intercept.shape[0]

    @property
    def n_periods(self) -> int:
        return self.gen_cost_intercept.shape[1]

    @property
    def n_lines(self) -> int:
        return len(self.line_limits)

    def marginal_cost(self, bus: int, t: int, x: float) -> float:
        return float(self.gen_cost_intercept[bus, t] + self.gen_cost_slope[bus, t] * x)

    def generation_cost(self, generation: np.ndarray) -> float:
        """Total cost of a (bus, period) dispatch: integral of the marginal curve.

        Closed form a*g + b*g^2/2; never evaluated by quadrature.
        """
        g = np.asarray(generation, dtype=float)
        return float(np.sum(self.gen_cost_intercept * g + 0.5 * self.gen_cost_slope * g * g))


@dataclass(frozen=True)
class DemandProfile:
    """Nonnegative nodal demand matrix, (n_buses, n_periods)."""

    q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _as_matrix(self.q, "q"))
        if np.any(self.q < 0):
            raise ValueError("demand must be nonnegative")

    @property
    def n_periods(self) -> int:
        return self.q.shape[1]


@dataclass(frozen=True)
class NodalInjections:
    """Net storage injection per (bus, period); positive means discharge."""

    d_bus: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "d_bus", _as_matrix(self.d_bus, "d_bus"))

    @classmethod
    def zeros(cls, n_buses: int, n_periods: int) -> "NodalInjections":
        return cls(np.zeros((n_buses, n_periods)))

    @classmethod
    def from_schedules(cls, units, schedules, n_buses: int) -> "NodalInjections":
        """Aggregate per-unit net schedules onto their buses.

        `schedules` maps unit id -> StorageSchedule; missing units count as idle.
        """
        horizon = None
        for u in units:
            s = schedules.get(u.id)
            if s is not None:
                horizon = len(s.d_plus)
                break
        if horizon is None:
            raise ValueError("no schedules supplied")
        d = np.zeros((n_buses, horizon))
        for u in units:
            s = schedules.get(u.id)
            if s is None:
                continue
            d[u.bus] += s.net
        return cls(d)
