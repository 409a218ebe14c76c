"""Random feasible storage schedules for randomized property checks.

Samples draw a charge/discharge role per period and project random
magnitudes onto the unit's feasible set restricted to that role pattern, so
every sample is physically realizable: no period both charges and
discharges.  (A single device cannot do both at once; allowing it in a
sample also breaks the revenue-vs-cost-change bound, since the gross-action
degradation cost then has no offsetting market effect.)
"""
from __future__ import annotations

from typing import Dict, Sequence

import numpy as np

from .solver import ConvexProgram, Infeasible, SolverSettings, solve
from .storage import StorageSchedule, StorageUnit

IDLE, CHARGE, DISCHARGE = 0, 1, 2


def _project_roles(unit: StorageUnit, roles: np.ndarray, raw: np.ndarray,
                   settings: SolverSettings) -> np.ndarray:
    """Euclidean projection of raw magnitudes onto the role-pattern polytope."""
    T = len(roles)
    # stored-energy delta coefficient per period under the role pattern
    coeff = np.zeros(T)
    caps = np.zeros(T)
    for t, r in enumerate(roles):
        if r == CHARGE:
            coeff[t] = unit.eta_minus
            caps[t] = unit.d_minus_max
        elif r == DISCHARGE:
            coeff[t] = -1.0 / unit.eta_plus
            caps[t] = unit.d_plus_max
    A = coeff.reshape(1, -1)
    b = np.zeros(1)
    cum = np.tril(np.ones((T, T))) * coeff
    G = np.vstack([cum, -cum, np.eye(T), -np.eye(T)])
    h = np.concatenate([
        np.full(T, unit.soc_max - unit.soc_init),
        np.full(T, unit.soc_init - unit.soc_min),
        caps,
        np.zeros(T),
    ])
    prog = ConvexProgram.from_quadratic(np.eye(T), -raw, A=A, b=b, G=G, h=h)
    return solve(prog, settings, x0=np.zeros(T)).point


def random_feasible_schedule(unit: StorageUnit, horizon: int,
                             rng: np.random.Generator,
                             settings: SolverSettings = SolverSettings(),
                             max_attempts: int = 25) -> StorageSchedule:
    """A random feasible schedule with per-period pure roles.

    Falls back to the idle schedule when sampled role patterns keep
    collapsing to zero (for instance a unit with no capacity).
    """
    if unit.extra_constraints:
        raise NotImplementedError("sampler does not support extra constraints")
    for _ in range(max_attempts):
        roles = rng.integers(0, 3, size=horizon)
        if CHARGE not in roles or DISCHARGE not in roles:
            continue
        caps = np.where(roles == CHARGE, unit.d_minus_max,
                        np.where(roles == DISCHARGE, unit.d_plus_max, 0.0))
        raw = rng.uniform(0.0, 1.0, size=horizon) * caps
        try:
            m = _project_roles(unit, roles, raw, settings)
        except Infeasible:
            continue
        if np.max(m) < 1e-9:
            continue
        dp = np.where(roles == DISCHARGE, np.maximum(m, 0.0), 0.0)
        dm = np.where(roles == CHARGE, np.maximum(m, 0.0), 0.0)
        return StorageSchedule(dp, dm)
    return StorageSchedule.zero(horizon)


def random_feasible_schedules(units: Sequence[StorageUnit], horizon: int,
                              rng: np.random.Generator,
                              settings: SolverSettings = SolverSettings()
                              ) -> Dict[str, StorageSchedule]:
    return {u.id: random_feasible_schedule(u, horizon, rng, settings) for u in units}
