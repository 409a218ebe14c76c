"""Maximize price-anticipatory objectives over the joint storage action space.

Used for the aggregate-profit bid and for clearing under the mitigated
price: both are `max F(schedules)` where F is, within every fixed dispatch
active set, quadratic in the net nodal injections.  The optimizer therefore
iterates exact QPs: fit the per-period value of injections with a local
quadratic model (finite differences), maximize the model minus the exact
quadratic storage cost over the joint feasible set with the active-set
solver, and re-fit at the new point until the exact objective stops
improving.  Multi-start; the incumbent never regresses below the best
start.
"""
from __future__ import annotations

from typing import Callable, Dict, Sequence

import numpy as np
import scipy.linalg

from .network import DemandProfile, Network
from .solver import ConvexProgram, Infeasible, MaxIterations, SolverSettings, solve
from .storage import StorageSchedule, StorageUnit, feasible_set_matrices


def stack_schedules(units: Sequence[StorageUnit], schedules: Dict[str, StorageSchedule]) -> np.ndarray:
    parts = []
    for u in units:
        s = schedules[u.id]
        parts.extend([s.d_plus, s.d_minus])
    return np.concatenate(parts)


def unstack_schedules(units: Sequence[StorageUnit], z: np.ndarray,
                      horizon: int) -> Dict[str, StorageSchedule]:
    out = {}
    for k, u in enumerate(units):
        block = z[2 * horizon * k: 2 * horizon * (k + 1)]
        dp = np.where(np.abs(block[:horizon]) < 1e-12, 0.0, block[:horizon])
        dm = np.where(np.abs(block[horizon:]) < 1e-12, 0.0, block[horizon:])
        out[u.id] = StorageSchedule(dp, dm)
    return out


def joint_constraints(units: Sequence[StorageUnit], horizon: int):
    """Block-diagonal (A, b, G, h) over the stacked action vector."""
    blocks = [feasible_set_matrices(u, horizon) for u in units]
    A = scipy.linalg.block_diag(*[blk[0] for blk in blocks])
    b = np.concatenate([blk[1] for blk in blocks])
    G = scipy.linalg.block_diag(*[blk[2] for blk in blocks])
    h = np.concatenate([blk[3] for blk in blocks])
    return A, b, np.asarray(G, float), h


def injection_map(units: Sequence[StorageUnit], n_buses: int, horizon: int) -> np.ndarray:
    """Matrix M with (bus*T + t) rows mapping stacked actions to net injections."""
    M = np.zeros((n_buses * horizon, 2 * horizon * len(units)))
    for k, u in enumerate(units):
        base = 2 * horizon * k
        for t in range(horizon):
            M[u.bus * horizon + t, base + t] = 1.0
            M[u.bus * horizon + t, base + horizon + t] = -1.0
    return M


def _fit_quadratic(fn: Callable[[np.ndarray], float], y: np.ndarray, eps: float):
    """Local value/gradient/Hessian of fn at y by central finite differences.

    The Hessian is symmetrized and projected onto the negative-semidefinite
    cone so the resulting model QP stays concave across dispatch kinks.
    """
    n = len(y)
    v0 = fn(y)
    grad = np.zeros(n)
    H = np.zeros((n, n))
    for i in range(n):
        e = np.zeros(n)
        e[i] = eps
        fp, fm = fn(y + e), fn(y - e)
        grad[i] = (fp - fm) / (2 * eps)
        H[i, i] = (fp - 2 * v0 + fm) / (eps * eps)
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = eps
            ej[j] = eps
            H[i, j] = H[j, i] = (fn(y + ei + ej) - fn(y + ei - ej)
                                 - fn(y - ei + ej) + fn(y - ei - ej)) / (4 * eps * eps)
    w, V = np.linalg.eigh(0.5 * (H + H.T))
    H = V @ np.diag(np.minimum(w, 0.0)) @ V.T
    return v0, grad, H


def maximize_over_schedules(network: Network, demand: DemandProfile,
                            units: Sequence[StorageUnit],
                            period_value: Callable[[int, np.ndarray], float],
                            starts: Sequence[Dict[str, StorageSchedule]],
                            settings: SolverSettings = SolverSettings(),
                            max_rounds: int = 25, eps: float = 1e-5):
    """Maximize sum_t period_value(t, y_t) - storage cost; returns (schedules, value).

    `period_value` gives the exact value of net injections y_t in period t
    (for example the LMP settlement or the mitigated-price payment).
    Evaluations are pure, so starts may be processed in parallel.
    """
    units = list(units)
    T = demand.n_periods
    n = network.n_buses
    A, b, G, h = joint_constraints(units, T)
    M = injection_map(units, n, T)
    dim = M.shape[1]

    cost_P = np.zeros((dim, dim))
    for k, u in enumerate(units):
        base = 2 * T * k
        cost_P[base:base + T, base:base + T] = u.w_plus * np.eye(T)
        cost_P[base + T:base + 2 * T, base + T:base + 2 * T] = u.w_minus * np.eye(T)

    def exact(z):
        y = (M @ z).reshape(n, T)
        total = sum(period_value(t, y[:, t]) for t in range(T))
        return total - 0.5 * float(z @ cost_P @ z)

    def model_qp(z):
        y = (M @ z).reshape(n, T)
        P = cost_P.copy()
        q = np.zeros(dim)
        for t in range(T):
            rows = M.reshape(n, T, dim)[:, t, :]
            _, grad, H = _fit_quadratic(lambda yt: period_value(t, yt), y[:, t], eps)
            # maximize: fold -model into the minimized quadratic
            P += rows.T @ (-H) @ rows
            q += rows.T @ (-(grad - H @ y[:, t]))
        prog = ConvexProgram.from_quadratic(P, q, A=A, b=b, G=G, h=h)
        return solve(prog, settings, x0=z).point

    best_z, best_val = None, -np.inf
    for start in starts:
        z = stack_schedules(units, start)
        val = exact(z)
        if val > best_val:
            best_z, best_val = z.copy(), val
        for _ in range(max_rounds):
            try:
                z_new = model_qp(z)
            except (Infeasible, MaxIterations):
                break
            accepted = False
            cand = z_new
            for _ in range(6):  # damp toward the incumbent if the full step regresses
                v = exact(cand)
                if v > val + 1e-12:
                    z, val = cand, v
                    accepted = True
                    break
                cand = 0.5 * (cand + z)
            if val > best_val:
                best_z, best_val = z.copy(), val
            if not accepted:
                break
            if np.linalg.norm(z_new - z, np.inf) < 1e-10:
                break
    return unstack_schedules(units, best_z, T), float(best_val)


def default_starts(network: Network, demand: DemandProfile,
                   units: Sequence[StorageUnit], settings,
                   n_random: int = 2, seed: int = 7) -> list:
    """Zero schedules, best responses to the storage-free LMPs, random draws."""
    from .clearing import clear_market
    from .sampling import random_feasible_schedules
    from .storage import PriceSchedule, su_best_response

    T = demand.n_periods
    starts = [{u.id: StorageSchedule.zero(T) for u in units}]
    lmps = clear_market(network, demand, settings=settings).lmps
    warm = {}
    for u in units:
        tau = np.clip(lmps[u.bus], 0.0, None)
        warm[u.id] = su_best_response(u, PriceSchedule(tau=tau, bound=float(np.max(tau)) + 1.0),
                                      settings)
    starts.append(warm)
    rng = np.random.default_rng(seed)
    for _ in range(n_random):
        try:
            starts.append(random_feasible_schedules(units, T, rng, settings))
        except NotImplementedError:
            break
    return starts
