"""Dense convex programs with affine constraints: active-set QP and projected gradient.

Solves

    min f(x)   s.t.  A x = b,   G x <= h

for small dense problems.  Quadratic objectives go through a primal
active-set method that returns exact multipliers; general smooth convex
objectives go through projected gradient with backtracking, where each
projection is itself a QP handled by the active-set method.

Lagrangian convention: L = f(x) + nu.(Ax - b) + mu.(Gx - h) with mu >= 0,
so for a perturbation b -> b + eps the optimal value moves by -nu.eps.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg
import scipy.optimize


class SolverError(Exception):
    """Base class for solver failures."""


class Infeasible(SolverError):
    """No point satisfies the constraints within tolerance."""


class Unbounded(SolverError):
    """The objective decreases without bound along a feasible ray."""


class MaxIterations(SolverError):
    """Iteration budget exhausted; carries the best iterate found."""

    def __init__(self, message: str, best_point: np.ndarray, residual: float):
        super().__init__(message)
        self.best_point = best_point
        self.residual = residual


@dataclass(frozen=True)
class SolverSettings:
    kkt_tolerance: float = 1e-8
    max_iterations: int = 10_000
    step_control: str = "exact-line-search"  # or "backtracking"

    def __post_init__(self):
        if self.kkt_tolerance <= 0:
            raise ValueError("kkt_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.step_control not in ("exact-line-search", "backtracking"):
            raise ValueError(f"unknown step_control {self.step_control!r}")


@dataclass(frozen=True)
class Quadratic:
    """f(x) = 1/2 x.P x + q.x + const with P symmetric PSD."""

    P: np.ndarray
    q: np.ndarray
    const: float = 0.0

    def value(self, x: np.ndarray) -> float:
        return 0.5 * float(x @ self.P @ x) + float(self.q @ x) + self.const

    def grad(self, x: np.ndarray) -> np.ndarray:
        return self.P @ x + self.q


@dataclass
class ConvexProgram:
    """Differentiable convex objective over an affine-constrained feasible set.

    `objective`/`gradient` are callables; when the objective is quadratic,
    set `quadratic` as well so `solve` can use the active-set path.
    Empty constraint blocks are represented by (0, n) arrays.
    """

    dimension: int
    objective: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    A: np.ndarray = field(default=None)
    b: np.ndarray = field(default=None)
    G: np.ndarray = field(default=None)
    h: np.ndarray = field(default=None)
    quadratic: Optional[Quadratic] = None

    def __post_init__(self):
        n = self.dimension
        self.A = np.zeros((0, n)) if self.A is None else np.atleast_2d(np.asarray(self.A, float))
        self.b = np.zeros(0) if self.b is None else np.atleast_1d(np.asarray(self.b, float))
        self.G = np.zeros((0, n)) if self.G is None else np.atleast_2d(np.asarray(self.G, float))
        self.h = np.zeros(0) if self.h is None else np.atleast_1d(np.asarray(self.h, float))
        if self.A.shape != (len(self.b), n):
            raise ValueError("equality block shape mismatch")
        if self.G.shape != (len(self.h), n):
            raise ValueError("inequality block shape mismatch")

    @classmethod
    def from_quadratic(cls, P, q, const=0.0, A=None, b=None, G=None, h=None) -> "ConvexProgram":
        P = np.asarray(P, float)
        q = np.asarray(q, float)
        quad = Quadratic(P=0.5 * (P + P.T), q=q, const=float(const))
        return cls(dimension=len(q), objective=quad.value, gradient=quad.grad,
                   A=A, b=b, G=G, h=h, quadratic=quad)

    def check_gradient(self, points, rel_tol: float = 1e-5, step: float = 1e-6) -> float:
        """Worst relative error of the gradient oracle vs central differences."""
        worst = 0.0
        for x in points:
            x = np.asarray(x, float)
            g = self.gradient(x)
            fd = np.empty_like(g)
            for j in range(self.dimension):
                e = np.zeros(self.dimension)
                e[j] = step
                fd[j] = (self.objective(x + e) - self.objective(x - e)) / (2 * step)
            err = np.linalg.norm(g - fd) / max(1.0, np.linalg.norm(g))
            worst = max(worst, err)
        if worst > rel_tol:
            raise ValueError(f"gradient oracle disagrees with finite differences: {worst:.2e}")
        return worst


@dataclass(frozen=True)
class Solution:
    point: np.ndarray
    eq_duals: np.ndarray
    ineq_duals: np.ndarray
    objective_value: float
    kkt_residual: float


def kkt_residual(program: ConvexProgram, x: np.ndarray,
                 eq_duals: np.ndarray, ineq_duals: np.ndarray) -> float:
    """Max of stationarity, primal/dual feasibility, and complementarity residuals.

    Pure arithmetic on the supplied point and multipliers; carries no solver
    state so callers can re-derive the reported residual independently.
    """
    grad = program.gradient(x)
    stat = grad.copy()
    if program.A.size:
        stat = stat + program.A.T @ eq_duals
    if program.G.size:
        stat = stat + program.G.T @ ineq_duals
    r_stat = float(np.max(np.abs(stat))) if stat.size else 0.0
    r_eq = float(np.max(np.abs(program.A @ x - program.b))) if len(program.b) else 0.0
    slack = program.G @ x - program.h if len(program.h) else np.zeros(0)
    r_ineq = float(np.max(slack)) if slack.size else 0.0
    r_dual = float(np.max(-ineq_duals)) if ineq_duals.size else 0.0
    r_comp = float(np.max(np.abs(ineq_duals * slack))) if slack.size else 0.0
    return max(r_stat, r_eq, r_ineq, r_dual, r_comp, 0.0)


def _feasible_point(program: ConvexProgram, x0: Optional[np.ndarray], tol: float) -> np.ndarray:
    n = program.dimension
    A, b, G, h = program.A, program.b, program.G, program.h

    def ok(x):
        e = np.max(np.abs(A @ x - b)) if len(b) else 0.0
        i = np.max(G @ x - h) if len(h) else 0.0
        return max(e, i) <= tol

    if x0 is not None:
        x0 = np.asarray(x0, float)
        if ok(x0):
            return x0
    if len(b) and not len(h):
        x, *_ = np.linalg.lstsq(A, b, rcond=None)
        if ok(x):
            return x
        raise Infeasible("equality system has no solution")
    if not len(b) and not len(h):
        return np.zeros(n)
    x, *_ = np.linalg.lstsq(A, b, rcond=None) if len(b) else (np.zeros(n),)
    if ok(x):
        return x
    # phase 1 via LP
    res = scipy.optimize.linprog(
        c=np.zeros(n),
        A_ub=G if len(h) else None, b_ub=h if len(h) else None,
        A_eq=A if len(b) else None, b_eq=b if len(b) else None,
        bounds=[(None, None)] * n, method="highs",
    )
    if res.status == 2 or res.x is None:
        raise Infeasible("no point satisfies the constraints")
    x = np.asarray(res.x, float)
    if not ok(x):
        raise Infeasible("phase-1 point violates constraints beyond tolerance")
    return x


def _multipliers(grad, A, G_act, tol):
    """Multipliers for grad + A'.nu + G_act'.mu = 0.

    Returns (nu, mu, ok, raw_mu): `raw_mu` is the min-norm least-squares
    solution (sign-free, drives constraint drops); `mu` has nonnegative signs
    restored when a valid nonnegative certificate exists, and `ok` says
    whether stationarity holds with mu >= 0 within tolerance.  The
    sign-constrained repair is only attempted when the multipliers are
    non-unique (rank-deficient working set).
    """
    m_eq, m_act = A.shape[0], G_act.shape[0]
    scale = max(1.0, float(np.max(np.abs(grad)))) if grad.size else 1.0
    if m_eq + m_act == 0:
        ok = (float(np.max(np.abs(grad))) if grad.size else 0.0) <= tol * scale
        return np.zeros(0), np.zeros(0), ok, np.zeros(0)
    C = np.vstack([A, G_act]).T  # n x (m_eq + m_act)
    y, _, rank, _ = np.linalg.lstsq(C, -grad, rcond=None)
    raw_mu = y[m_eq:].copy()
    if raw_mu.size and np.min(raw_mu) < -tol and rank < m_eq + m_act:
        res = scipy.optimize.lsq_linear(
            C, -grad,
            bounds=(np.concatenate([np.full(m_eq, -np.inf), np.zeros(m_act)]),
                    np.full(m_eq + m_act, np.inf)),
            method="bvls")
        y = res.x
    nu, mu = y[:m_eq], np.maximum(y[m_eq:], 0.0)
    stat = float(np.max(np.abs(C @ np.concatenate([nu, mu]) + grad)))
    return nu, mu, stat <= 10 * tol * scale, raw_mu


def _independent_active_rows(A, G, h, x, n):
    """Indices of active inequalities whose rows extend [A; G_act] independently."""
    work = []
    rows = [A] if A.size else []
    rank = np.linalg.matrix_rank(A) if A.size else 0
    for i in range(len(h)):
        if G[i] @ x - h[i] < -1e-11:
            continue
        cand = np.vstack(rows + [G[i]]) if rows else G[i].reshape(1, -1)
        r = np.linalg.matrix_rank(cand)
        if r > rank:
            work.append(i)
            rows.append(G[i].reshape(1, -1))
            rank = r
        if rank >= n:
            break
    return work


def _eqp_direct(P, q, C, rhs_c, n):
    """Solve the working-set EQP by one KKT factorization; None when singular."""
    m = C.shape[0]
    KKT = np.zeros((n + m, n + m))
    KKT[:n, :n] = P
    if m:
        KKT[:n, n:] = C.T
        KKT[n:, :n] = C
    rhs = np.concatenate([-q, rhs_c])
    try:
        sol = np.linalg.solve(KKT, rhs)
    except np.linalg.LinAlgError:
        return None
    if not np.all(np.isfinite(sol)):
        return None
    # reject solves poisoned by near-singularity
    if np.linalg.norm(KKT @ sol - rhs, np.inf) > 1e-7 * max(1.0, np.linalg.norm(rhs, np.inf)):
        return None
    return sol[:n], sol[n:]


def _active_set_qp(program: ConvexProgram, x: np.ndarray,
                   settings: SolverSettings) -> Solution:
    quad = program.quadratic
    P, q = quad.P, quad.q
    A, b, G, h = program.A, program.b, program.G, program.h
    n = program.dimension
    tol = settings.kkt_tolerance

    work = _independent_active_rows(A, G, h, x, n)
    best_x = x

    for _ in range(settings.max_iterations):
        Gw = G[work] if work else np.zeros((0, n))
        C = np.vstack([A, Gw]) if (len(b) + len(work)) else np.zeros((0, n))
        g = P @ x + q

        direct = _eqp_direct(P, q, C, np.concatenate([b, h[work] if work else np.zeros(0)]), n)
        ray = None
        y_direct = None
        if direct is not None:
            p = direct[0] - x
            y_direct = direct[1]
        else:
            # singular working-set system: move within the constraint nullspace
            Z = scipy.linalg.null_space(C) if C.size else np.eye(n)
            if C.size and Z.size == 0:
                Z = np.zeros((n, 0))
            p = np.zeros(n)
            if Z.shape[1]:
                Pz = Z.T @ P @ Z
                gz = Z.T @ g
                w_eig, V = scipy.linalg.eigh(Pz)
                small = w_eig <= 1e-11 * max(1.0, w_eig[-1] if w_eig.size else 1.0)
                V0 = V[:, small]
                null_grad = V0.T @ gz if V0.size else np.zeros(0)
                if null_grad.size and np.linalg.norm(null_grad) > tol:
                    # zero-curvature descent direction: objective affine along it
                    ray = Z @ (-(V0 @ null_grad))
                else:
                    u = V @ np.where(small, 0.0, -(V.T @ gz) / np.where(small, 1.0, w_eig))
                    p = Z @ u

        if ray is not None:
            step, blocker = _ratio_test(G, h, x, ray, work)
            if blocker is None:
                raise Unbounded("objective decreases without bound along a feasible ray")
            x = x + step * ray
            work.append(blocker)
            work.sort()
            continue

        if np.linalg.norm(p, np.inf) <= 1e-12 * max(1.0, np.linalg.norm(x, np.inf)) + 1e-13:
            if y_direct is not None:
                # unique multipliers from the nonsingular KKT solve
                nu, mu_w = y_direct[:len(b)], y_direct[len(b):]
                if not mu_w.size or np.min(mu_w) >= -tol:
                    return _terminate(program, x, work, nu, mu_w, tol)
                work.remove(work[int(np.argmin(mu_w))])
                continue
            nu, mu_w, ok, raw_mu = _multipliers(g, A, Gw, tol)
            if ok:
                return _terminate(program, x, work, nu, mu_w, tol)
            work.remove(work[int(np.argmin(raw_mu))])
            continue

        step, blocker = _ratio_test(G, h, x, p, work)
        step = min(1.0, step)
        x = x + step * p
        best_x = x
        if blocker is not None and step < 1.0:
            work.append(blocker)
            work.sort()

    nu, mu_w, _, _ = _multipliers(P @ best_x + q, A,
                                  G[work] if work else np.zeros((0, n)), tol)
    mu = np.zeros(len(h))
    for k, i in enumerate(work):
        mu[i] = mu_w[k]
    resid = kkt_residual(program, best_x, nu, mu)
    raise MaxIterations("active-set iteration budget exhausted", best_x, resid)


def _terminate(program: ConvexProgram, x, work, nu_w, mu_work, tol) -> Solution:
    """Assemble the solution, refitting minimum-norm multipliers over all
    active constraints when the point is degenerate (more active than working)."""
    G, h = program.G, program.h
    act = [i for i in range(len(h)) if G[i] @ x - h[i] >= -1e-9] if len(h) else []
    nu, mu_full = nu_w, None
    if len(act) > len(work):
        g = program.gradient(x)
        nu2, mu_a, ok, _ = _multipliers(g, program.A, G[act], tol)
        if ok:
            nu = nu2
            mu_full = np.zeros(len(h))
            for k, i in enumerate(act):
                mu_full[i] = mu_a[k]
    if mu_full is None:
        mu_full = np.zeros(len(h))
        for k, i in enumerate(work):
            mu_full[i] = max(mu_work[k], 0.0)
    resid = kkt_residual(program, x, nu, mu_full)
    return Solution(point=x, eq_duals=nu, ineq_duals=mu_full,
                    objective_value=program.objective(x), kkt_residual=resid)


def _ratio_test(G, h, x, p, work):
    """Largest step along p before a non-working inequality becomes active."""
    if not len(h):
        return np.inf, None
    Gp = G @ p
    slack = np.maximum(h - G @ x, 0.0)
    mask = Gp > 1e-12
    if work:
        mask[work] = False
    if not np.any(mask):
        return np.inf, None
    ratios = np.full(len(h), np.inf)
    ratios[mask] = slack[mask] / Gp[mask]
    blocker = int(np.argmin(ratios))
    return float(ratios[blocker]), blocker


def _projected_gradient(program: ConvexProgram, x: np.ndarray,
                        settings: SolverSettings) -> Solution:
    tol = settings.kkt_tolerance
    n = program.dimension
    proj_settings = SolverSettings(kkt_tolerance=min(tol, 1e-10),
                                   max_iterations=settings.max_iterations)

    def project(y):
        prob = ConvexProgram.from_quadratic(np.eye(n), -y, A=program.A, b=program.b,
                                            G=program.G, h=program.h)
        return _active_set_qp(prob, _feasible_point(prob, x, tol), proj_settings).point

    t = 1.0
    f = program.objective(x)
    for _ in range(settings.max_iterations):
        g = program.gradient(x)
        while True:
            cand = project(x - t * g)
            d = cand - x
            f_cand = program.objective(cand)
            # sufficient decrease for the prox step; shrink t otherwise
            if f_cand <= f + g @ d + (d @ d) / (2 * t) + 1e-14 or t < 1e-14:
                break
            t *= 0.5
        moved = np.linalg.norm(d, np.inf)
        x, f = cand, f_cand
        if moved <= max(t, 1e-8) * tol * 10:
            sol = _finish_first_order(program, x, tol)
            if sol.kkt_residual <= tol:
                return sol
            if settings.step_control == "backtracking":
                t = max(t, 1e-6)  # keep probing with smaller residual target
        if moved <= 1e-15:
            break
    sol = _finish_first_order(program, x, tol)
    if sol.kkt_residual <= tol:
        return sol
    raise MaxIterations("projected gradient did not reach KKT tolerance",
                        sol.point, sol.kkt_residual)


def _finish_first_order(program, x, tol):
    act = [i for i in range(len(program.h))
           if program.G[i] @ x - program.h[i] >= -1e-7]
    G_act = program.G[act] if act else np.zeros((0, program.dimension))
    nu, mu_a, _, _ = _multipliers(program.gradient(x), program.A, G_act, tol)
    mu = np.zeros(len(program.h))
    for k, i in enumerate(act):
        mu[i] = mu_a[k]
    return Solution(point=x, eq_duals=nu, ineq_duals=mu,
                    objective_value=program.objective(x),
                    kkt_residual=kkt_residual(program, x, nu, mu))


def solve(program: ConvexProgram, settings: SolverSettings = SolverSettings(),
          x0: Optional[np.ndarray] = None) -> Solution:
    """Solve the program; raises Infeasible, Unbounded, or MaxIterations.

    Thread-safe: pure function of its arguments.
    """
    x = _feasible_point(program, x0, settings.kkt_tolerance)
    if program.quadratic is not None:
        return _active_set_qp(program, x, settings)
    return _projected_gradient(program, x, settings)
