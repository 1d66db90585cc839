"""Small dense convex QP solver with full dual multipliers and KKT residuals.

Solves

    minimize    1/2 z^T H z + c^T z
    subject to  A z >= b,   lower <= z <= upper

with a Mehrotra predictor-corrector interior-point method followed by an
active-set polish: the rows the interior iterate identifies as active are
solved as an equality-constrained KKT system, which yields exact
complementarity and clean multipliers. Variables with lower == upper are
eliminated before solving.

Sign convention for the multipliers (all non-negative at optimality):

    H z + c - A^T dual_ineq - dual_lower + dual_upper = 0
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

ROW_TAGS = ("safety", "perception_spatial", "perception_angular", "other")


@dataclass
class QpProblem:
    hessian: np.ndarray
    linear: np.ndarray
    ineq_matrix: np.ndarray | None = None
    ineq_rhs: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    row_tags: Sequence[str] | None = None

    def __post_init__(self) -> None:
        self.hessian = np.atleast_2d(np.asarray(self.hessian, dtype=float))
        n = self.hessian.shape[0]
        self.linear = np.asarray(self.linear, dtype=float).reshape(n)
        if self.ineq_matrix is None:
            self.ineq_matrix = np.zeros((0, n))
            self.ineq_rhs = np.zeros(0)
        self.ineq_matrix = np.asarray(self.ineq_matrix, dtype=float).reshape(-1, n)
        self.ineq_rhs = np.asarray(self.ineq_rhs, dtype=float).reshape(len(self.ineq_matrix))
        self.lower = np.full(n, -np.inf) if self.lower is None else np.asarray(self.lower, dtype=float).reshape(n)
        self.upper = np.full(n, np.inf) if self.upper is None else np.asarray(self.upper, dtype=float).reshape(n)
        if self.row_tags is None:
            self.row_tags = ["other"] * len(self.ineq_rhs)
        self.row_tags = list(self.row_tags)
        if len(self.row_tags) != len(self.ineq_rhs):
            raise ValueError("row_tags must label every inequality row")
        if any(t not in ROW_TAGS for t in self.row_tags):
            raise ValueError(f"row tags must be drawn from {ROW_TAGS}")
        if self.hessian.shape != (n, n):
            raise ValueError("hessian must be square")
        if not np.allclose(self.hessian, self.hessian.T, rtol=0.0, atol=1e-10):
            raise ValueError("hessian must be symmetric")
        if n and np.linalg.eigvalsh(self.hessian).min() < -1e-10:
            raise ValueError("hessian must be positive semidefinite")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bounds exceed upper bounds")

    @property
    def n(self) -> int:
        return len(self.linear)

    @property
    def m(self) -> int:
        return len(self.ineq_rhs)

    def objective(self, z: np.ndarray) -> float:
        return float(0.5 * z @ self.hessian @ z + self.linear @ z)


@dataclass
class KktResiduals:
    stationarity: float
    primal: float
    complementarity: float

    def max(self) -> float:
        return max(self.stationarity, self.primal, self.complementarity)


@dataclass
class QpSolution:
    primal: np.ndarray
    dual_ineq: np.ndarray
    dual_lower: np.ndarray
    dual_upper: np.ndarray
    status: str
    kkt: KktResiduals
    iterations: int = 0
    objective: float = np.nan
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def kkt_report(problem: QpProblem, solution: QpSolution) -> KktResiduals:
    """Recompute stationarity, primal feasibility and complementarity (max-norms).

    Dual sign violations count toward the complementarity residual.
    """
    z = solution.primal
    lam, mu_l, mu_u = solution.dual_ineq, solution.dual_lower, solution.dual_upper
    H, c, A, b = problem.hessian, problem.linear, problem.ineq_matrix, problem.ineq_rhs
    stat = H @ z + c - A.T @ lam - mu_l + mu_u
    stationarity = float(np.max(np.abs(stat))) if len(stat) else 0.0

    row_slack = A @ z - b
    lo_fin = np.isfinite(problem.lower)
    up_fin = np.isfinite(problem.upper)
    lo_slack = np.where(lo_fin, z - problem.lower, 0.0)
    up_slack = np.where(up_fin, problem.upper - z, 0.0)
    viol = np.concatenate([np.maximum(-row_slack, 0), np.maximum(-lo_slack, 0), np.maximum(-up_slack, 0)])
    primal = float(viol.max()) if len(viol) else 0.0

    # multipliers on infinite bounds must vanish
    mu_l_eff = np.where(lo_fin, mu_l, 0.0)
    mu_u_eff = np.where(up_fin, mu_u, 0.0)
    bad_inf = np.concatenate([np.abs(mu_l[~lo_fin]), np.abs(mu_u[~up_fin])])
    comp = np.concatenate(
        [
            np.abs(lam * row_slack),
            np.abs(mu_l_eff * lo_slack),
            np.abs(mu_u_eff * up_slack),
            np.maximum(-lam, 0),
            np.maximum(-mu_l, 0),
            np.maximum(-mu_u, 0),
            bad_inf,
        ]
    )
    complementarity = float(comp.max()) if len(comp) else 0.0
    return KktResiduals(stationarity, primal, complementarity)


def _stack_rows(A, b, lower, upper):
    """All constraints as G z >= h, plus the bookkeeping to split the duals."""
    n = A.shape[1]
    lo_idx = np.flatnonzero(np.isfinite(lower))
    up_idx = np.flatnonzero(np.isfinite(upper))
    eye = np.eye(n)
    G = np.vstack([A, eye[lo_idx], -eye[up_idx]])
    h = np.concatenate([b, lower[lo_idx], -upper[up_idx]])
    return G, h, lo_idx, up_idx


def _ipm(H, c, G, h, tol, max_iter):
    n, m = len(c), len(h)
    z = np.zeros(n)
    s = np.maximum(G @ z - h, 1.0)
    lam = np.ones(m)
    reg = 1e-13 * max(1.0, float(np.abs(H).max()) if n else 1.0)
    it = 0
    for it in range(1, max_iter + 1):
        r_d = H @ z + c - G.T @ lam
        r_p = G @ z - s - h
        mu = float(s @ lam) / m
        if max(np.abs(r_d).max(initial=0.0), np.abs(r_p).max(initial=0.0)) <= tol and mu <= tol:
            break
        if not np.isfinite(mu) or mu > 1e14 or np.abs(z).max(initial=0.0) > 1e14:
            break
        d = lam / s
        K = H + (G.T * d) @ G + reg * np.eye(n)
        try:
            L = np.linalg.cholesky(K)
            solve_K = lambda rhs: np.linalg.solve(L.T, np.linalg.solve(L, rhs))  # noqa: E731
        except np.linalg.LinAlgError:
            K_inv = np.linalg.pinv(K)
            solve_K = lambda rhs: K_inv @ rhs  # noqa: E731

        def direction(r_c):
            dz = solve_K(-r_d - G.T @ (d * r_p + r_c / s))
            ds = G @ dz + r_p
            dl = (-r_c - lam * ds) / s
            return dz, ds, dl

        def max_step(v, dv):
            neg = dv < 0
            return min(1.0, float(np.min(-v[neg] / dv[neg]))) if np.any(neg) else 1.0

        dz, ds, dl = direction(s * lam)
        a_aff = min(max_step(s, ds), max_step(lam, dl))
        mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dl)) / m
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dz, ds, dl = direction(s * lam + ds * dl - sigma * mu)
        a = min(1.0, 0.99 * min(max_step(s, ds), max_step(lam, dl)))
        z = z + a * dz
        s = s + a * ds
        lam = lam + a * dl
    return z, s, lam, it


def _polish(H, c, G, h, active):
    n = len(c)
    Ga = G[active]
    k = len(Ga)
    K = np.block([[H, -Ga.T], [Ga, np.zeros((k, k))]])
    rhs = np.concatenate([-c, h[active]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    z = sol[:n]
    lam = np.zeros(len(h))
    lam[active] = sol[n:]
    return z, lam


def _kkt_point(H, c, G, h, active):
    """Equality-constrained KKT point on ``active``; lstsq only if singular."""
    n = len(c)
    Ga = G[active]
    k = len(Ga)
    K = np.block([[H, -Ga.T], [Ga, np.zeros((k, k))]])
    rhs = np.concatenate([-c, h[active]])
    try:
        sol = np.linalg.solve(K, rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    lam = np.zeros(len(h))
    lam[active] = sol[n:]
    return sol[:n], lam


def _active_set(H, c, G, h, max_iter, feas_tol=1e-12):
    """Primal-dual working-set iteration; returns None when it does not settle.

    The result is only a candidate: ``solve`` accepts it after the
    independent KKT check, otherwise it falls back to the interior point.
    """
    m = len(h)
    active = np.zeros(m, dtype=bool)
    for _ in range(max_iter):
        z, lam = _kkt_point(H, c, G, h, active)
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(lam))):
            return None
        viol = G @ z - h
        viol[active] = np.inf
        j = int(np.argmin(viol)) if m else -1
        if m and viol[j] < -feas_tol:
            # a constraint parallel to an active one cannot join a nonsingular set
            active[j] = True
            continue
        lam_a = np.where(active, lam, np.inf)
        i = int(np.argmin(lam_a)) if m else -1
        if m and lam_a[i] < 0:
            active[i] = False
            continue
        return z, lam
    return None


def _assemble(problem, z_free, lam_rows, free, fixed_vals, lo_idx, up_idx, m_rows):
    n = problem.n
    z = fixed_vals.copy()
    z[free] = z_free
    lam = lam_rows[:m_rows]
    mu_l = np.zeros(n)
    mu_u = np.zeros(n)
    nl = len(lo_idx)
    mu_l[free[lo_idx]] = lam_rows[m_rows : m_rows + nl]
    mu_u[free[up_idx]] = lam_rows[m_rows + nl :]
    fixed = np.setdiff1d(np.arange(n), free)
    if len(fixed):
        g = (problem.hessian @ z + problem.linear - problem.ineq_matrix.T @ lam)[fixed]
        mu_l[fixed] = np.maximum(g, 0.0)
        mu_u[fixed] = np.maximum(-g, 0.0)
    return z, lam, mu_l, mu_u


def _phase_one_infeasible(problem: QpProblem, tol: float) -> bool:
    """True when no z within the bounds satisfies every row to ``tol``."""
    n, m = problem.n, problem.m
    if m == 0:
        return False
    cost = np.zeros(n + 1)
    cost[-1] = 1.0
    A_ub = -np.hstack([problem.ineq_matrix, np.ones((m, 1))])
    b_ub = -problem.ineq_rhs
    bounds = [(None if not np.isfinite(l) else l, None if not np.isfinite(u) else u) for l, u in zip(problem.lower, problem.upper)]
    bounds.append((0, None))
    res = linprog(cost, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    return res.status == 0 and res.fun > tol


def solve(problem: QpProblem, tol: float = 1e-8, max_iter: int = 100) -> QpSolution:
    """Solve the QP. Status is "optimal", "infeasible" or "max_iter".

    With status "optimal" every KKT residual is at most ``tol``. Identical
    inputs give bitwise-identical outputs.
    """
    n = problem.n
    fixed_mask = problem.lower == problem.upper
    free = np.flatnonzero(~fixed_mask)
    fixed_vals = np.where(fixed_mask, problem.lower, 0.0)
    H = problem.hessian[np.ix_(free, free)]
    c = problem.linear[free] + problem.hessian[np.ix_(free, np.flatnonzero(fixed_mask))] @ fixed_vals[fixed_mask]
    A = problem.ineq_matrix[:, free]
    b = problem.ineq_rhs - problem.ineq_matrix @ fixed_vals
    G, h, lo_idx, up_idx = _stack_rows(A, b, problem.lower[free], problem.upper[free])
    m_rows = problem.m

    candidates = []
    iters = 0
    if len(h) == 0:
        z_free = np.linalg.lstsq(H, -c, rcond=None)[0] if len(free) else np.zeros(0)
        candidates.append((z_free, np.zeros(0)))
    else:
        fast = _active_set(H, c, G, h, 4 * (len(h) + len(c)))
        if fast is not None:
            z, lam, mu_l, mu_u = _assemble(problem, fast[0], fast[1], free, fixed_vals, lo_idx, up_idx, m_rows)
            sol = QpSolution(z, lam, mu_l, mu_u, "optimal", KktResiduals(np.inf, np.inf, np.inf), 0)
            sol.kkt = kkt_report(problem, sol)
            if sol.kkt.max() <= tol:
                sol.objective = problem.objective(sol.primal)
                sol.active = np.abs(problem.ineq_matrix @ sol.primal - problem.ineq_rhs) <= max(tol, 1e-9) * 10
                return sol
        z_i, s_i, lam_i, iters = _ipm(H, c, G, h, min(tol * 1e-2, 1e-10), max_iter)
        if np.all(np.isfinite(z_i)) and np.all(np.isfinite(lam_i)):
            for active in (lam_i > s_i, s_i <= 1e-7 * max(1.0, np.abs(h).max())):
                try:
                    zp, lp = _polish(H, c, G, h, active)
                except np.linalg.LinAlgError:
                    continue
                lp = np.where((lp < 0) & (lp > -1e-12), 0.0, lp)
                candidates.append((zp, lp))
            candidates.append((z_i, lam_i))

    best = None
    for z_free, lam_rows in candidates:
        z, lam, mu_l, mu_u = _assemble(problem, z_free, lam_rows, free, fixed_vals, lo_idx, up_idx, m_rows)
        sol = QpSolution(z, lam, mu_l, mu_u, "max_iter", KktResiduals(np.inf, np.inf, np.inf), iters)
        sol.kkt = kkt_report(problem, sol)
        if best is None or sol.kkt.max() < best.kkt.max():
            best = sol
    if best is None:
        z = fixed_vals.copy()
        best = QpSolution(z, np.zeros(problem.m), np.zeros(n), np.zeros(n), "max_iter", KktResiduals(np.inf, np.inf, np.inf), iters)
    if best.kkt.max() <= tol:
        best.status = "optimal"
    elif _phase_one_infeasible(problem, max(tol, 1e-7)):
        best.status = "infeasible"
    best.objective = problem.objective(best.primal)
    best.active = np.abs(problem.ineq_matrix @ best.primal - problem.ineq_rhs) <= max(tol, 1e-9) * 10
    return best
