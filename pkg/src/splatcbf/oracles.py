"""Independent reference computations used by the validation suite and tests.

Each oracle deliberately avoids the code path it checks: QP optima by
brute-force active-set enumeration, AVaR by Monte Carlo with an empirical
quantile, derivatives by central differences.
"""

from __future__ import annotations

from itertools import combinations
from typing import Callable

import numpy as np

from splatcbf.qp import QpProblem


def qp_enumerate(problem: QpProblem, feas_tol: float = 1e-9) -> tuple[float, np.ndarray]:
    """Minimum objective over all equality-constrained faces of the feasible set.

    Every subset of at most n constraint rows (inequalities and finite
    bounds) is made active, its KKT system solved in the least-squares sense,
    and the best consistent, feasible stationary point kept.
    """
    n = problem.n
    eye = np.eye(n)
    rows = [problem.ineq_matrix[i] for i in range(problem.m)]
    rhs = list(problem.ineq_rhs)
    for j in range(n):
        if np.isfinite(problem.lower[j]):
            rows.append(eye[j])
            rhs.append(problem.lower[j])
        if np.isfinite(problem.upper[j]):
            rows.append(-eye[j])
            rhs.append(-problem.upper[j])
    G = np.array(rows).reshape(-1, n)
    h = np.array(rhs)
    H, c = problem.hessian, problem.linear
    best_val, best_z = np.inf, None
    for k in range(0, min(n, len(h)) + 1):
        # all size-k active sets at once; pinv gives the least-squares KKT point
        subsets = list(combinations(range(len(h)), k))
        N = len(subsets)
        S = np.array(subsets, dtype=int).reshape(N, k)
        K = np.zeros((N, n + k, n + k))
        K[:, :n, :n] = H
        Ga = G[S]
        K[:, :n, n:] = -np.swapaxes(Ga, 1, 2)
        K[:, n:, :n] = Ga
        r = np.concatenate([np.broadcast_to(-c, (N, n)), h[S]], axis=1)
        sol = np.einsum("nij,nj->ni", np.linalg.pinv(K, rcond=1e-12), r)
        resid = np.abs(np.einsum("nij,nj->ni", K, sol) - r).max(axis=1)
        z = sol[:, :n]
        ok = resid <= 1e-8
        if len(h):
            ok &= (z @ G.T - h).min(axis=1) >= -feas_tol
        if not ok.any():
            continue
        zs = z[ok]
        vals = 0.5 * np.einsum("ni,ij,nj->n", zs, H, zs) + zs @ c
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val, best_z = float(vals[j]), zs[j].copy()
    return best_val, best_z


def random_qp(rng: np.random.Generator, n: int, m: int, psd: bool = False) -> QpProblem:
    """Feasible random QP: rows pass through a known interior point."""
    B = rng.standard_normal((n, n))
    H = B @ B.T + (0.0 if psd else 0.1) * np.eye(n)
    if psd and n > 1:
        U, s, Vt = np.linalg.svd(H)
        s[-1] = 0.0
        H = (U * s) @ U.T
        H = 0.5 * (H + H.T)
    c = rng.standard_normal(n) * 2
    z0 = rng.standard_normal(n) * 0.5
    A = rng.standard_normal((m, n))
    b = A @ z0 - rng.uniform(0.0, 1.0, m)
    lower = np.where(rng.uniform(size=n) < 0.5, z0 - rng.uniform(0.1, 1.0, n), -np.inf)
    upper = np.where(rng.uniform(size=n) < 0.5, z0 + rng.uniform(0.1, 1.0, n), np.inf)
    if psd:
        lower = z0 - 2.0
        upper = z0 + 2.0
    return QpProblem(H, c, A, b, lower, upper)


def mc_avar(mean: float, std: float, epsilon: float, mode: str, n: int, rng: np.random.Generator) -> tuple[float, float]:
    """Monte Carlo lower-tail mean of N(mean, std^2) and its standard error.

    Tail probability is 1 - epsilon in "tail" mode and epsilon in "literal"
    mode. Uses the empirical quantile and the Rockafellar-Uryasev form
    q + E[min(d - q, 0)] / p, whose sample std gives an asymptotically valid
    standard error.
    """
    d = mean + std * rng.standard_normal(n)
    return mc_avar_samples(d, epsilon, mode)


def mc_avar_samples(d: np.ndarray, epsilon: float, mode: str) -> tuple[float, float]:
    p = 1.0 - epsilon if mode == "tail" else epsilon
    q = float(np.quantile(d, p))
    y = q + np.minimum(d - q, 0.0) / p
    return float(y.mean()), float(y.std(ddof=1) / np.sqrt(len(d)))


def fd_gradient(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        g[k] = (f(x + e) - f(x - e)) / (2 * h)
    return g


def fd_jacobian(f: Callable[[np.ndarray], np.ndarray], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    cols = []
    for k in range(len(x)):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((np.asarray(f(x + e)) - np.asarray(f(x - e))) / (2 * h))
    return np.column_stack(cols)


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.abs(a - b).max() / max(np.abs(b).max(), floor))
