"""Invariant checks behind ``splatcbf validate``.

Each check returns a ``CheckResult`` with the measured worst-case residual
and the threshold it was compared against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from splatcbf.barriers import (
    BarrierEval,
    PerceptionParams,
    SafetyBarrierParams,
    logsumexp_softmin,
    safety_barrier,
    side_indicator,
)
from splatcbf.controller import ControllerConfig, assemble_qp
from splatcbf.info_gain import InfoDirections
from splatcbf.models import Unicycle2D
from splatcbf.oracles import fd_gradient, fd_jacobian, mc_avar_samples, qp_enumerate, random_qp, rel_err
from splatcbf.qp import solve
from splatcbf.risk import DistanceDistribution, RiskParams, avar, rho_arrays
from splatcbf.splat_field import SplatField, generate_field


@dataclass
class CheckResult:
    name: str
    passed: bool
    residual: float
    threshold: float
    detail: str = ""

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag} | {self.name} | residual={self.residual:.3e} | threshold={self.threshold:.1e} | {self.detail}"


def _random_field(rng: np.random.Generator, m: int, spread: float = 2.0) -> SplatField:
    return generate_field("random-box", int(rng.integers(0, 2**31)), count=m, lo=(-spread,) * 3, hi=(spread,) * 3)


def _away_from_means(rng, field: SplatField, spread: float, min_gap: float = 0.05) -> np.ndarray:
    while True:
        p = rng.uniform(-spread, spread, 3)
        if field.nearest(p)[0] > min_gap:
            return p


def check_softmin_sandwich(n: int = 1000, seed: int = 0, beta_sign: float = 1.0) -> CheckResult:
    """min rho - ln(M)/beta <= h_s <= min rho over random fields, M in 1..200.

    ``beta_sign = -1`` flips the temperature sign inside the soft-min: the
    negative control that must fail.
    """
    rng = np.random.default_rng(seed)
    risk = RiskParams()
    worst = 0.0
    for _ in range(n):
        m = int(rng.integers(1, 201))
        beta = float(rng.choice([1.0, 10.0, 100.0]))
        fld = _random_field(rng, m)
        p = _away_from_means(rng, fld, 2.0)
        rho = rho_arrays(fld, np.arange(m), p, risk)[0]
        if beta_sign > 0:
            h = safety_barrier(fld, p, risk, SafetyBarrierParams(beta=beta, cull_radius="exact"), order="value").value
        else:
            h = logsumexp_softmin(rho, -beta)[0]
        lo, hi = rho.min() - math.log(m) / beta, rho.min()
        worst = max(worst, lo - h, h - hi)
    return CheckResult("softmin sandwich", worst <= 1e-9, max(worst, 0.0), 1e-9, f"{n} random (field, position) pairs")


def check_barrier_derivatives(n: int = 100, seed: int = 1) -> CheckResult:
    rng = np.random.default_rng(seed)
    risk = RiskParams()
    sp = SafetyBarrierParams(beta=10.0, cull_radius="exact")
    eg = eh = 0.0
    for _ in range(n):
        fld = _random_field(rng, int(rng.integers(2, 40)))
        p = _away_from_means(rng, fld, 2.0, 0.2)
        ev = safety_barrier(fld, p, risk, sp, order="hess")
        g_fd = fd_gradient(lambda x: safety_barrier(fld, x, risk, sp, order="value").value, p, 1e-5)
        H_fd = fd_jacobian(lambda x: safety_barrier(fld, x, risk, sp, order="grad").gradient, p, 1e-5)
        eg = max(eg, rel_err(ev.gradient, g_fd))
        eh = max(eh, rel_err(ev.hessian, H_fd))
    ok = eg <= 1e-5 and eh <= 1e-4
    return CheckResult("h_s gradient/Hessian vs FD", ok, max(eg, eh / 10), 1e-5, f"grad rel {eg:.2e} (<=1e-5), hess rel {eh:.2e} (<=1e-4)")


def check_rho_derivatives(n: int = 100, seed: int = 2) -> CheckResult:
    rng = np.random.default_rng(seed)
    risk = RiskParams()
    eg = eh = 0.0
    for _ in range(n):
        fld = _random_field(rng, 1)
        p = _away_from_means(rng, fld, 2.0, 0.2)
        _, g, H = rho_arrays(fld, np.array([0]), p, risk, 2)
        g_fd = fd_gradient(lambda x: rho_arrays(fld, np.array([0]), x, risk)[0][0], p, 1e-6)
        H_fd = fd_jacobian(lambda x: rho_arrays(fld, np.array([0]), x, risk, 1)[1][0], p, 1e-5)
        eg = max(eg, rel_err(g[0], g_fd))
        eh = max(eh, rel_err(H[0], H_fd))
    ok = eg <= 1e-6 and eh <= 1e-5
    return CheckResult("isotropic rho gradient/Hessian vs FD", ok, max(eg, eh / 10), 1e-6, f"grad rel {eg:.2e} (<=1e-6), hess rel {eh:.2e} (<=1e-5)")


AVAR_GRID_M = (-1.0, 0.0, 0.5, 1.0, 2.0)
AVAR_GRID_SIGMA = (0.05, 0.1, 0.5, 1.0, 2.0)
AVAR_GRID_EPS = (0.5, 0.75, 0.9)


def check_avar_mc(samples: int = 10**6, seed: int = 3) -> CheckResult:
    """Closed form vs Monte Carlo on the 5x5x3 grid, both modes.

    One standard-normal sample per (epsilon, mode) is mapped affinely to
    every (m, sigma) cell. The tail estimator and its standard error are
    equivariant under d = m + sigma z, so they are evaluated once on z.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    for mode in ("tail", "literal"):
        for eps in AVAR_GRID_EPS:
            z = rng.standard_normal(samples)
            est_z, se_z = mc_avar_samples(z, eps, mode)
            params = RiskParams(epsilon=eps, mode=mode)
            for m in AVAR_GRID_M:
                for s in AVAR_GRID_SIGMA:
                    est, se = m + s * est_z, s * se_z
                    worst = max(worst, abs(avar(DistanceDistribution(m, s), params) - est) / se)
    return CheckResult("AVaR closed form vs Monte Carlo", worst <= 3.0, worst, 3.0, f"max |diff|/SE over 150 cells, {samples} samples")


def check_qp_enumeration(n: int = 200, seed: int = 4) -> CheckResult:
    rng = np.random.default_rng(seed)
    gap = kkt = 0.0
    bad = 0
    for i in range(n):
        prob = random_qp(rng, int(rng.integers(1, 7)), int(rng.integers(0, 9)), psd=(i % 4 == 0))
        sol = solve(prob)
        ref, _ = qp_enumerate(prob)
        if sol.status != "optimal":
            bad += 1
            continue
        gap = max(gap, abs(sol.objective - ref) / max(1.0, abs(ref)))
        kkt = max(kkt, sol.kkt.max())
    ok = bad == 0 and gap <= 1e-7 and kkt <= 1e-8
    return CheckResult("QP vs active-set enumeration", ok, gap, 1e-7, f"{n} problems, non-optimal {bad}, max KKT {kkt:.1e}")


def _random_unicycle_qp(rng, q: int, w: float):
    model = Unicycle2D()
    theta = float(rng.uniform(-math.pi, math.pi))
    state = np.array([0.0, 0.0, theta])
    a1, a2 = rng.uniform(-math.pi, math.pi, 2)
    d_pi = np.array([math.cos(a1), math.sin(a1)])
    eta_perp = model.heading_perp(state)
    d_eta = eta_perp if rng.uniform() < 0.5 else -eta_perp
    info = InfoDirections(d_pi, float(rng.uniform(0, 3)), d_eta, float(rng.uniform(0, 3)), False, False)
    hs_val = float(rng.uniform(0.05, 1.0))
    g = rng.standard_normal(3)
    hs = BarrierEval(hs_val, g / np.linalg.norm(g))
    cfg = ControllerConfig(q=q, w_pi=w, w_eta=w, use_angular=True)
    u_ref = np.array([rng.uniform(-0.5, 1.0), rng.uniform(-2.0, 2.0)])
    perc = PerceptionParams(phi_max=float(rng.uniform(0.2, 1.3)))
    return assemble_qp(state, model, u_ref, hs, info, cfg, SafetyBarrierParams(), perc), cfg


def check_kkt_dual_laws(n: int = 300, seed: int = 5) -> CheckResult:
    """q=1: lambda <= w and lambda = w when the slack is positive; q=2: lambda = 2 w delta."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    active = 0
    for i in range(n):
        q = 1 + (i % 2)
        w = float(rng.uniform(0.2, 3.0))
        asm, cfg = _random_unicycle_qp(rng, q, w)
        sol = solve(asm.problem)
        if sol.status != "optimal":
            continue
        lam = sol.dual_ineq / asm.row_scale
        for tag, slot in (("perception_spatial", 2), ("perception_angular", 3)):
            if tag not in asm.problem.row_tags:
                continue
            lam_k = float(lam[asm.problem.row_tags.index(tag)])
            delta = float(sol.primal[slot])
            if q == 1:
                worst = max(worst, lam_k - w)
                if delta > 1e-9:
                    worst = max(worst, abs(lam_k - w))
            else:
                worst = max(worst, abs(lam_k - 2 * w * delta))
            active += delta > 1e-9
    return CheckResult("KKT conflict dual laws", worst <= 1e-6, max(worst, 0.0), 1e-6, f"{n} conflict QPs, {active} active slacks")


def check_side_indicator(n_theta: int = 360, n_dirs: int = 100, seed: int = 6) -> CheckResult:
    rng = np.random.default_rng(seed)
    ang = rng.uniform(-math.pi, math.pi, n_dirs)
    dirs = np.column_stack([np.cos(ang), np.sin(ang)])
    mismatches = 0
    for k in range(n_theta):
        theta = 2 * math.pi * k / n_theta - math.pi
        eta = np.array([math.cos(theta), math.sin(theta)])
        for n in dirs:
            cross_z = eta[0] * n[1] - eta[1] * n[0]
            s = side_indicator(theta, n)
            if abs(cross_z) < 1e-12 or abs(s) < 1e-12:
                continue
            mismatches += np.sign(s) != np.sign(cross_z)
    return CheckResult("side indicator sign law", mismatches == 0, float(mismatches), 0.0, f"{n_theta}x{n_dirs} grid")


CHECKS: dict[str, Callable[[], CheckResult]] = {
    "softmin": check_softmin_sandwich,
    "barrier_fd": check_barrier_derivatives,
    "rho_fd": check_rho_derivatives,
    "avar_mc": check_avar_mc,
    "qp": check_qp_enumeration,
    "kkt": check_kkt_dual_laws,
    "side": check_side_indicator,
}


def run_all(names=None, corrupt_beta: bool = False) -> list[CheckResult]:
    out = []
    for name, fn in CHECKS.items():
        if names and name not in names:
            continue
        if name == "softmin" and corrupt_beta:
            out.append(fn(beta_sign=-1.0))
        else:
            out.append(fn())
    return out
