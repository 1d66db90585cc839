"""Conflict-aware CBF-QP: hard AVaR safety row plus slack-relaxed perception rows.

Decision vector z = (u, delta_pi, delta_eta). Every row is normalized to
unit coefficient norm before solving; multipliers and residuals reported in
``ControlOutput`` are converted back to the original (unscaled) rows, where
the slack coefficient is exactly one.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from splatcbf.barriers import (
    BarrierEval,
    PerceptionParams,
    SafetyBarrierParams,
    alpha_eta,
    alpha_pi,
    alpha_s,
    safety_barrier,
    side_indicator,
)
from splatcbf.info_gain import CameraModel, InfoDirections, MaskParams, Pose, info_ascent_directions, masked_splats
from splatcbf.models import DoubleIntegrator3D, Unicycle2D, wrap_angle
from splatcbf.qp import QpProblem, QpSolution, solve
from splatcbf.risk import RiskParams
from splatcbf.splat_field import SplatField


@dataclass
class ControllerConfig:
    gamma_s: float = 1.0
    gamma_pi: float = 1.0
    gamma_eta: float = 1.0
    w_pi: float = 1.0
    w_eta: float = 1.0
    q: int = 2
    u_min: Sequence[float] | None = None
    u_max: Sequence[float] | None = None
    delta_max: float = math.inf
    refresh_info_every: int = 5
    kp: float = 1.0
    kd: float = 2.0
    kv: float = 1.0
    kw: float = 2.0
    use_spatial: bool = True
    use_angular: bool = False
    plan_spacing: float = 0.25
    plan_points: int = 16
    qp_tol: float = 1e-8
    qp_max_iter: int = 100
    h_pos: float = 1e-4
    h_ang: float = 1e-4
    g_min: float = 1e-8

    def __post_init__(self) -> None:
        for name in ("gamma_s", "gamma_pi", "gamma_eta", "w_pi", "w_eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.q not in (1, 2):
            raise ValueError("q must be 1 or 2")
        if self.refresh_info_every < 1:
            raise ValueError("refresh_info_every must be >= 1")
        if not self.delta_max >= 0:
            raise ValueError("delta_max must be non-negative")
        if self.u_min is not None and self.u_max is not None and np.any(np.asarray(self.u_min) > np.asarray(self.u_max)):
            raise ValueError("u_min must not exceed u_max")

    def bounds(self, model) -> tuple[np.ndarray, np.ndarray]:
        lo = model.default_u_min if self.u_min is None else np.asarray(self.u_min, dtype=float)
        hi = model.default_u_max if self.u_max is None else np.asarray(self.u_max, dtype=float)
        if lo.shape != (model.input_dim,) or hi.shape != (model.input_dim,):
            raise ValueError(f"input bounds must have {model.input_dim} components for {model.name}")
        return lo.astype(float), hi.astype(float)


@dataclass
class ControlOutput:
    u: np.ndarray
    u_ref: np.ndarray
    delta_pi: float = 0.0
    delta_eta: float = 0.0
    lambda_s: float = 0.0
    lambda_pi: float = 0.0
    lambda_eta: float = 0.0
    h_s: float = math.nan
    h_pi: float = math.nan
    h_eta: float = math.nan
    constraint_residuals: dict = field(default_factory=dict)
    solve_time: float = 0.0
    status: str = "optimal"
    emergency: bool = False
    rho_min: float = math.nan
    info: InfoDirections | None = None
    assembled: "AssembledQp | None" = None
    solution: QpSolution | None = None


@dataclass
class AssembledQp:
    problem: QpProblem
    row_scale: np.ndarray
    # raw (unscaled) rows for reporting
    raw_matrix: np.ndarray
    raw_rhs: np.ndarray
    h_pi: float = math.nan
    h_eta: float = math.nan


def nominal_control(state: np.ndarray, goal: np.ndarray, model, config: ControllerConfig) -> np.ndarray:
    """PD reference input, clipped to the input box."""
    lo, hi = config.bounds(model)
    goal = np.asarray(goal, dtype=float)
    if isinstance(model, DoubleIntegrator3D):
        u = config.kp * (goal[:3] - state[:3]) - config.kd * state[3:6]
        return np.clip(u, lo, hi)
    if isinstance(model, Unicycle2D):
        dx, dy = goal[0] - state[0], goal[1] - state[1]
        dist = math.hypot(dx, dy)
        err = wrap_angle(math.atan2(dy, dx) - state[2]) if dist > 0 else 0.0
        return np.clip(np.array([config.kv * dist, config.kw * err]), lo, hi)
    raise ValueError(f"unsupported model {model!r}")


def assemble_qp(
    state: np.ndarray,
    model,
    u_ref: np.ndarray,
    hs: BarrierEval,
    info: InfoDirections | None,
    config: ControllerConfig,
    safety: SafetyBarrierParams,
    perception: PerceptionParams,
) -> AssembledQp:
    """Build the CBF-QP for one control step.

    ``hs`` must carry the position gradient (and Hessian for the double
    integrator). ``info`` holds the frozen ascent directions; rows whose
    direction is degenerate are omitted and the matching slack is pinned to 0.
    """
    m_u = model.input_dim
    n = m_u + 2
    H = np.zeros((n, n))
    H[:m_u, :m_u] = np.eye(m_u)
    c = np.zeros(n)
    c[:m_u] = -np.asarray(u_ref, dtype=float)
    if config.q == 2:
        H[m_u, m_u] = 2 * config.w_pi
        H[m_u + 1, m_u + 1] = 2 * config.w_eta
    else:
        c[m_u] = config.w_pi
        c[m_u + 1] = config.w_eta
    u_lo, u_hi = config.bounds(model)
    lower = np.concatenate([u_lo, [0.0, 0.0]])
    upper = np.concatenate([u_hi, [config.delta_max, config.delta_max]])

    rows, rhs, tags = [], [], []
    h_pi = h_eta = math.nan

    # safety row: no slack
    a = np.zeros(n)
    if isinstance(model, DoubleIntegrator3D):
        v = state[3:6]
        g, Hh = hs.gradient, hs.hessian
        a[:3] = g
        b = -float(v @ Hh @ v) - config.gamma_s * alpha_s(float(g @ v) + alpha_s(hs.value, safety.a_max), safety.a_max)
    else:
        a[0] = float(hs.gradient[:2] @ model.heading(state))
        b = -config.gamma_s * alpha_s(hs.value, safety.a_max)
    rows.append(a)
    rhs.append(b)
    tags.append("safety")

    use_pi = use_eta = False
    if isinstance(model, Unicycle2D) and info is not None:
        theta = float(state[2])
        eta = model.heading(state)
        if config.use_spatial and not info.pi_degenerate:
            n_dir = info.d_pi
            h_pi = float(eta @ n_dir) - math.cos(perception.phi_max)
            a = np.zeros(n)
            a[1] = side_indicator(theta, n_dir)
            a[m_u] = 1.0
            rows.append(a)
            rhs.append(-config.gamma_pi * alpha_pi(h_pi, info.grad_pi_norm, perception.tau))
            tags.append("perception_spatial")
            use_pi = True
        if config.use_angular and not info.eta_degenerate:
            d_eta = info.d_eta
            h_eta = float(eta @ d_eta)
            a = np.zeros(n)
            a[1] = float(model.heading_perp(state) @ d_eta)
            a[m_u + 1] = 1.0
            rows.append(a)
            rhs.append(-config.gamma_eta * alpha_eta(h_eta, perception.k_eta))
            tags.append("perception_angular")
            use_eta = True
    if not use_pi:
        upper[m_u] = 0.0
    if not use_eta:
        upper[m_u + 1] = 0.0

    A_raw = np.array(rows)
    b_raw = np.array(rhs)
    norms = np.linalg.norm(A_raw, axis=1)
    scale = np.where(norms > 1e-12, norms, 1.0)
    A = A_raw / scale[:, None]
    b = b_raw / scale
    # an all-zero safety row with b <= 0 is vacuous
    keep = ~((norms <= 1e-12) & (b_raw <= 0))
    problem = QpProblem(H, c, A[keep], b[keep], lower, upper, [t for t, k in zip(tags, keep) if k])
    return AssembledQp(problem, scale[keep], A_raw[keep], b_raw[keep], h_pi, h_eta)


def emergency_input(state: np.ndarray, model, config: ControllerConfig, safety: SafetyBarrierParams) -> np.ndarray:
    lo, hi = config.bounds(model)
    if isinstance(model, DoubleIntegrator3D):
        v = state[3:6]
        speed = float(np.linalg.norm(v))
        if speed == 0:
            return np.clip(np.zeros(3), lo, hi)
        return np.clip(-safety.a_max * v / speed, lo, hi)
    return np.clip(np.zeros(model.input_dim), lo, hi)


class ConflictAwareController:
    """Per-robot controller state: frozen ascent directions and a step counter."""

    def __init__(
        self,
        model,
        config: ControllerConfig | None = None,
        risk: RiskParams | None = None,
        safety: SafetyBarrierParams | None = None,
        perception: PerceptionParams | None = None,
        camera: CameraModel | None = None,
        mask: MaskParams | None = None,
        sensing_height: float = 0.0,
    ) -> None:
        self.model = model
        self.config = config or ControllerConfig()
        self.risk = risk or RiskParams()
        self.safety = safety or SafetyBarrierParams()
        self.perception = perception or PerceptionParams()
        self.camera = camera or CameraModel()
        self.mask = mask or MaskParams()
        self.sensing_height = sensing_height
        self.steps = 0
        self.info: InfoDirections | None = None
        self.masked: np.ndarray = np.empty(0, dtype=int)

    def planned_path(self, state: np.ndarray, goal: np.ndarray) -> np.ndarray:
        """Straight-line waypoints from the current position to the goal."""
        p = self.model.position3(state, self.sensing_height)
        g = np.asarray(goal, dtype=float)
        g3 = np.array([g[0], g[1], self.sensing_height]) if len(g) == 2 or self.model.has_heading else g[:3]
        dist = float(np.linalg.norm(g3 - p))
        k = int(min(self.config.plan_points, max(2, math.ceil(dist / self.config.plan_spacing) + 1)))
        t = np.linspace(0.0, 1.0, k)[:, None]
        return p + t * (g3 - p)

    def refresh_info(self, state: np.ndarray, field: SplatField, goal: np.ndarray) -> InfoDirections:
        path = self.planned_path(state, goal)
        self.masked = masked_splats(path, field, self.risk, self.mask)
        pose = Pose(self.model.position3(state, self.sensing_height), self.model.heading(state))
        cfg = self.config
        self.info = info_ascent_directions(pose, field, self.masked, self.camera, cfg.h_pos, cfg.h_ang, cfg.g_min)
        return self.info

    def step(self, state: np.ndarray, field: SplatField, goal: np.ndarray) -> ControlOutput:
        state = np.asarray(state, dtype=float)
        perceive = self.model.has_heading and (self.config.use_spatial or self.config.use_angular)
        if perceive and self.steps % self.config.refresh_info_every == 0:
            self.refresh_info(state, field, goal)
        self.steps += 1
        u_ref = nominal_control(state, goal, self.model, self.config)

        t0 = time.perf_counter()
        pos = self.model.position3(state, self.sensing_height)
        order = "grad" if self.model.has_heading else "hess"
        hs = safety_barrier(field, pos, self.risk, self.safety, order=order)
        asm = assemble_qp(state, self.model, u_ref, hs, self.info if perceive else None, self.config, self.safety, self.perception)
        sol = solve(asm.problem, self.config.qp_tol, self.config.qp_max_iter)
        elapsed = time.perf_counter() - t0

        m_u = self.model.input_dim
        out = ControlOutput(
            u=sol.primal[:m_u].copy(),
            u_ref=u_ref,
            h_s=hs.value,
            h_pi=asm.h_pi,
            h_eta=asm.h_eta,
            solve_time=elapsed,
            status=sol.status,
            rho_min=hs.rho_min,
            info=self.info if perceive else None,
            assembled=asm,
            solution=sol,
        )
        if sol.status != "optimal":
            out.u = emergency_input(state, self.model, self.config, self.safety)
            out.emergency = True
            z = np.concatenate([out.u, [0.0, 0.0]])
        else:
            z = sol.primal
            out.delta_pi = float(max(sol.primal[m_u], 0.0))
            out.delta_eta = float(max(sol.primal[m_u + 1], 0.0))
            duals = sol.dual_ineq / asm.row_scale
            for tag, lam in zip(asm.problem.row_tags, duals):
                setattr(out, {"safety": "lambda_s", "perception_spatial": "lambda_pi", "perception_angular": "lambda_eta"}[tag], float(lam))
        resid = asm.raw_matrix @ z - asm.raw_rhs
        out.constraint_residuals = {tag: float(r) for tag, r in zip(asm.problem.row_tags, resid)}
        return out
