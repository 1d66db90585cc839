"""Closed-loop simulation, batch evaluation and run metrics."""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from splatcbf.barriers import PerceptionParams, SafetyBarrierParams
from splatcbf.controller import ConflictAwareController, ControllerConfig
from splatcbf.info_gain import CameraModel, MaskParams, Pose, update_map
from splatcbf.models import get_model
from splatcbf.risk import RiskParams
from splatcbf.splat_field import SplatField, generate_field, load_field

TRACE_SCHEMA = "trace/1"
CONTROL_DEV_DEFINITION = "mean over steps of ||u - u_ref||_2"


def integrate(state: np.ndarray, u: np.ndarray, dt: float, model) -> np.ndarray:
    """One RK4 step with u held constant over [t, t + dt]."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = model.f(x, u)
    k2 = model.f(x + 0.5 * dt * k1, u)
    k3 = model.f(x + 0.5 * dt * k2, u)
    k4 = model.f(x + dt * k3, u)
    return model.normalize(x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4))


@dataclass
class Scenario:
    field: Any = dc_field(default_factory=lambda: {"kind": "corridor"})
    model: str = "double_integrator_3d"
    start: Sequence[float] | None = None
    start_theta: float = 0.0
    start_velocity: Sequence[float] | None = None
    start_jitter: float = 0.0
    goal: Sequence[float] | None = None
    dt: float = 0.02
    max_steps: int = 3000
    goal_tol: float = 0.1
    sensing_height: float = 0.0
    min_opacity: float | None = None
    update_map_every: int = 0
    seed: int = 0
    group: str = "default"
    controller: ControllerConfig = dc_field(default_factory=ControllerConfig)
    risk: RiskParams = dc_field(default_factory=RiskParams)
    safety: SafetyBarrierParams = dc_field(default_factory=SafetyBarrierParams)
    perception: PerceptionParams = dc_field(default_factory=PerceptionParams)
    camera: CameraModel = dc_field(default_factory=CameraModel)
    mask: MaskParams = dc_field(default_factory=MaskParams)

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.goal_tol > 0:
            raise ValueError("goal_tol must be positive")
        get_model(self.model)

    def build_field(self) -> SplatField:
        if isinstance(self.field, SplatField):
            fld = self.field.copy()
        elif isinstance(self.field, (str, Path)):
            fld = load_field(self.field)
        else:
            spec = dict(self.field)
            kind = spec.pop("kind")
            fld = generate_field(kind, self.seed, **spec)
        if self.min_opacity is not None:
            fld = fld.filtered(self.min_opacity)
        return fld

    def resolve_endpoints(self, fld: SplatField) -> tuple[np.ndarray, np.ndarray]:
        start = self.start if self.start is not None else fld.meta.get("start", (0.0, 0.0, 0.0))
        goal = self.goal if self.goal is not None else fld.meta.get("goal")
        if goal is None:
            raise ValueError("scenario has no goal and the field declares none")
        start = np.array(list(start) + [0.0] * (3 - len(start)), dtype=float)
        goal = np.array(list(goal) + [0.0] * (3 - len(goal)), dtype=float)
        if self.start_jitter > 0:
            rng = np.random.default_rng([self.seed, 1])
            offs = rng.normal(0.0, self.start_jitter, 3)
            offs[2] = 0.0
            start = start + offs
        return start, goal


@dataclass
class TrajectoryRecord:
    model: str
    dt: float
    t: list = dc_field(default_factory=list)
    state: list = dc_field(default_factory=list)
    u_ref: list = dc_field(default_factory=list)
    u: list = dc_field(default_factory=list)
    h_s: list = dc_field(default_factory=list)
    h_pi: list = dc_field(default_factory=list)
    h_eta: list = dc_field(default_factory=list)
    delta_pi: list = dc_field(default_factory=list)
    delta_eta: list = dc_field(default_factory=list)
    lambda_s: list = dc_field(default_factory=list)
    lambda_pi: list = dc_field(default_factory=list)
    lambda_eta: list = dc_field(default_factory=list)
    min_euclid_dist: list = dc_field(default_factory=list)
    solve_time: list = dc_field(default_factory=list)
    status: list = dc_field(default_factory=list)
    safety_residual: list = dc_field(default_factory=list)

    def __len__(self) -> int:
        return len(self.t)

    def array(self, key: str) -> np.ndarray:
        return np.asarray(getattr(self, key), dtype=float)

    def rows(self, timing: bool = False):
        """Per-step dictionaries in trace order. Timing is excluded by default."""
        for k in range(len(self.t)):
            row = {
                "k": k,
                "t": self.t[k],
                "state": self.state[k],
                "u_ref": self.u_ref[k],
                "u": self.u[k],
                "h_s": self.h_s[k],
                "h_pi": _num(self.h_pi[k]),
                "h_eta": _num(self.h_eta[k]),
                "delta_pi": self.delta_pi[k],
                "delta_eta": self.delta_eta[k],
                "lambda_s": self.lambda_s[k],
                "lambda_pi": self.lambda_pi[k],
                "lambda_eta": self.lambda_eta[k],
                "min_euclid_dist": self.min_euclid_dist[k],
                "safety_residual": self.safety_residual[k],
                "status": self.status[k],
            }
            if timing:
                row["solve_time"] = self.solve_time[k]
            yield row

    def write_jsonl(self, path: str | Path, meta: dict | None = None) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(json.dumps({"schema": TRACE_SCHEMA, "model": self.model, "dt": self.dt, "meta": meta or {}}) + "\n")
            for row in self.rows():
                fh.write(json.dumps(row) + "\n")

    def write_timing(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("k,solve_time_s\n")
            for k, s in enumerate(self.solve_time):
                fh.write(f"{k},{s:.9f}\n")


def _num(x: float):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


@dataclass
class RunMetrics:
    reached_goal: bool
    collided: bool
    min_dist: float
    min_clearance: float
    mean_control_dev: float
    median_solve_time: float
    steps: int
    min_h_s: float
    max_delta_pi: float
    max_delta_eta: float
    emergency_steps: int
    seed: int = 0
    group: str = "default"
    control_dev_definition: str = CONTROL_DEV_DEFINITION

    def to_dict(self) -> dict:
        return asdict(self)


def _clearance(fld: SplatField, p: np.ndarray) -> float:
    return fld.nearest(p)[0]


def run(scenario: Scenario) -> tuple[TrajectoryRecord, RunMetrics]:
    """Simulate one scenario until the goal is within goal_tol or max_steps elapse.

    Errors raised mid-run are re-raised with the partial trace attached as
    ``exc.partial_trace``.
    """
    model = get_model(scenario.model)
    fld = scenario.build_field()
    start, goal = scenario.resolve_endpoints(fld)
    if model.has_heading:
        theta = scenario.start_theta
        state = model.make_state(start, theta=theta)
    else:
        state = model.make_state(start, scenario.start_velocity)
    ctrl = ConflictAwareController(
        model,
        scenario.controller,
        scenario.risk,
        scenario.safety,
        scenario.perception,
        scenario.camera,
        scenario.mask,
        scenario.sensing_height,
    )
    rec = TrajectoryRecord(model.name, scenario.dt)
    goal_xy = goal[:2] if model.has_heading else goal
    reached = False
    try:
        for k in range(scenario.max_steps):
            p = model.position3(state, scenario.sensing_height)
            here = p[:2] if model.has_heading else p
            if np.linalg.norm(goal_xy - here) <= scenario.goal_tol:
                reached = True
                break
            out = ctrl.step(state, fld, goal_xy)
            rec.t.append(k * scenario.dt)
            rec.state.append(state.tolist())
            rec.u_ref.append(out.u_ref.tolist())
            rec.u.append(out.u.tolist())
            rec.h_s.append(out.h_s)
            rec.h_pi.append(out.h_pi)
            rec.h_eta.append(out.h_eta)
            rec.delta_pi.append(out.delta_pi)
            rec.delta_eta.append(out.delta_eta)
            rec.lambda_s.append(out.lambda_s)
            rec.lambda_pi.append(out.lambda_pi)
            rec.lambda_eta.append(out.lambda_eta)
            rec.min_euclid_dist.append(_clearance(fld, p))
            rec.solve_time.append(out.solve_time)
            rec.status.append("emergency" if out.emergency else out.status)
            rec.safety_residual.append(out.constraint_residuals.get("safety", math.inf))
            state = integrate(state, out.u, scenario.dt, model)
            if scenario.update_map_every and (k + 1) % scenario.update_map_every == 0:
                update_map(fld, Pose(model.position3(state, scenario.sensing_height), _heading(model, state)), scenario.camera)
        else:
            p = model.position3(state, scenario.sensing_height)
            here = p[:2] if model.has_heading else p
            reached = bool(np.linalg.norm(goal_xy - here) <= scenario.goal_tol)
    except Exception as exc:
        exc.partial_trace = rec
        raise
    return rec, compute_metrics(rec, scenario, reached)


def _heading(model, state):
    if model.has_heading:
        return model.heading(state)
    v = model.velocity(state)
    n = np.linalg.norm(v)
    return v / n if n > 0 else np.array([1.0, 0.0, 0.0])


def compute_metrics(rec: TrajectoryRecord, scenario: Scenario, reached: bool) -> RunMetrics:
    if len(rec) == 0:
        nan = math.nan
        return RunMetrics(reached, False, nan, nan, 0.0, 0.0, 0, nan, 0.0, 0.0, 0, scenario.seed, scenario.group)
    d = rec.array("min_euclid_dist")
    r_v = scenario.risk.r_v
    dev = np.linalg.norm(rec.array("u") - rec.array("u_ref"), axis=1)
    return RunMetrics(
        reached_goal=bool(reached),
        collided=bool(np.any(d - r_v < 0)),
        min_dist=float(d.min()),
        min_clearance=float(d.min() - r_v),
        mean_control_dev=float(dev.mean()),
        median_solve_time=float(np.median(rec.solve_time)),
        steps=len(rec),
        min_h_s=float(np.min(rec.h_s)),
        max_delta_pi=float(np.max(rec.delta_pi)),
        max_delta_eta=float(np.max(rec.delta_eta)),
        emergency_steps=int(sum(s == "emergency" for s in rec.status)),
        seed=scenario.seed,
        group=scenario.group,
    )


def _run_metrics(scenario: Scenario) -> RunMetrics:
    return run(scenario)[1]


GROUP_COLUMNS = ("group", "runs", "safe_rate", "reached_rate", "mean_min_dist", "mean_min_h_s", "median_solve_time_ms", "mean_control_dev")


def aggregate(metrics: Sequence[RunMetrics]) -> list[dict]:
    """Per-group table rows, groups in first-appearance order."""
    groups: dict[str, list[RunMetrics]] = {}
    for m in metrics:
        groups.setdefault(m.group, []).append(m)
    rows = []
    for name, ms in groups.items():
        rows.append(
            {
                "group": name,
                "runs": len(ms),
                "safe_rate": float(np.mean([not m.collided for m in ms])),
                "reached_rate": float(np.mean([m.reached_goal for m in ms])),
                "mean_min_dist": float(np.mean([m.min_dist for m in ms])),
                "mean_min_h_s": float(np.mean([m.min_h_s for m in ms])),
                "median_solve_time_ms": 1e3 * float(np.median([m.median_solve_time for m in ms])),
                "mean_control_dev": float(np.mean([m.mean_control_dev for m in ms])),
            }
        )
    return rows


def batch(scenarios: Sequence[Scenario], jobs: int | None = None) -> tuple[list[RunMetrics], list[dict]]:
    """Run scenarios (in parallel when jobs > 1) and aggregate per group.

    Output order follows input order regardless of the job count.
    """
    if not scenarios:
        raise ValueError("batch needs at least one scenario")
    jobs = jobs or os.cpu_count() or 1
    if jobs <= 1 or len(scenarios) == 1:
        metrics = [_run_metrics(s) for s in scenarios]
    else:
        with ProcessPoolExecutor(max_workers=min(jobs, len(scenarios))) as pool:
            metrics = list(pool.map(_run_metrics, scenarios))
    return metrics, aggregate(metrics)


def format_table(rows: Sequence[dict]) -> str:
    """Fixed-width human-readable summary of aggregate rows."""
    head = f"{'group':<20} {'runs':>5} {'safe':>6} {'reach':>6} {'min_dist':>9} {'min_h_s':>9} {'t_ms':>7} {'ctrl_dev':>9}"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['group']:<20} {r['runs']:>5d} {r['safe_rate']:>6.3f} {r['reached_rate']:>6.3f} "
            f"{r['mean_min_dist']:>9.4f} {r['mean_min_h_s']:>9.4f} {r['median_solve_time_ms']:>7.3f} {r['mean_control_dev']:>9.4f}"
        )
    return "\n".join(lines)


def write_table_csv(rows: Sequence[dict], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(GROUP_COLUMNS) + "\n")
        for r in rows:
            fh.write(",".join(_csv(r[c]) for c in GROUP_COLUMNS) + "\n")


def _csv(v) -> str:
    return f"{v:.9g}" if isinstance(v, float) else str(v)
