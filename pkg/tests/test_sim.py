import json
import math

import numpy as np
import pytest

import splatcbf.controller as controller_mod
from splatcbf.barriers import SafetyBarrierParams
from splatcbf.controller import ControllerConfig
from splatcbf.models import DoubleIntegrator3D, Unicycle2D
from splatcbf.risk import RiskParams
from splatcbf.sim import (
    GROUP_COLUMNS,
    Scenario,
    TrajectoryRecord,
    aggregate,
    batch,
    format_table,
    integrate,
    run,
    write_table_csv,
)
from splatcbf.splat_field import SplatField, generate_field

DI = DoubleIntegrator3D()
UNI = Unicycle2D()


def _far_field():
    return SplatField([[40, 40, 0], [40, -40, 0]], [[1, 0, 0, 0]] * 2, [[0.05] * 3] * 2, [1, 1])


def test_double_integrator_coasts_exactly():
    x = integrate(np.array([0, 0, 0, 1.0, 0, 0]), np.zeros(3), 1.0, DI)
    np.testing.assert_array_equal(x, [1, 0, 0, 1, 0, 0])


def test_double_integrator_constant_accel_exact():
    x = integrate(np.zeros(6), np.array([2.0, 0, 0]), 0.5, DI)
    np.testing.assert_allclose(x, [0.25, 0, 0, 1.0, 0, 0], atol=1e-15)


def test_unicycle_straight():
    x = integrate(np.zeros(3), np.array([1.0, 0.0]), 0.5, UNI)
    np.testing.assert_allclose(x, [0.5, 0.0, 0.0], atol=1e-15)


def test_unicycle_circle_closes():
    # step count 2 pi / 0.01 rounded, with dt adjusted so the loop closes exactly
    n = round(2 * math.pi / 0.01)
    dt = 2 * math.pi / n
    x = np.zeros(3)
    for _ in range(n):
        x = integrate(x, np.array([1.0, 1.0]), dt, UNI)
    assert np.linalg.norm(x[:2]) <= 1e-6
    assert abs(x[2]) <= 1e-6


def test_rk4_fourth_order():
    def endpoint(dt):
        x = np.zeros(3)
        for _ in range(round(1.0 / dt)):
            x = integrate(x, np.array([1.0, 1.0]), dt, UNI)
        return x

    exact = np.array([math.sin(1.0), 1 - math.cos(1.0), 1.0])
    e1 = np.linalg.norm(endpoint(0.1) - exact)
    e2 = np.linalg.norm(endpoint(0.05) - exact)
    assert math.log2(e1 / e2) == pytest.approx(4.0, abs=0.3)


def test_integrate_rejects_bad_dt():
    with pytest.raises(ValueError):
        integrate(np.zeros(3), np.zeros(2), 0.0, UNI)


def test_empty_threat_scene_reaches_goal():
    for model, start in (("double_integrator_3d", [0, 0, 0]), ("unicycle_2d", [0, 0])):
        sc = Scenario(field=_far_field(), model=model, start=start, goal=[2.0, 1.0, 0.0], dt=0.05, max_steps=400)
        rec, m = run(sc)
        assert m.reached_goal and not m.collided
        assert m.max_delta_pi == 0 and m.max_delta_eta == 0
        assert m.emergency_steps == 0


def test_start_inside_obstacle_flags_collision():
    fld = SplatField([[0.05, 0, 0]], [[1, 0, 0, 0]], [[0.05] * 3], [1.0])
    sc = Scenario(field=fld, start=[0, 0, 0], goal=[2, 0, 0], risk=RiskParams(r_v=0.2), dt=0.05, max_steps=20)
    rec, m = run(sc)
    assert m.collided
    assert rec.h_s[0] < 0
    assert m.min_h_s < 0


def test_trace_is_deterministic_and_excludes_timing(tmp_path):
    sc = Scenario(field={"kind": "narrow-gap"}, model="unicycle_2d", seed=3, dt=0.05, max_steps=60, update_map_every=2)
    paths = []
    for k in range(2):
        rec, _ = run(sc)
        p = tmp_path / f"t{k}.jsonl"
        rec.write_jsonl(p, {"seed": 3})
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    lines = paths[0].read_text().splitlines()
    head = json.loads(lines[0])
    assert head["schema"] == "trace/1" and head["model"] == "unicycle_2d"
    row = json.loads(lines[1])
    assert "solve_time" not in row
    assert set(row) >= {"k", "t", "state", "u", "u_ref", "h_s", "delta_pi", "lambda_pi", "min_euclid_dist", "status"}
    assert len(lines) - 1 <= 60


def test_timing_csv(tmp_path):
    rec, _ = run(Scenario(field=_far_field(), goal=[1, 0, 0], dt=0.05, max_steps=5))
    rec.write_timing(tmp_path / "t.csv")
    rows = (tmp_path / "t.csv").read_text().splitlines()
    assert rows[0] == "k,solve_time_s" and len(rows) == 6


def test_goal_comes_from_field_meta():
    sc = Scenario(field={"kind": "corridor"})
    start, goal = sc.resolve_endpoints(sc.build_field())
    np.testing.assert_array_equal(goal, [4.0, 4.0, 0.0])
    with pytest.raises(ValueError, match="goal"):
        Scenario(field={"kind": "ring"}).resolve_endpoints(generate_field("ring", 0))


def test_start_jitter_seeded():
    a = Scenario(field={"kind": "corridor"}, start_jitter=0.05, seed=4)
    b = Scenario(field={"kind": "corridor"}, start_jitter=0.05, seed=5)
    fa, fb = a.build_field(), b.build_field()
    sa, sb = a.resolve_endpoints(fa)[0], b.resolve_endpoints(fb)[0]
    assert not np.array_equal(sa, sb)
    np.testing.assert_array_equal(sa, a.resolve_endpoints(fa)[0])
    assert sa[2] == 0.0


def test_scenario_validation():
    with pytest.raises(ValueError):
        Scenario(dt=0)
    with pytest.raises(ValueError):
        Scenario(model="quadrotor")
    with pytest.raises(ValueError):
        Scenario(max_steps=0)


def test_partial_trace_attached_on_error(monkeypatch):
    calls = {"n": 0}
    orig = controller_mod.ConflictAwareController.step

    def flaky(self, *a):
        calls["n"] += 1
        if calls["n"] == 4:
            raise RuntimeError("boom")
        return orig(self, *a)

    monkeypatch.setattr(controller_mod.ConflictAwareController, "step", flaky)
    with pytest.raises(RuntimeError) as info:
        run(Scenario(field=_far_field(), goal=[3, 0, 0], dt=0.05, max_steps=50))
    assert isinstance(info.value.partial_trace, TrajectoryRecord)
    assert len(info.value.partial_trace) == 3


def test_metrics_definitions():
    sc = Scenario(field={"kind": "corridor"}, dt=0.05, max_steps=80, risk=RiskParams(r_v=0.15), safety=SafetyBarrierParams(beta=10.0, a_max=1.5))
    rec, m = run(sc)
    d = np.asarray(rec.min_euclid_dist)
    assert m.min_dist == pytest.approx(d.min())
    assert m.min_clearance == pytest.approx(d.min() - 0.15)
    dev = np.linalg.norm(np.asarray(rec.u) - np.asarray(rec.u_ref), axis=1).mean()
    assert m.mean_control_dev == pytest.approx(dev)
    assert m.steps == len(rec)
    assert not m.reached_goal


def test_single_safe_run_gives_unit_safe_rate():
    metrics, rows = batch([Scenario(field=_far_field(), goal=[1, 0, 0], dt=0.05, max_steps=100)], jobs=1)
    assert rows[0]["safe_rate"] == 1.0 and rows[0]["runs"] == 1


def test_batch_repeatable_and_order_independent_of_jobs():
    scs = [
        Scenario(field={"kind": "narrow-gap"}, model="unicycle_2d", seed=s, dt=0.05, max_steps=40, group=g)
        for g in ("a", "b")
        for s in range(3)
    ]
    m1, r1 = batch(scs, jobs=1)
    m2, r2 = batch(scs, jobs=1)
    m3, r3 = batch(scs, jobs=2)
    strip = lambda rows: [{k: v for k, v in r.items() if k != "median_solve_time_ms"} for r in rows]
    assert strip(r1) == strip(r2) == strip(r3)
    assert [m.seed for m in m3] == [m.seed for m in m1]
    assert [r["group"] for r in r1] == ["a", "b"]


def test_batch_requires_scenarios():
    with pytest.raises(ValueError):
        batch([])


def test_table_outputs(tmp_path):
    metrics, rows = batch([Scenario(field=_far_field(), goal=[1, 0, 0], dt=0.05, max_steps=50)], jobs=1)
    write_table_csv(rows, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0].split(",") == list(GROUP_COLUMNS)
    assert "default" in format_table(rows)
    assert aggregate(metrics) == rows
