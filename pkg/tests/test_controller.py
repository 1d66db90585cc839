import math

import numpy as np
import pytest

from splatcbf.barriers import BarrierEval, PerceptionParams, SafetyBarrierParams, alpha_s, safety_barrier
from splatcbf.controller import (
    ConflictAwareController,
    ControllerConfig,
    assemble_qp,
    emergency_input,
    nominal_control,
)
from splatcbf.info_gain import InfoDirections
from splatcbf.models import DoubleIntegrator3D, Unicycle2D
from splatcbf.qp import solve
from splatcbf.risk import RiskParams, tail_coefficient
from splatcbf.splat_field import SplatField, generate_field
from splatcbf.validation import check_kkt_dual_laws

DI = DoubleIntegrator3D()
UNI = Unicycle2D()


def _far_field():
    return SplatField([[50, 50, 0], [50, -50, 0]], [[1, 0, 0, 0]] * 2, [[0.05] * 3] * 2, [1, 1])


def test_nominal_at_goal_is_zero():
    cfg = ControllerConfig()
    np.testing.assert_array_equal(nominal_control(np.zeros(6), np.zeros(3), DI, cfg), np.zeros(3))
    np.testing.assert_array_equal(nominal_control(np.zeros(3), np.zeros(2), UNI, cfg), np.zeros(2))


def test_nominal_double_integrator_proportional():
    cfg = ControllerConfig(kp=1.0, kd=0.0)
    np.testing.assert_allclose(nominal_control(np.zeros(6), np.array([1.0, 0, 0]), DI, cfg), [1, 0, 0])


def test_nominal_double_integrator_clipped():
    u = nominal_control(np.zeros(6), np.array([10.0, -10, 0]), DI, ControllerConfig())
    np.testing.assert_allclose(u, [3, -3, 0])


def test_nominal_unicycle_goal_behind_wraps_to_pi():
    cfg = ControllerConfig(kw=0.5)
    u = nominal_control(np.array([0.0, 0.0, 0.0]), np.array([-1.0, 0.0]), UNI, cfg)
    assert u[1] == pytest.approx(0.5 * math.pi)
    assert u[0] == pytest.approx(1.0)


def test_config_validation():
    with pytest.raises(ValueError):
        ControllerConfig(q=3)
    with pytest.raises(ValueError):
        ControllerConfig(w_pi=0)
    with pytest.raises(ValueError):
        ControllerConfig(u_min=[1, 1], u_max=[0, 0])
    with pytest.raises(ValueError):
        ControllerConfig(refresh_info_every=0)
    with pytest.raises(ValueError, match="components"):
        ControllerConfig(u_min=[0, 0]).bounds(DI)


def test_far_from_splats_returns_reference():
    fld = _far_field()
    state = np.array([0, 0, 0, 0.2, 0.1, 0])
    cfg = ControllerConfig()
    u_ref = nominal_control(state, np.array([1.0, 1.0, 0]), DI, cfg)
    hs = safety_barrier(fld, state[:3], RiskParams(), SafetyBarrierParams())
    asm = assemble_qp(state, DI, u_ref, hs, None, cfg, SafetyBarrierParams(), PerceptionParams())
    assert asm.problem.row_tags == ["safety"]
    sol = solve(asm.problem)
    np.testing.assert_array_equal(sol.primal[:3], u_ref)
    assert sol.primal[3] == sol.primal[4] == 0


def test_aligned_heading_needs_no_slack():
    cfg = ControllerConfig(u_min=[-1, -1e6], u_max=[1, 1e6])
    state = np.array([0.0, 0.0, 0.3])
    d_pi = UNI.heading(state)
    info = InfoDirections(d_pi, 1.0, np.array([0.0, 1.0]), 1.0, False, True)
    hs = BarrierEval(1.0, np.array([1.0, 0.0, 0.0]))
    pp = PerceptionParams(phi_max=0.6)
    asm = assemble_qp(state, UNI, np.array([0.5, 0.0]), hs, info, cfg, SafetyBarrierParams(), pp)
    assert asm.h_pi == pytest.approx(1 - math.cos(0.6))
    sol = solve(asm.problem)
    assert sol.status == "optimal"
    assert sol.primal[2] == pytest.approx(0.0, abs=1e-12)


def test_degenerate_direction_drops_row_and_pins_slack():
    cfg = ControllerConfig(use_angular=True)
    info = InfoDirections(np.zeros(2), 0.0, np.array([0.0, 1.0]), 1.0, True, False)
    hs = BarrierEval(1.0, np.array([1.0, 0.0, 0.0]))
    asm = assemble_qp(np.zeros(3), UNI, np.zeros(2), hs, info, cfg, SafetyBarrierParams(), PerceptionParams())
    assert "perception_spatial" not in asm.problem.row_tags
    assert "perception_angular" in asm.problem.row_tags
    assert asm.problem.upper[2] == 0.0
    assert math.isinf(asm.problem.upper[3])


def test_rows_are_unit_norm():
    fld = generate_field("narrow-gap", 0)
    ctrl = ConflictAwareController(UNI, ControllerConfig(use_angular=True))
    out = ctrl.step(np.array([1.5, 0.3, 0.4]), fld, np.array([5.0, 0.0]))
    np.testing.assert_allclose(np.linalg.norm(out.assembled.problem.ineq_matrix, axis=1), 1.0, atol=1e-12)


def test_two_splat_safety_row_matches_hand_computation():
    means = np.array([[1.0, 0.4, 0.1], [0.6, -0.9, -0.2]])
    sig = np.array([0.05, 0.12])
    fld = SplatField(means, [[1, 0, 0, 0]] * 2, [[0.1] * 3] * 2, [1, 1], sigma_iso=sig)
    risk = RiskParams(epsilon=0.8, r_v=0.1)
    sp = SafetyBarrierParams(beta=7.0, a_max=1.3, cull_radius="exact")
    cfg = ControllerConfig(gamma_s=0.7)
    p = np.array([-0.2, 0.1, 0.05])
    v = np.array([0.4, -0.3, 0.2])
    state = np.concatenate([p, v])

    # hand computation of the two-term soft-min
    c = tail_coefficient(0.8, "tail")
    rs = [math.dist(m, p) for m in means]
    us = [(m - p) / r for m, r in zip(means, rs)]
    rho = [r - 0.1 - c * s for r, s in zip(rs, sig)]
    e = [math.exp(-7.0 * x) for x in rho]
    w = [x / sum(e) for x in e]
    h = -math.log(sum(e)) / 7.0
    g = -(w[0] * us[0] + w[1] * us[1])
    gi = [-us[0], -us[1]]
    H = sum(w[k] * (np.eye(3) - np.outer(us[k], us[k])) / rs[k] for k in range(2))
    H = H - 7.0 * sum(w[k] * np.outer(gi[k] - g, gi[k]) for k in range(2))
    rhs = -v @ H @ v - 0.7 * alpha_s(g @ v + alpha_s(h, 1.3), 1.3)

    hs = safety_barrier(fld, p, risk, sp)
    asm = assemble_qp(state, DI, np.zeros(3), hs, None, cfg, sp, PerceptionParams())
    np.testing.assert_allclose(asm.raw_matrix[0, :3], g, atol=1e-9)
    assert asm.raw_matrix[0, 3:] == pytest.approx([0, 0])
    assert asm.raw_rhs[0] == pytest.approx(rhs, abs=1e-9)
    assert hs.value == pytest.approx(h, abs=1e-12)


def test_unicycle_safety_row_acts_on_speed_only():
    hs = BarrierEval(0.4, np.array([0.3, -0.8, 0.0]))
    state = np.array([0.0, 0.0, 1.1])
    asm = assemble_qp(state, UNI, np.zeros(2), hs, None, ControllerConfig(), SafetyBarrierParams(a_max=2.0), PerceptionParams())
    a = asm.raw_matrix[0]
    assert a[0] == pytest.approx(0.3 * math.cos(1.1) - 0.8 * math.sin(1.1))
    assert a[1] == 0.0
    assert asm.raw_rhs[0] == pytest.approx(-alpha_s(0.4, 2.0))


def test_slack_cost_shapes():
    hs = BarrierEval(1.0, np.array([1.0, 0.0, 0.0]))
    info = InfoDirections(np.array([0.0, 1.0]), 1.0, np.array([0.0, 1.0]), 1.0, False, False)
    for q in (1, 2):
        cfg = ControllerConfig(q=q, w_pi=1.5, w_eta=0.5, use_angular=True)
        prob = assemble_qp(np.zeros(3), UNI, np.zeros(2), hs, info, cfg, SafetyBarrierParams(), PerceptionParams()).problem
        if q == 2:
            assert prob.hessian[2, 2] == 3.0 and prob.hessian[3, 3] == 1.0
            assert prob.linear[2] == prob.linear[3] == 0.0
        else:
            assert prob.hessian[2, 2] == prob.hessian[3, 3] == 0.0
            assert (prob.linear[2], prob.linear[3]) == (1.5, 0.5)
        assert prob.lower[2] == prob.lower[3] == 0.0


def test_open_space_step_tracks_reference():
    fld = _far_field()
    for model, state, goal in ((DI, np.zeros(6), np.array([1.0, 0, 0])), (UNI, np.zeros(3), np.array([1.0, 0.0]))):
        ctrl = ConflictAwareController(model)
        out = ctrl.step(state, fld, goal)
        assert out.status == "optimal" and not out.emergency
        assert out.delta_pi == out.delta_eta == 0.0
        np.testing.assert_allclose(out.u, out.u_ref, atol=1e-8)
        assert out.solve_time > 0


def test_infeasible_step_brakes():
    fld = SplatField([[0.3, 0, 0]], [[1, 0, 0, 0]], [[0.05] * 3], [1.0])
    cfg = ControllerConfig(u_min=[-0.01] * 3, u_max=[0.01] * 3)
    state = np.array([0, 0, 0, 3.0, 0, 0])
    ctrl = ConflictAwareController(DI, cfg, safety=SafetyBarrierParams(a_max=0.005))
    out = ctrl.step(state, fld, np.array([2.0, 0, 0]))
    assert out.emergency and out.status == "infeasible"
    np.testing.assert_allclose(out.u, [-0.005, 0, 0])
    uni = ConflictAwareController(UNI, ControllerConfig(u_min=[0.5, -1], u_max=[1, 1]))
    out = uni.step(np.array([0.2, 0.0, 0.0]), fld, np.array([2.0, 0.0]))
    assert out.emergency
    np.testing.assert_allclose(out.u, [0.5, 0.0])


def test_emergency_input_at_rest():
    np.testing.assert_array_equal(emergency_input(np.zeros(6), DI, ControllerConfig(), SafetyBarrierParams()), np.zeros(3))


def test_safety_residual_nonnegative_along_steps():
    fld = generate_field("narrow-gap", 1)
    ctrl = ConflictAwareController(UNI, ControllerConfig(use_angular=True), RiskParams(r_v=0.1))
    rng = np.random.default_rng(0)
    for _ in range(40):
        st = np.array([rng.uniform(0, 2), rng.uniform(-1, 1), rng.uniform(-3, 3)])
        out = ctrl.step(st, fld, np.array([5.0, 0.0]))
        if out.status == "optimal":
            assert out.constraint_residuals["safety"] >= -1e-6


def test_info_refresh_cadence(monkeypatch):
    fld = generate_field("narrow-gap", 2)
    ctrl = ConflictAwareController(UNI, ControllerConfig(refresh_info_every=3))
    calls = []
    orig = ctrl.refresh_info
    monkeypatch.setattr(ctrl, "refresh_info", lambda *a: calls.append(1) or orig(*a))
    for k in range(7):
        ctrl.step(np.array([0.1 * k, 0.0, 0.0]), fld, np.array([5.0, 0.0]))
    assert len(calls) == 3


def test_dual_laws_on_random_conflict_qps():
    res = check_kkt_dual_laws(n=60, seed=11)
    assert res.passed, res.line()
