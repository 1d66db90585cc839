import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from splatcbf.barriers import (
    PerceptionParams,
    SafetyBarrierParams,
    alpha_eta,
    alpha_pi,
    alpha_s,
    contributing_set,
    logsumexp_softmin,
    perception_barrier_angular,
    perception_barrier_spatial,
    safety_barrier,
    side_indicator,
    softmin_bounds_check,
)
from splatcbf.oracles import fd_gradient, fd_jacobian, rel_err
from splatcbf.risk import RiskParams, rho_arrays
from splatcbf.splat_field import SplatField, generate_field

EXACT = SafetyBarrierParams(beta=10.0, cull_radius="exact")


def _pair(sigma=0.0):
    return SplatField([[1, 0, 0], [-1, 0, 0]], [[1, 0, 0, 0]] * 2, [[0.1] * 3] * 2, [1, 1], sigma_iso=[sigma, sigma])


def test_single_splat_is_its_margin():
    fld = generate_field("random-box", 0, count=1)
    p = np.array([6.0, 0.0, 0.0])
    rho, g, _ = rho_arrays(fld, np.array([0]), p, RiskParams(), 1)
    ev = safety_barrier(fld, p, RiskParams(), EXACT)
    assert ev.value == pytest.approx(rho[0], abs=1e-15)
    np.testing.assert_allclose(ev.gradient, g[0], atol=1e-15)


def test_symmetric_pair_value():
    ev = safety_barrier(_pair(), np.zeros(3), RiskParams(), EXACT)
    assert ev.value == pytest.approx(1.0 - math.log(2) / 10, abs=1e-12)
    assert ev.value == pytest.approx(0.93069, abs=1e-5)


def test_bounds_check_examples():
    lo, h, hi, ok = softmin_bounds_check(_pair(), np.zeros(3), RiskParams(), SafetyBarrierParams(beta=1.0, cull_radius="exact"))
    assert (lo, hi, ok) == (pytest.approx(1 - math.log(2)), 1.0, True)
    assert h == pytest.approx(1 - math.log(2), abs=1e-12)
    single = generate_field("random-box", 0, count=1)
    lo, h, hi, ok = softmin_bounds_check(single, np.array([7.0, 0, 0]), RiskParams(), EXACT)
    assert lo == h == hi and ok


def test_bounds_hold_on_random_positions():
    fld = generate_field("random-box", 1, count=100, lo=(-2, -2, -2), hi=(2, 2, 2))
    rng = np.random.default_rng(0)
    for _ in range(1000):
        p = rng.uniform(-3, 3, 3)
        if fld.nearest(p)[0] < 1e-6:
            continue
        assert softmin_bounds_check(fld, p, RiskParams(), SafetyBarrierParams(beta=20.0))[3]


def test_softmin_stable_for_large_beta():
    rho = np.array([1e3, 1e3 + 1.0, -5.0])
    h, w = logsumexp_softmin(rho, 1e4)
    assert math.isfinite(h)
    assert h == pytest.approx(-5.0)
    assert w.sum() == pytest.approx(1.0)


def test_gradient_and_hessian_match_fd_m50():
    fld = generate_field("random-box", 5, count=50, lo=(-2, -2, -2), hi=(2, 2, 2))
    sp = SafetyBarrierParams(beta=20.0, cull_radius="exact")
    rng = np.random.default_rng(4)
    checked = 0
    while checked < 10:
        p = rng.uniform(-2, 2, 3)
        if fld.nearest(p)[0] < 0.2:
            continue
        ev = safety_barrier(fld, p, RiskParams(), sp)
        g_fd = fd_gradient(lambda x: safety_barrier(fld, x, RiskParams(), sp, "value").value, p, 1e-5)
        H_fd = fd_jacobian(lambda x: safety_barrier(fld, x, RiskParams(), sp, "grad").gradient, p, 1e-5)
        assert rel_err(ev.gradient, g_fd) <= 1e-5
        assert rel_err(ev.hessian, H_fd) <= 1e-4
        checked += 1


def test_auto_cull_matches_exact():
    fld = generate_field("random-box", 6, count=2000, lo=(-10, -10, -1), hi=(10, 10, 1))
    rng = np.random.default_rng(1)
    auto = SafetyBarrierParams(beta=10.0)
    for _ in range(50):
        p = rng.uniform(-10, 10, 3)
        a = safety_barrier(fld, p, RiskParams(), auto)
        e = safety_barrier(fld, p, RiskParams(), EXACT)
        assert a.count < len(fld)
        assert a.value == pytest.approx(e.value, abs=1e-10)
        np.testing.assert_allclose(a.gradient, e.gradient, atol=1e-9)
        np.testing.assert_allclose(a.hessian, e.hessian, atol=1e-7)


def test_fixed_cull_radius_keeps_nearest():
    fld = generate_field("random-box", 6, count=20)
    ids = contributing_set(fld, np.array([50.0, 0, 0]), RiskParams(), SafetyBarrierParams(cull_radius=0.5))
    assert len(ids) == 1


def test_safety_params_validation():
    with pytest.raises(ValueError):
        SafetyBarrierParams(beta=0)
    with pytest.raises(ValueError):
        SafetyBarrierParams(cull_radius="none")
    with pytest.raises(ValueError):
        PerceptionParams(phi_max=math.pi / 2)


def test_alpha_s_examples():
    assert alpha_s(0.0, 1.0) == 0.0
    assert alpha_s(0.5, 1.0) == pytest.approx(1.0)
    assert alpha_s(-0.5, 1.0) == pytest.approx(-1.0)


@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0.1, 5))
@settings(max_examples=100, deadline=None)
def test_alpha_s_odd_and_increasing(a, b, a_max):
    assert alpha_s(-a, a_max) == -alpha_s(a, a_max)
    if a < b:
        assert alpha_s(a, a_max) <= alpha_s(b, a_max)


def test_alpha_pi_examples():
    assert alpha_pi(1.0, 0.0, 1.0) == pytest.approx(2.0)
    assert alpha_pi(1.0, 1e6, 1.0) == pytest.approx(1.0)
    assert alpha_pi(1.0, math.log(3), 1.0) == pytest.approx(4 / 3)
    with pytest.raises(ValueError):
        alpha_pi(1.0, -1.0, 1.0)


def test_alpha_eta_linear():
    assert alpha_eta(0.3, 2.0) == pytest.approx(0.6)


def test_spatial_perception_barrier_examples():
    assert perception_barrier_spatial([1, 0], [1, 0], math.pi / 3).value == pytest.approx(0.5)
    assert perception_barrier_spatial([0, 1], [1, 0], math.pi / 3).value == pytest.approx(-0.5)
    h = [math.cos(math.pi / 4), math.sin(math.pi / 4)]
    assert perception_barrier_spatial(h, [1, 0], math.pi / 4).value == pytest.approx(0.0, abs=1e-15)


def test_angular_perception_barrier_examples():
    assert perception_barrier_angular([1, 0], [1, 0]).value == pytest.approx(1.0)
    assert perception_barrier_angular([-1, 0], [1, 0]).value == pytest.approx(-1.0)
    assert perception_barrier_angular([0, 1], [1, 0]).value == pytest.approx(0.0)


def test_perception_barriers_reject_non_unit():
    with pytest.raises(ValueError, match="unit"):
        perception_barrier_spatial([1, 1], [1, 0], 0.5)
    with pytest.raises(ValueError, match="unit"):
        perception_barrier_angular([1, 0], [0.5, 0])


def test_side_indicator_left_is_positive():
    assert side_indicator(0.0, np.array([0.0, 1.0])) == pytest.approx(1.0)
    assert side_indicator(0.0, np.array([0.0, -1.0])) == pytest.approx(-1.0)
    assert side_indicator(math.pi / 2, np.array([1.0, 0.0])) == pytest.approx(-1.0)


def test_side_indicator_is_heading_rotation_derivative():
    rng = np.random.default_rng(2)
    for _ in range(50):
        theta = rng.uniform(-math.pi, math.pi)
        a = rng.uniform(-math.pi, math.pi)
        n = np.array([math.cos(a), math.sin(a)])
        f = lambda t: math.cos(t) * n[0] + math.sin(t) * n[1]
        fd = (f(theta + 1e-6) - f(theta - 1e-6)) / 2e-6
        assert side_indicator(theta, n) == pytest.approx(fd, abs=1e-8)
