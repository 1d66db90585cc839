import numpy as np
import pytest

from splatcbf import validation as v
from splatcbf.oracles import mc_avar_samples


@pytest.mark.parametrize(
    "fn, kwargs",
    [
        (v.check_softmin_sandwich, {"n": 100}),
        (v.check_barrier_derivatives, {"n": 10}),
        (v.check_rho_derivatives, {"n": 20}),
        (v.check_avar_mc, {"samples": 10**5}),
        (v.check_qp_enumeration, {"n": 20}),
        (v.check_kkt_dual_laws, {"n": 40}),
        (v.check_side_indicator, {"n_theta": 36, "n_dirs": 20}),
    ],
)
def test_checks_pass_on_reduced_sizes(fn, kwargs):
    res = fn(**kwargs)
    assert res.passed, res.line()
    assert res.residual <= res.threshold


def test_negative_control_fails():
    res = v.check_softmin_sandwich(n=50, beta_sign=-1.0)
    assert not res.passed
    assert res.residual > 1.0


def test_line_format():
    line = v.CheckResult("x", True, 1.5e-12, 1e-9, "d").line()
    assert line == "PASS | x | residual=1.500e-12 | threshold=1.0e-09 | d"


def test_run_all_filters_by_name():
    out = v.run_all(["side"])
    assert [r.name for r in out] == ["side indicator sign law"]


def test_mc_estimator_affine_equivariance():
    z = np.random.default_rng(0).standard_normal(10**5)
    for mode in ("tail", "literal"):
        est_z, se_z = mc_avar_samples(z, 0.75, mode)
        for m, s in ((-1.0, 0.05), (0.5, 1.0), (2.0, 2.0)):
            est, se = mc_avar_samples(m + s * z, 0.75, mode)
            assert est == pytest.approx(m + s * est_z, rel=1e-12, abs=1e-12)
            assert se == pytest.approx(s * se_z, rel=1e-9)
