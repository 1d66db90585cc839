"""Safety and perception barrier functions and their class-K functions."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from splatcbf.risk import RiskParams, rho_arrays, sigma_bound, tail_coefficient
from splatcbf.splat_field import SplatField, neighbors_within

UNIT_TOL = 1e-9


@dataclass(frozen=True)
class SafetyBarrierParams:
    """Soft-min safety barrier settings.

    ``cull_radius`` is a radius in metres, "exact" (all splats contribute) or
    "auto", which picks a per-query radius so that the dropped softmax weight
    is at most ``cull_tol`` times the retained weight.
    """

    beta: float = 20.0
    a_max: float = 1.0
    gamma_s: float = 1.0
    cull_radius: Union[float, str] = "auto"
    cull_tol: float = 1e-12

    def __post_init__(self) -> None:
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.a_max > 0:
            raise ValueError("a_max must be positive")
        if not self.gamma_s > 0:
            raise ValueError("gamma_s must be positive")
        if isinstance(self.cull_radius, str):
            if self.cull_radius not in ("exact", "auto"):
                raise ValueError("cull_radius must be a number, 'exact' or 'auto'")
        elif not self.cull_radius > 0:
            raise ValueError("cull_radius must be positive")
        if not 0 < self.cull_tol < 1:
            raise ValueError("cull_tol must lie in (0, 1)")


@dataclass(frozen=True)
class PerceptionParams:
    phi_max: float = math.pi / 4
    tau: float = 1.0
    gamma_pi: float = 1.0
    k_eta: float = 1.0
    gamma_eta: float = 1.0

    def __post_init__(self) -> None:
        if not 0 < self.phi_max < math.pi / 2:
            raise ValueError("phi_max must lie in (0, pi/2)")
        for name in ("tau", "gamma_pi", "k_eta", "gamma_eta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass
class BarrierEval:
    value: float
    gradient: np.ndarray
    hessian: np.ndarray | None = None
    # soft-min bookkeeping, only filled by safety_barrier
    rho_min: float = math.nan
    count: int = 0


def logsumexp_softmin(rho: np.ndarray, beta: float) -> tuple[float, np.ndarray]:
    """-(1/beta) log sum exp(-beta rho) and the softmax weights, max-shifted."""
    rmin = float(np.min(rho))
    e = np.exp(-beta * (rho - rmin))
    s = float(np.sum(e))
    return rmin - math.log(s) / beta, e / s


def contributing_set(field: SplatField, position: np.ndarray, risk: RiskParams, sp: SafetyBarrierParams) -> np.ndarray:
    """Ascending splat ids entering the soft-min at ``position``."""
    m = len(field)
    if m == 0:
        raise ValueError("field is empty")
    if sp.cull_radius == "exact":
        return np.arange(m)
    if sp.cull_radius == "auto":
        _, i0 = field.nearest(position)
        rho0 = rho_arrays(field, np.array([i0]), position, risk)[0][0]
        c = tail_coefficient(risk.epsilon, risk.mode)
        radius = rho0 + risk.r_v + c * sigma_bound(field, risk) + (math.log(m) - math.log(sp.cull_tol)) / sp.beta
    else:
        radius = float(sp.cull_radius)
    ids = neighbors_within(field, position, max(radius, 0.0))
    if len(ids) == 0:
        ids = np.array([field.nearest(position)[1]])
    return ids


def safety_barrier(
    field: SplatField,
    position: np.ndarray,
    risk: RiskParams,
    sp: SafetyBarrierParams,
    order: str = "hess",
) -> BarrierEval:
    """Soft-min of the per-splat AVaR margins with gradient and Hessian.

    ``order`` is "value", "grad" or "hess".
    """
    position = np.asarray(position, dtype=float).reshape(3)
    ids = contributing_set(field, position, risk, sp)
    k = {"value": 0, "grad": 1, "hess": 2}[order]
    rho, g, H = rho_arrays(field, ids, position, risk, k)
    h, w = logsumexp_softmin(rho, sp.beta)
    out = BarrierEval(h, np.zeros(3), None, float(rho.min()), len(ids))
    if k >= 1:
        out.gradient = w @ g
    if k >= 2:
        dev = g - out.gradient
        H_s = np.einsum("k,kij->ij", w, H) - sp.beta * np.einsum("k,ki,kj->ij", w, dev, g)
        out.hessian = 0.5 * (H_s + H_s.T)
    return out


def softmin_bounds_check(
    field: SplatField, position: np.ndarray, risk: RiskParams, sp: SafetyBarrierParams
) -> tuple[float, float, float, bool]:
    """(min rho - ln M / beta, h_s, min rho, sandwich holds) with M the contributing count."""
    ev = safety_barrier(field, position, risk, sp, order="value")
    upper = ev.rho_min
    lower = upper - math.log(ev.count) / sp.beta
    ok = lower - 1e-9 <= ev.value <= upper + 1e-9
    return lower, ev.value, upper, ok


def alpha_s(h: float, a_max: float) -> float:
    """Braking class-K function sqrt(2 a_max h), extended as an odd function for h < 0."""
    return math.copysign(math.sqrt(2.0 * a_max * abs(h)), h)


def alpha_pi(h: float, grad_info_norm: float, tau: float) -> float:
    if grad_info_norm < 0:
        raise ValueError("grad_info_norm must be non-negative")
    return (1.0 + math.exp(-tau * grad_info_norm)) * h


def alpha_eta(h: float, k_eta: float) -> float:
    return k_eta * h


def _check_unit(v: np.ndarray, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if abs(float(np.linalg.norm(v)) - 1.0) > UNIT_TOL:
        raise ValueError(f"{name} must be a unit vector")
    return v


def perception_barrier_spatial(heading: np.ndarray, d_pi: np.ndarray, phi_max: float) -> BarrierEval:
    """Heading-cone barrier <heading, d_pi> - cos(phi_max); gradient w.r.t. heading."""
    heading = _check_unit(heading, "heading")
    d_pi = _check_unit(d_pi, "d_pi")
    return BarrierEval(float(heading @ d_pi) - math.cos(phi_max), d_pi.copy())


def perception_barrier_angular(heading: np.ndarray, d_eta: np.ndarray) -> BarrierEval:
    heading = _check_unit(heading, "heading")
    d_eta = _check_unit(d_eta, "d_eta")
    return BarrierEval(float(heading @ d_eta), d_eta.copy())


def side_indicator(theta: float, n: np.ndarray) -> float:
    """(J eta)^T n = n2 cos(theta) - n1 sin(theta); positive when n lies left of the heading."""
    return float(n[1] * math.cos(theta) - n[0] * math.sin(theta))
