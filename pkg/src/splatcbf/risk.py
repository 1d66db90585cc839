"""AVaR collision risk of the signed distance to uncertain splats."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from splatcbf.splat_field import DegenerateGeometryError, Splat, SplatField, covariance_of, neighbors_within

_SQRT_2PI = math.sqrt(2.0 * math.pi)
_DEGENERATE_TOL = 1e-9


@dataclass(frozen=True)
class DistanceDistribution:
    mean_dist: float
    std_dist: float

    def __post_init__(self) -> None:
        if self.std_dist < 0:
            raise ValueError("std_dist must be non-negative")


@dataclass(frozen=True)
class RiskParams:
    """AVaR configuration.

    mode "tail" averages the lower (1 - epsilon) tail, so a larger epsilon is
    more conservative; mode "literal" averages below the epsilon-quantile.
    ``h_fd`` is the finite-difference step (m) for directional-mode Hessians.
    """

    epsilon: float = 0.75
    mode: str = "tail"
    r_v: float = 0.0
    sigma_mode: str = "isotropic"
    h_fd: float = 1e-5

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.r_v < 0:
            raise ValueError("r_v must be non-negative")
        if self.mode not in ("tail", "literal"):
            raise ValueError(f"unknown AVaR mode '{self.mode}'")
        if self.sigma_mode not in ("isotropic", "directional"):
            raise ValueError(f"unknown sigma mode '{self.sigma_mode}'")
        if not self.h_fd > 0:
            raise ValueError("h_fd must be positive")


def std_normal_pdf(x: float) -> float:
    return math.exp(-0.5 * x * x) / _SQRT_2PI


def tail_coefficient(epsilon: float, mode: str = "tail") -> float:
    """c such that AVaR = m - c * sigma for a Gaussian distance."""
    phi = std_normal_pdf(float(ndtri(epsilon)))
    if mode == "tail":
        return phi / (1.0 - epsilon)
    if mode == "literal":
        return phi / epsilon
    raise ValueError(f"unknown AVaR mode '{mode}'")


def var(dist: DistanceDistribution, epsilon: float) -> float:
    """Gaussian epsilon-quantile of the distance."""
    if dist.std_dist == 0:
        return float(dist.mean_dist)
    return float(dist.mean_dist + dist.std_dist * ndtri(epsilon))


def avar(dist: DistanceDistribution, params: RiskParams) -> float:
    if dist.std_dist == 0:
        return float(dist.mean_dist)
    return float(dist.mean_dist - dist.std_dist * tail_coefficient(params.epsilon, params.mode))


def _direction(mean: np.ndarray, position: np.ndarray) -> tuple[np.ndarray, float]:
    diff = np.asarray(mean, dtype=float) - np.asarray(position, dtype=float)
    r = float(np.linalg.norm(diff))
    if r < _DEGENERATE_TOL:
        raise DegenerateGeometryError("position coincides with a splat mean")
    return diff / r, r


def distance_distribution(splat: Splat, position: np.ndarray, params: RiskParams) -> DistanceDistribution:
    u, r = _direction(splat.mean, position)
    if params.sigma_mode == "isotropic":
        std = float(splat.sigma_iso)
    else:
        std = math.sqrt(max(float(u @ covariance_of(splat) @ u), 0.0))
    return DistanceDistribution(r - params.r_v, std)


def rho_with_gradient(
    splat: Splat, position: np.ndarray, params: RiskParams, hessian: bool = True
) -> tuple[float, np.ndarray, np.ndarray | None]:
    """AVaR margin of one splat with its position gradient and Hessian."""
    field = SplatField.from_splats([splat])
    rho, grad, hess = rho_arrays(field, np.array([0]), np.asarray(position, dtype=float), params, 2 if hessian else 1)
    return float(rho[0]), grad[0], (hess[0] if hess is not None else None)


def sigma_bound(field: SplatField, params: RiskParams) -> float:
    """Upper bound on the distance std over the field for the active mode."""
    if len(field) == 0:
        return 0.0
    if params.sigma_mode == "isotropic":
        return float(field.sigma_iso.max())
    return float(field.scales.max())


def rho_arrays(
    field: SplatField, ids: np.ndarray, position: np.ndarray, params: RiskParams, order: int = 0
) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Vectorized AVaR margins for ``ids`` at ``position``.

    ``order`` 0 returns values, 1 adds (k, 3) gradients, 2 adds (k, 3, 3)
    Hessians. Raises DegenerateGeometryError if the position sits on a mean.
    """
    c = tail_coefficient(params.epsilon, params.mode)
    diff = field.means[ids] - position
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if np.any(r < _DEGENERATE_TOL):
        raise DegenerateGeometryError("position coincides with a splat mean")
    u = diff / r[:, None]

    if params.sigma_mode == "isotropic":
        sigma = field.sigma_iso[ids]
        rho = r - params.r_v - c * sigma
        if order == 0:
            return rho, None, None
        grad = -u
        if order == 1:
            return rho, grad, None
        hess = (np.eye(3)[None] - u[:, :, None] * u[:, None, :]) / r[:, None, None]
        return rho, grad, hess

    cov = field.covariances[ids]
    cu = np.einsum("kij,kj->ki", cov, u)
    sigma = np.sqrt(np.maximum(np.einsum("ki,ki->k", u, cu), 0.0))
    rho = r - params.r_v - c * sigma
    if order == 0:
        return rho, None, None
    grad = _directional_grad(u, r, cu, sigma, c)
    if order == 1:
        return rho, grad, None
    h = params.h_fd
    hess = np.empty((len(ids), 3, 3))
    for k in range(3):
        e = np.zeros(3)
        e[k] = h
        gp = _directional_grad_at(field, ids, position + e, c)
        gm = _directional_grad_at(field, ids, position - e, c)
        hess[:, :, k] = (gp - gm) / (2 * h)
    hess = 0.5 * (hess + np.swapaxes(hess, 1, 2))
    return rho, grad, hess


def _directional_grad(u, r, cu, sigma, c):
    # d sigma / d position = -(I - u u^T) Sigma u / (r sigma)
    proj = cu - u * np.einsum("ki,ki->k", u, cu)[:, None]
    dsigma = -proj / (r * sigma)[:, None]
    return -u - c * dsigma


def _directional_grad_at(field, ids, position, c):
    diff = field.means[ids] - position
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    u = diff / r[:, None]
    cu = np.einsum("kij,kj->ki", field.covariances[ids], u)
    sigma = np.sqrt(np.maximum(np.einsum("ki,ki->k", u, cu), 0.0))
    return _directional_grad(u, r, cu, sigma, c)


def min_risk(field: SplatField, position: np.ndarray, params: RiskParams) -> tuple[float, int]:
    """Exact minimum AVaR margin over the field and the id attaining it.

    Only splats that could beat the nearest splat's margin are evaluated:
    a splat at distance r has margin at least r - r_v - c * sigma_max.
    """
    if len(field) == 0:
        raise ValueError("field is empty")
    position = np.asarray(position, dtype=float).reshape(3)
    c = tail_coefficient(params.epsilon, params.mode)
    _, i0 = field.nearest(position)
    rho0 = rho_arrays(field, np.array([i0]), position, params)[0][0]
    radius = rho0 + params.r_v + c * sigma_bound(field, params)
    ids = neighbors_within(field, position, max(radius, 0.0))
    if len(ids) == 0:
        ids = np.array([i0])
    rho = rho_arrays(field, ids, position, params)[0]
    k = int(np.argmin(rho))
    return float(rho[k]), int(ids[k])
