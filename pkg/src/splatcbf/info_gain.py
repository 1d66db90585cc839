"""Risk-aware expected information gain over a splat field.

Per-splat Fisher information is replaced by a smooth visibility surrogate
``f_i = opacity_i * visibility_i(pose)`` and the prior by the scalar
``info_prior_i``, so the EIG trace reduces to ``sum_i f_i / info_prior_i``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from splatcbf.risk import RiskParams, min_risk
from splatcbf.splat_field import DegenerateGeometryError, Splat, SplatField, neighbors_within


@dataclass(frozen=True)
class CameraModel:
    fov_half_angle: float = math.pi / 3
    max_range: float = 5.0
    range_falloff: float = 0.3
    angular_sharpness: float = 20.0

    def __post_init__(self) -> None:
        if not 0 < self.fov_half_angle < math.pi / 2:
            raise ValueError("fov_half_angle must lie in (0, pi/2)")
        for name in ("max_range", "range_falloff", "angular_sharpness"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class MaskParams:
    beta1: float = 2.0
    beta2: float = 1.0

    def __post_init__(self) -> None:
        if not (self.beta1 > 0 and self.beta2 > 0):
            raise ValueError("beta1 and beta2 must be positive")


@dataclass
class Pose:
    """Camera position (3-vector) and unit heading, planar (2) or spatial (3)."""

    position: np.ndarray
    heading: np.ndarray

    def __post_init__(self) -> None:
        self.position = np.asarray(self.position, dtype=float).reshape(3)
        self.heading = np.asarray(self.heading, dtype=float).ravel()
        if self.heading.shape not in ((2,), (3,)):
            raise ValueError("heading must have 2 or 3 components")
        if abs(float(np.linalg.norm(self.heading)) - 1.0) > 1e-9:
            raise ValueError("heading must be a unit vector")

    @property
    def planar(self) -> bool:
        return self.heading.shape == (2,)

    @property
    def heading3(self) -> np.ndarray:
        if self.planar:
            return np.array([self.heading[0], self.heading[1], 0.0])
        return self.heading


@dataclass
class InfoDirections:
    d_pi: np.ndarray
    grad_pi_norm: float
    d_eta: np.ndarray
    grad_eta_norm: float
    pi_degenerate: bool
    eta_degenerate: bool


def _sigmoid(t: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * t))


def fisher_arrays(field: SplatField, ids: np.ndarray, position: np.ndarray, heading3: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Surrogate per-splat Fisher information opacity * visibility."""
    diff = field.means[ids] - position
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    if np.any(r < 1e-9):
        raise DegenerateGeometryError("splat mean coincides with the camera position")
    cos_psi = diff @ heading3 / r
    vis = _sigmoid(cam.angular_sharpness * (cos_psi - math.cos(cam.fov_half_angle))) * np.exp(-cam.range_falloff * r)
    return field.opacity[ids] * vis


def splat_visibility(pose: Pose, splat: Splat, cam: CameraModel) -> float:
    """Smooth visibility in (0, 1): angular sigmoid around the FOV edge times range decay."""
    diff = splat.mean - pose.position
    r = float(np.linalg.norm(diff))
    if r < 1e-9:
        raise DegenerateGeometryError("splat mean coincides with the camera position")
    cos_psi = float(diff @ pose.heading3) / r
    edge = cam.angular_sharpness * (cos_psi - math.cos(cam.fov_half_angle))
    return float(_sigmoid(edge) * math.exp(-cam.range_falloff * r))


def eig(pose: Pose, field: SplatField, ids: np.ndarray | Sequence[int], cam: CameraModel) -> float:
    """Risk-aware EIG of ``pose`` restricted to the masked splats ``ids``."""
    ids = np.asarray(ids, dtype=int)
    if len(ids) == 0:
        return 0.0
    f = fisher_arrays(field, ids, pose.position, pose.heading3, cam)
    return float(np.sum(f / field.info_prior[ids]))


def mask_radius(point: np.ndarray, field: SplatField, risk: RiskParams, mp: MaskParams) -> float:
    r_min, _ = min_risk(field, point, risk)
    return mp.beta1 * math.exp(-mp.beta2 * r_min)


def masked_splats(trajectory: Sequence[np.ndarray] | np.ndarray, field: SplatField, risk: RiskParams, mp: MaskParams) -> np.ndarray:
    """Union of splats inside the risk-scaled balls around each waypoint (ascending ids)."""
    pts = np.asarray(trajectory, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("trajectory is empty")
    found = [neighbors_within(field, p, mask_radius(p, field, risk, mp)) for p in pts]
    return np.unique(np.concatenate(found)) if found else np.empty(0, dtype=int)


def _tangent_basis(eta: np.ndarray) -> list[np.ndarray]:
    if eta.shape == (2,):
        return [np.array([-eta[1], eta[0]])]
    a = np.eye(3)[int(np.argmin(np.abs(eta)))]
    t1 = np.cross(eta, a)
    t1 /= np.linalg.norm(t1)
    return [t1, np.cross(eta, t1)]


def info_ascent_directions(
    pose: Pose,
    field: SplatField,
    ids: np.ndarray | Sequence[int],
    cam: CameraModel,
    h_pos: float = 1e-4,
    h_ang: float = 1e-4,
    g_min: float = 1e-8,
) -> InfoDirections:
    """Normalized EIG gradients w.r.t. position and heading by central differences.

    For a planar pose only the x, y position components are varied and the
    heading is rotated on the unit circle; otherwise the full position and
    the two tangent directions of the unit sphere are used.
    """
    ids = np.asarray(ids, dtype=int)
    dim = 2 if pose.planar else 3
    if len(ids) == 0:
        return InfoDirections(np.zeros(dim), 0.0, np.zeros(dim), 0.0, True, True)

    def value(position: np.ndarray, heading: np.ndarray) -> float:
        f = fisher_arrays(field, ids, position, heading, cam)
        return float(np.sum(f / field.info_prior[ids]))

    h3 = pose.heading3
    g_pi = np.zeros(dim)
    for k in range(dim):
        e = np.zeros(3)
        e[k] = h_pos
        g_pi[k] = (value(pose.position + e, h3) - value(pose.position - e, h3)) / (2 * h_pos)

    g_eta = np.zeros(dim)
    for t in _tangent_basis(pose.heading):
        plus = math.cos(h_ang) * pose.heading + math.sin(h_ang) * t
        minus = math.cos(h_ang) * pose.heading - math.sin(h_ang) * t
        lift = (lambda v: np.array([v[0], v[1], 0.0])) if dim == 2 else (lambda v: v)
        g_eta += (value(pose.position, lift(plus)) - value(pose.position, lift(minus))) / (2 * h_ang) * t

    n_pi = float(np.linalg.norm(g_pi))
    n_eta = float(np.linalg.norm(g_eta))
    d_pi = g_pi / n_pi if n_pi >= g_min else np.zeros(dim)
    d_eta = g_eta / n_eta if n_eta >= g_min else np.zeros(dim)
    return InfoDirections(d_pi, n_pi, d_eta, n_eta, n_pi < g_min, n_eta < g_min)


def next_best_view(candidates: Sequence[Pose], field: SplatField, ids: np.ndarray | Sequence[int], cam: CameraModel) -> tuple[Pose, float]:
    """Highest-EIG candidate; ties go to the lowest index."""
    if len(candidates) == 0:
        raise ValueError("no candidate poses")
    scores = rank_views(candidates, field, ids, cam)
    best = int(np.argmax(scores))
    return candidates[best], float(scores[best])


def rank_views(candidates: Sequence[Pose], field: SplatField, ids, cam: CameraModel) -> np.ndarray:
    return np.array([eig(p, field, ids, cam) for p in candidates])


def ring_candidates(center: np.ndarray, radius: float, n: int, facing: str = "inward", seed: int = 0, planar: bool = False) -> list[Pose]:
    """``n`` poses on a horizontal circle; the phase is drawn from ``seed``."""
    center = np.asarray(center, dtype=float).reshape(3)
    phase = np.random.default_rng(seed).uniform(0, 2 * np.pi)
    out = []
    for k in range(n):
        a = phase + 2 * np.pi * k / n
        radial = np.array([math.cos(a), math.sin(a), 0.0])
        heading = -radial if facing == "inward" else radial
        out.append(Pose(center + radius * radial, heading[:2] if planar else heading))
    return out


def grid_candidates(lo: Sequence[float], hi: Sequence[float], n: int, n_headings: int = 8, seed: int = 0) -> list[Pose]:
    """Poses on an n x n horizontal grid at height lo[2], each with ``n_headings`` planar headings."""
    rng = np.random.default_rng(seed)
    xs = np.linspace(lo[0], hi[0], n)
    ys = np.linspace(lo[1], hi[1], n)
    phase = rng.uniform(0, 2 * np.pi)
    out = []
    for x in xs:
        for y in ys:
            for k in range(n_headings):
                a = phase + 2 * np.pi * k / n_headings
                out.append(Pose([x, y, lo[2]], [math.cos(a), math.sin(a), 0.0]))
    return out


def update_map(field: SplatField, pose: Pose, cam: CameraModel) -> SplatField:
    """Fold one observation from ``pose`` into every splat's prior, in place.

    Splats whose mean coincides with the camera receive no information.
    """
    diff = field.means - pose.position
    r = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    ok = r >= 1e-9
    f = np.zeros(len(field))
    if np.any(ok):
        f[ok] = fisher_arrays(field, np.flatnonzero(ok), pose.position, pose.heading3, cam)
    old = field.info_prior
    new = old + f
    field.sigma_iso = field.sigma_iso * np.sqrt(old / new)
    field.info_prior = new
    return field
