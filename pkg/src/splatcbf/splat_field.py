"""Gaussian splat environment model: primitives, covariances, spatial index, file I/O.

The field stores splat attributes as parallel numpy arrays so the risk and
information code can vectorize over neighbourhoods. ``Splat`` is the
per-primitive view used at API boundaries and in files.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

logger = logging.getLogger(__name__)

SCHEMA = "splatmap/1"
SCENE_KINDS = ("random-box", "corridor", "ring", "narrow-gap")


class SplatMapError(ValueError):
    """Raised for malformed splat-map files or invalid splat parameters."""


class DegenerateGeometryError(ValueError):
    """Raised when a direction is undefined because two points coincide."""


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions in (w, x, y, z) order.

    Accepts a single quaternion of shape (4,) or a stack of shape (M, 4).
    """
    q = np.asarray(q, dtype=float)
    w, x, y, z = np.moveaxis(q, -1, 0)
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass
class Splat:
    """One Gaussian primitive.

    ``scales`` are principal-axis standard deviations in metres and
    ``sigma_iso`` is the isotropic std used by the isotropic risk mode. When
    ``sigma_iso`` is not given it defaults to the geometric mean of the scales.
    """

    mean: np.ndarray
    orientation: np.ndarray
    scales: np.ndarray
    opacity: float = 1.0
    sigma_iso: float | None = None
    info_prior: float = 1.0

    def __post_init__(self) -> None:
        self.mean = np.asarray(self.mean, dtype=float).reshape(3)
        q = np.asarray(self.orientation, dtype=float).reshape(4)
        norm = float(np.linalg.norm(q))
        if not np.isfinite(norm) or norm == 0.0:
            raise SplatMapError("quaternion must be non-zero and finite")
        self.orientation = q / norm
        self.scales = np.asarray(self.scales, dtype=float).reshape(3)
        if not np.all(self.scales > 0):
            raise SplatMapError(f"scales must be strictly positive, got {self.scales.tolist()}")
        self.opacity = float(min(max(self.opacity, 0.0), 1.0))
        if self.sigma_iso is None:
            self.sigma_iso = float(np.exp(np.mean(np.log(self.scales))))
        self.sigma_iso = float(self.sigma_iso)
        if self.sigma_iso < 0:
            raise SplatMapError("sigma_iso must be non-negative")
        self.info_prior = float(self.info_prior)
        if not self.info_prior > 0:
            raise SplatMapError("info_prior must be strictly positive")


def covariance_of(splat: Splat) -> np.ndarray:
    """Covariance R diag(s)^2 R^T of a splat (m^2)."""
    R = quat_to_rotmat(splat.orientation)
    cov = (R * splat.scales**2) @ R.T
    return 0.5 * (cov + cov.T)


class SplatField:
    """Indexed, array-backed collection of splats.

    Splat ids are positions in the arrays. The kd-tree over the means is
    built once; map updates only touch ``sigma_iso`` and ``info_prior`` so
    the index stays valid.
    """

    def __init__(
        self,
        means: np.ndarray,
        quats: np.ndarray,
        scales: np.ndarray,
        opacity: np.ndarray,
        sigma_iso: np.ndarray | None = None,
        info_prior: np.ndarray | None = None,
        meta: Mapping[str, Any] | None = None,
    ) -> None:
        self.means = np.ascontiguousarray(np.asarray(means, dtype=float).reshape(-1, 3))
        m = len(self.means)
        quats = np.asarray(quats, dtype=float).reshape(m, 4)
        norms = np.linalg.norm(quats, axis=1)
        if np.any(norms == 0) or not np.all(np.isfinite(norms)):
            raise SplatMapError("quaternions must be non-zero and finite")
        self.quats = quats / norms[:, None]
        self.scales = np.asarray(scales, dtype=float).reshape(m, 3)
        if not np.all(self.scales > 0):
            bad = int(np.argmax(~np.all(self.scales > 0, axis=1)))
            raise SplatMapError(f"splat {bad}: scales must be strictly positive")
        self.opacity = np.clip(np.asarray(opacity, dtype=float).reshape(m), 0.0, 1.0)
        if sigma_iso is None:
            sigma_iso = np.exp(np.mean(np.log(self.scales), axis=1))
        self.sigma_iso = np.asarray(sigma_iso, dtype=float).reshape(m).copy()
        if info_prior is None:
            info_prior = np.ones(m)
        self.info_prior = np.asarray(info_prior, dtype=float).reshape(m).copy()
        if np.any(self.info_prior <= 0):
            raise SplatMapError("info_prior must be strictly positive")
        self.meta: dict[str, Any] = dict(meta or {})
        self.index = cKDTree(self.means) if m else None
        self._cov: np.ndarray | None = None

    @classmethod
    def from_splats(cls, splats: Iterable[Splat], meta: Mapping[str, Any] | None = None) -> "SplatField":
        splats = list(splats)
        if not splats:
            return cls(np.empty((0, 3)), np.empty((0, 4)), np.empty((0, 3)), np.empty(0), meta=meta)
        return cls(
            np.array([s.mean for s in splats]),
            np.array([s.orientation for s in splats]),
            np.array([s.scales for s in splats]),
            np.array([s.opacity for s in splats]),
            np.array([s.sigma_iso for s in splats]),
            np.array([s.info_prior for s in splats]),
            meta=meta,
        )

    def __len__(self) -> int:
        return len(self.means)

    def splat(self, i: int) -> Splat:
        return Splat(
            self.means[i].copy(),
            self.quats[i].copy(),
            self.scales[i].copy(),
            float(self.opacity[i]),
            float(self.sigma_iso[i]),
            float(self.info_prior[i]),
        )

    def __iter__(self):
        return (self.splat(i) for i in range(len(self)))

    @property
    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if len(self) == 0:
            return np.zeros(3), np.zeros(3)
        return self.means.min(axis=0), self.means.max(axis=0)

    @property
    def covariances(self) -> np.ndarray:
        """(M, 3, 3) covariance stack, computed on first use."""
        if self._cov is None:
            R = quat_to_rotmat(self.quats)
            cov = np.einsum("mij,mj,mkj->mik", R, self.scales**2, R)
            self._cov = 0.5 * (cov + np.swapaxes(cov, 1, 2))
        return self._cov

    def copy(self) -> "SplatField":
        out = SplatField.__new__(SplatField)
        out.means = self.means
        out.quats = self.quats
        out.scales = self.scales
        out.opacity = self.opacity
        out.sigma_iso = self.sigma_iso.copy()
        out.info_prior = self.info_prior.copy()
        out.meta = dict(self.meta)
        out.index = self.index
        out._cov = self._cov
        return out

    def subset(self, ids: Sequence[int] | np.ndarray) -> "SplatField":
        ids = np.asarray(ids, dtype=int)
        return SplatField(
            self.means[ids],
            self.quats[ids],
            self.scales[ids],
            self.opacity[ids],
            self.sigma_iso[ids],
            self.info_prior[ids],
            meta=self.meta,
        )

    def filtered(self, min_opacity: float) -> "SplatField":
        """Drop splats whose opacity is below ``min_opacity``."""
        return self.subset(np.flatnonzero(self.opacity >= min_opacity))

    def nearest(self, point: np.ndarray) -> tuple[float, int]:
        """Euclidean distance to, and id of, the closest splat mean."""
        if self.index is None:
            raise ValueError("field is empty")
        d, i = self.index.query(np.asarray(point, dtype=float).reshape(3))
        return float(d), int(i)


def neighbors_within(field: SplatField, point: np.ndarray, radius: float) -> np.ndarray:
    """Ids (ascending) of splats with ``||mean - point|| <= radius``."""
    if radius < 0:
        raise ValueError("radius must be non-negative")
    if len(field) == 0:
        return np.empty(0, dtype=int)
    point = np.asarray(point, dtype=float).reshape(3)
    # The tree prefilters with a slightly padded radius; the exact norm decides.
    cand = field.index.query_ball_point(point, radius * (1 + 1e-9) + 1e-12)
    if not cand:
        return np.empty(0, dtype=int)
    cand = np.asarray(cand, dtype=int)
    d = np.linalg.norm(field.means[cand] - point, axis=1)
    return np.sort(cand[d <= radius])


# --- file I/O -------------------------------------------------------------


def _vec(rec: Mapping[str, Any], key: str, n: int) -> np.ndarray:
    if key not in rec:
        raise KeyError(f"missing key '{key}'")
    v = np.asarray(rec[key], dtype=float)
    if v.shape != (n,) or not np.all(np.isfinite(v)):
        raise ValueError(f"'{key}' must be {n} finite numbers")
    return v


def load_field(path: str | Path) -> SplatField:
    """Read a ``splatmap/1`` JSON-lines file.

    Raises FileNotFoundError for a missing file and SplatMapError naming the
    offending record (0-based) for malformed or invalid records.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"splat map not found: {path}")
    splats: list[Splat] = []
    meta: dict[str, Any] = {}
    ignored: set[str] = set()
    with path.open("r", encoding="utf-8") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line)
        except json.JSONDecodeError as exc:
            raise SplatMapError(f"{path}: header is not valid JSON") from exc
        if not isinstance(header, dict) or header.get("schema") != SCHEMA:
            raise SplatMapError(f"{path}: header must declare schema '{SCHEMA}'")
        meta = dict(header.get("meta", {}))
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            idx = len(splats)
            try:
                rec = json.loads(line)
                if not isinstance(rec, dict):
                    raise ValueError("record must be an object")
                ignored.update(k for k in ("color", "sh") if k in rec)
                mean = _vec(rec, "mean", 3)
                quat = _vec(rec, "quat", 4)
                scales = _vec(rec, "scales", 3)
                if "opacity" not in rec:
                    raise KeyError("missing key 'opacity'")
                opacity = float(rec["opacity"])
                sigma = rec.get("sigma_iso")
                prior = rec.get("info_prior", 1.0)
            except (ValueError, KeyError, TypeError) as exc:
                msg = exc.args[0] if exc.args else str(exc)
                raise SplatMapError(f"{path}: record {idx} (line {lineno}): {msg}") from exc
            if not np.all(scales > 0):
                raise SplatMapError(
                    f"{path}: record {idx} (line {lineno}): non-positive scale {scales.tolist()}"
                )
            try:
                splats.append(Splat(mean, quat, scales, opacity, sigma, prior))
            except SplatMapError as exc:
                raise SplatMapError(f"{path}: record {idx} (line {lineno}): {exc}") from exc
    if ignored:
        logger.warning("%s: ignoring rendering attributes %s", path, sorted(ignored))
    return SplatField.from_splats(splats, meta=meta)


def save_field(field: SplatField, path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"schema": SCHEMA, "count": len(field), "meta": _jsonable(field.meta)}) + "\n")
        for i in range(len(field)):
            rec = {
                "mean": field.means[i].tolist(),
                "quat": field.quats[i].tolist(),
                "scales": field.scales[i].tolist(),
                "opacity": float(field.opacity[i]),
                "sigma_iso": float(field.sigma_iso[i]),
                "info_prior": float(field.info_prior[i]),
            }
            fh.write(json.dumps(rec) + "\n")


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


# --- synthetic scenes -----------------------------------------------------


def _random_quats(rng: np.random.Generator, m: int) -> np.ndarray:
    q = rng.standard_normal((m, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def _attrs(rng: np.random.Generator, m: int, scale: tuple[float, float], opacity: tuple[float, float]):
    return (
        _random_quats(rng, m),
        rng.uniform(scale[0], scale[1], size=(m, 3)),
        rng.uniform(opacity[0], opacity[1], size=m),
    )


def _wall(
    rng: np.random.Generator,
    start: np.ndarray,
    direction: np.ndarray,
    length: float,
    normal: np.ndarray,
    spacing: float,
    z_levels: np.ndarray,
    jitter: float,
) -> np.ndarray:
    """Splat means on a vertical wall; jitter only pushes points along ``normal``."""
    n_along = max(int(math.floor(length / spacing)) + 1, 1)
    s = np.linspace(0.0, length, n_along)
    pts = []
    for z in z_levels:
        sj = np.clip(s + rng.uniform(-0.25, 0.25, size=n_along) * spacing, 0.0, length)
        off = rng.uniform(0.0, jitter, size=n_along)[:, None] * normal[None, :]
        xy = start[None, :2] + sj[:, None] * direction[None, :] + off
        pts.append(np.column_stack([xy, np.full(n_along, z + rng.uniform(-0.25, 0.25) * spacing)]))
    return np.vstack(pts)


def generate_field(kind: str, seed: int = 0, **params: Any) -> SplatField:
    """Deterministic synthetic scene.

    ``kind`` is one of random-box, corridor, ring, narrow-gap. Parameters not
    given take the defaults listed in the README. The returned field's
    ``meta`` records the scene kind, its parameters, and for corridor and
    narrow-gap scenes the declared start, goal and channel width.
    """
    rng = np.random.default_rng(seed)
    scale = tuple(params.get("scale_range", (0.03, 0.08)))
    opacity = tuple(params.get("opacity_range", (0.5, 1.0)))
    meta: dict[str, Any] = {"kind": kind, "seed": int(seed), "params": _jsonable(dict(params))}

    if kind == "random-box":
        m = int(params.get("count", 100))
        lo = np.asarray(params.get("lo", (-5.0, -5.0, -1.0)), dtype=float)
        hi = np.asarray(params.get("hi", (5.0, 5.0, 1.0)), dtype=float)
        means = rng.uniform(lo, hi, size=(m, 3))
        quats, scales, opac = _attrs(rng, m, scale, opacity)
        return SplatField(means, quats, scales, opac, meta=meta)

    if kind == "ring":
        m = int(params.get("count", 64))
        radius = float(params.get("radius", 2.0))
        center = np.asarray(params.get("center", (0.0, 0.0, 0.0)), dtype=float)
        phase = rng.uniform(0, 2 * np.pi)
        ang = phase + 2 * np.pi * np.arange(m) / m
        means = center + radius * np.column_stack([np.cos(ang), np.sin(ang), np.zeros(m)])
        quats, scales, opac = _attrs(rng, m, scale, opacity)
        meta.update(center=center.tolist(), radius=radius)
        return SplatField(means, quats, scales, opac, meta=meta)

    if kind == "corridor":
        # L-shaped (or straight when turn_length == 0) channel along +x then +y.
        width = float(params.get("width", 1.6))
        length = float(params.get("length", 4.0))
        turn = float(params.get("turn_length", 4.0))
        spacing = float(params.get("spacing", 0.2))
        height = float(params.get("height", 0.6))
        jitter = float(params.get("jitter", 0.05))
        tail = float(params.get("tail", 1.0))
        z_levels = np.arange(-height, height + 1e-9, spacing)
        w2 = width / 2
        ex, ey = np.array([1.0, 0.0]), np.array([0.0, 1.0])
        walls = []
        if turn > 0:
            walls.append(_wall(rng, np.array([-tail, -w2, 0]), ex, length + w2 + tail, -ey, spacing, z_levels, jitter))
            walls.append(_wall(rng, np.array([-tail, w2, 0]), ex, length - w2 + tail, ey, spacing, z_levels, jitter))
            walls.append(_wall(rng, np.array([length + w2, -w2, 0]), ey, turn + w2 + tail, ex, spacing, z_levels, jitter))
            walls.append(_wall(rng, np.array([length - w2, w2, 0]), ey, turn - w2 + tail, -ex, spacing, z_levels, jitter))
            goal = [length, turn, 0.0]
            path = [[0.0, 0.0, 0.0], [length, 0.0, 0.0], goal]
        else:
            walls.append(_wall(rng, np.array([-tail, -w2, 0]), ex, length + 2 * tail, -ey, spacing, z_levels, jitter))
            walls.append(_wall(rng, np.array([-tail, w2, 0]), ex, length + 2 * tail, ey, spacing, z_levels, jitter))
            goal = [length, 0.0, 0.0]
            path = [[0.0, 0.0, 0.0], goal]
        means = np.vstack(walls)
        quats, scales, opac = _attrs(rng, len(means), scale, opacity)
        meta.update(start=[0.0, 0.0, 0.0], goal=goal, channel_width=width, centerline=path)
        return SplatField(means, quats, scales, opac, meta=meta)

    if kind == "narrow-gap":
        # A wall across the path at x = wall_x with an opening of width ``gap``
        # centred on y = 0, plus an optional cluster of splats to one side.
        gap = float(params.get("gap", 0.8))
        wall_x = float(params.get("wall_x", 2.5))
        half_width = float(params.get("half_width", 2.5))
        spacing = float(params.get("spacing", 0.15))
        height = float(params.get("height", 0.6))
        jitter = float(params.get("jitter", 0.05))
        thickness = float(params.get("thickness", 0.0))
        n_cluster = int(params.get("cluster_count", 40))
        z_levels = np.arange(-height, height + 1e-9, spacing)
        g2 = gap / 2
        ey = np.array([0.0, 1.0])
        walls = [
            _wall(rng, np.array([wall_x, g2, 0]), ey, half_width - g2, np.array([1.0, 0.0]), spacing, z_levels, thickness),
            _wall(rng, np.array([wall_x, -half_width, 0]), ey, half_width - g2, np.array([1.0, 0.0]), spacing, z_levels, thickness),
        ]
        means = np.vstack(walls)
        # keep the opening clean: snap in-plane jitter so |y| >= gap/2
        ys = means[:, 1]
        means[:, 1] = np.where(ys >= 0, np.maximum(ys, g2), np.minimum(ys, -g2))
        goal = [2.0 * wall_x, 0.0, 0.0]
        n_wall = len(means)
        if n_cluster > 0:
            side = 1.0 if rng.uniform() < 0.5 else -1.0
            c_off = float(params.get("cluster_offset", 1.2))
            c_x = float(params.get("cluster_x", 0.5 * wall_x))
            spread = float(params.get("cluster_spread", 0.2))
            centre = np.array([c_x, side * c_off, 0.0])
            cl = centre + rng.normal(0.0, spread, size=(n_cluster, 3))
            cl[:, 1] = side * np.maximum(side * cl[:, 1], g2 + jitter)
            means = np.vstack([means, cl])
            meta["cluster_center"] = centre.tolist()
        quats, scales, opac = _attrs(rng, len(means), scale, opacity)
        # info priors let a scene mark the wall as already mapped
        prior = np.full(len(means), float(params.get("wall_prior", 1.0)))
        prior[n_wall:] = float(params.get("cluster_prior", 1.0))
        meta.update(start=[0.0, 0.0, 0.0], goal=goal, channel_width=gap, centerline=[[0.0, 0.0, 0.0], goal])
        return SplatField(means, quats, scales, opac, info_prior=prior, meta=meta)

    raise ValueError(f"unknown scene descriptor '{kind}'; expected one of {SCENE_KINDS}")


def distance_to_polyline(points: np.ndarray, polyline: Sequence[Sequence[float]]) -> np.ndarray:
    """Euclidean distance from each point to a 3D polyline."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    poly = np.asarray(polyline, dtype=float)
    best = np.full(len(pts), np.inf)
    for a, b in zip(poly[:-1], poly[1:]):
        ab = b - a
        t = np.clip((pts - a) @ ab / max(ab @ ab, 1e-300), 0.0, 1.0)
        d = np.linalg.norm(pts - (a + t[:, None] * ab), axis=1)
        best = np.minimum(best, d)
    return best
