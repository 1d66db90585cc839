"""Robot dynamics models: 3D double integrator and planar unicycle."""

from __future__ import annotations

import math

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(a + math.pi, 2 * math.pi)
    if w <= 0:
        w += 2 * math.pi
    return w - math.pi


class DoubleIntegrator3D:
    """State (p, v) in R^6, input acceleration u in R^3."""

    name = "double_integrator_3d"
    state_dim = 6
    input_dim = 3
    has_heading = False
    default_u_min = np.full(3, -3.0)
    default_u_max = np.full(3, 3.0)

    def f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.concatenate([x[3:6], u])

    def position3(self, x: np.ndarray, sensing_height: float = 0.0) -> np.ndarray:
        return np.asarray(x[:3], dtype=float)

    def velocity(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x[3:6], dtype=float)

    def normalize(self, x: np.ndarray) -> np.ndarray:
        return x

    def make_state(self, position, velocity=None, theta: float = 0.0) -> np.ndarray:
        v = np.zeros(3) if velocity is None else np.asarray(velocity, dtype=float)
        return np.concatenate([np.asarray(position, dtype=float)[:3], v])

    def state_dict(self, x: np.ndarray) -> dict:
        return {"p": x[:3].tolist(), "v": x[3:6].tolist()}


class Unicycle2D:
    """State (x, y, theta), input (v, omega); the camera looks along the heading."""

    name = "unicycle_2d"
    state_dim = 3
    input_dim = 2
    has_heading = True
    default_u_min = np.array([-0.5, -2.0])
    default_u_max = np.array([1.0, 2.0])

    def f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        return np.array([u[0] * math.cos(x[2]), u[0] * math.sin(x[2]), u[1]])

    def position3(self, x: np.ndarray, sensing_height: float = 0.0) -> np.ndarray:
        return np.array([x[0], x[1], sensing_height])

    def heading(self, x: np.ndarray) -> np.ndarray:
        return np.array([math.cos(x[2]), math.sin(x[2])])

    def heading_perp(self, x: np.ndarray) -> np.ndarray:
        return np.array([-math.sin(x[2]), math.cos(x[2])])

    def normalize(self, x: np.ndarray) -> np.ndarray:
        x = np.array(x, dtype=float)
        x[2] = wrap_angle(x[2])
        return x

    def make_state(self, position, velocity=None, theta: float = 0.0) -> np.ndarray:
        p = np.asarray(position, dtype=float)
        return np.array([p[0], p[1], wrap_angle(theta)])

    def state_dict(self, x: np.ndarray) -> dict:
        return {"p": x[:2].tolist(), "theta": float(x[2])}


MODELS = {m.name: m for m in (DoubleIntegrator3D(), Unicycle2D())}


def get_model(name: str):
    try:
        return MODELS[name]
    except KeyError:
        raise ValueError(f"unknown model '{name}'; expected one of {sorted(MODELS)}") from None
