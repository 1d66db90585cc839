"""Report figures rendered to files with the Agg backend."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from splatcbf.sim import TrajectoryRecord  # noqa: E402
from splatcbf.splat_field import SplatField  # noqa: E402


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_trajectory(rec: TrajectoryRecord, field: SplatField, path: str | Path, goal: Sequence[float] | None = None) -> Path:
    """Top-down view: splat means, path coloured by perception state, start and goal."""
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.scatter(field.means[:, 0], field.means[:, 1], s=3, c="0.55", alpha=0.5, label="splat means")
    if len(rec):
        xy = np.array([s[:2] for s in rec.state])
        ax.plot(xy[:, 0], xy[:, 1], "-", color="C0", lw=1.2, label="path")
        h_pi = np.array([np.nan if v is None else v for v in rec.h_pi], dtype=float)
        relaxed = np.array(rec.delta_pi) > 1e-9
        if np.isfinite(h_pi).any():
            ok = np.isfinite(h_pi) & (h_pi > 0)
            ax.scatter(xy[ok, 0], xy[ok, 1], s=6, c="C2", label="h_pi > 0")
            ax.scatter(xy[relaxed, 0], xy[relaxed, 1], s=6, c="C3", label="slack active")
        ax.plot(*xy[0], "o", color="k", ms=5, label="start")
    if goal is not None:
        ax.plot(goal[0], goal[1], "*", color="C1", ms=12, label="goal")
    ax.set_aspect("equal")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(loc="best", fontsize=7)
    return _save(fig, Path(path))


def plot_barriers(rec: TrajectoryRecord, path: str | Path) -> Path:
    """Barrier values, slacks and multipliers over time."""
    t = np.asarray(rec.t)
    fig, axes = plt.subplots(3, 1, figsize=(7, 6.5), sharex=True)
    axes[0].plot(t, rec.h_s, label="h_s")
    for key in ("h_pi", "h_eta"):
        vals = np.array([np.nan if v is None else v for v in getattr(rec, key)], dtype=float)
        if np.isfinite(vals).any():
            axes[0].plot(t, vals, label=key)
    axes[0].axhline(0.0, color="k", lw=0.6)
    axes[0].set_ylabel("barrier")
    axes[0].legend(fontsize=7)
    axes[1].plot(t, rec.delta_pi, label="delta_pi")
    axes[1].plot(t, rec.delta_eta, label="delta_eta")
    axes[1].set_ylabel("slack")
    axes[1].legend(fontsize=7)
    axes[2].plot(t, rec.lambda_s, label="lambda_s")
    axes[2].plot(t, rec.lambda_pi, label="lambda_pi")
    axes[2].plot(t, rec.lambda_eta, label="lambda_eta")
    axes[2].set_ylabel("multiplier")
    axes[2].set_xlabel("t [s]")
    axes[2].legend(fontsize=7)
    return _save(fig, Path(path))


def plot_batch(rows: Sequence[dict], path: str | Path) -> Path:
    """Per-group safe rate and mean minimum distance."""
    names = [r["group"] for r in rows]
    x = np.arange(len(rows))
    fig, (a, b) = plt.subplots(1, 2, figsize=(8, 3.5))
    a.bar(x, [r["safe_rate"] for r in rows], color="C0")
    a.set_ylim(0, 1.05)
    a.set_ylabel("safe rate")
    b.bar(x, [r["mean_min_dist"] for r in rows], color="C1")
    b.set_ylabel("mean min distance [m]")
    for ax in (a, b):
        ax.set_xticks(x)
        ax.set_xticklabels(names, rotation=20, fontsize=8)
    return _save(fig, Path(path))


def plot_nbv(field: SplatField, poses, scores: np.ndarray, path: str | Path) -> Path:
    """Candidate positions coloured by EIG with heading arrows."""
    fig, ax = plt.subplots(figsize=(6, 5))
    ax.scatter(field.means[:, 0], field.means[:, 1], s=3, c="0.6", alpha=0.5)
    pos = np.array([p.position[:2] for p in poses])
    hd = np.array([p.heading[:2] for p in poses])
    sc = ax.scatter(pos[:, 0], pos[:, 1], c=scores, cmap="viridis", s=25)
    ax.quiver(pos[:, 0], pos[:, 1], hd[:, 0], hd[:, 1], scores, cmap="viridis", scale=25, width=0.004)
    best = int(np.argmax(scores))
    ax.plot(*pos[best], "o", mfc="none", mec="C3", ms=12)
    fig.colorbar(sc, ax=ax, label="EIG")
    ax.set_aspect("equal")
    return _save(fig, Path(path))
