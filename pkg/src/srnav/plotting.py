"""Figures rendered next to the CSV/JSON outputs of an experiment directory."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .export import read_rows  # noqa: E402

COLORS = {"base": "tab:blue", "bi": "tab:green", "sr": "tab:red"}
LABELS = {"base": "base resolution", "bi": "bicubic", "sr": "super-resolution"}


def _finish(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def plot_numerical(directory) -> list[Path]:
    """Estimated vs. true x per mode, plus an error histogram."""
    directory = Path(directory)
    rows = read_rows(directory / "numerical.csv")
    modes = [m for m in ("base", "bi", "sr") if any(r["mode"] == m for r in rows)]
    fig, axes = plt.subplots(1, len(modes), figsize=(4 * len(modes), 4), sharex=True, sharey=True, squeeze=False)
    for ax, mode in zip(axes[0], modes):
        sel = [r for r in rows if r["mode"] == mode]
        tx = np.array([float(r["true_x"]) for r in sel])
        ex = np.array([float(r["est_x"]) for r in sel])
        ax.plot(tx, ex, ".", color=COLORS[mode], ms=4)
        lo, hi = np.nanmin(tx), np.nanmax(tx)
        ax.plot([lo, hi], [lo, hi], "k-", lw=0.8)
        ax.set_title(LABELS[mode])
        ax.set_xlabel("true center x (px)")
    axes[0][0].set_ylabel("estimated center x (px)")
    out = [_finish(fig, directory / "numerical_scatter.png")]

    fig, ax = plt.subplots(figsize=(5, 3.5))
    for mode in modes:
        sel = [r for r in rows if r["mode"] == mode]
        err = np.hypot([float(r["est_x"]) - float(r["true_x"]) for r in sel],
                       [float(r["est_y"]) - float(r["true_y"]) for r in sel])
        ax.hist(err[np.isfinite(err)], bins=30, histtype="step", color=COLORS[mode], label=LABELS[mode])
    ax.set_xlabel("center error (base px)")
    ax.set_ylabel("count")
    ax.legend()
    out.append(_finish(fig, directory / "numerical_errors.png"))
    return out


def plot_benchtop(directory) -> list[Path]:
    """Puncture scatter about each trial's centroid with 1-std circles."""
    directory = Path(directory)
    rows = read_rows(directory / "punctures.csv")
    modes = [m for m in ("base", "bi", "sr") if any(r["mode"] == m for r in rows)]
    fig, ax = plt.subplots(figsize=(5, 5))
    theta = np.linspace(0, 2 * np.pi, 200)
    for mode in modes:
        sel = [r for r in rows if r["mode"] == mode]
        pts, dists = [], []
        for t in sorted({r["trial"] for r in sel}):
            p = np.array([(float(r["x_mm"]), float(r["y_mm"])) for r in sel if r["trial"] == t])
            c = p - p.mean(axis=0)
            pts.append(c)
            dists.append(np.linalg.norm(c, axis=1))
        pts = np.concatenate(pts)
        std = float(np.std(np.concatenate(dists), ddof=1)) if len(pts) > 1 else 0.0
        ax.plot(pts[:, 0], pts[:, 1], ".", color=COLORS[mode], ms=4, label=f"{LABELS[mode]} (std {std:.3f} mm)")
        ax.plot(std * np.cos(theta), std * np.sin(theta), "-", color=COLORS[mode], lw=1)
    ax.set_aspect("equal")
    ax.set_xlabel("x offset from trial centroid (mm)")
    ax.set_ylabel("y offset from trial centroid (mm)")
    ax.legend(fontsize=8)
    return [_finish(fig, directory / "benchtop_punctures.png")]
