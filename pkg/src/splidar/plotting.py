"""Report figures written next to the CSV output."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from splidar.core import DepthMap, GateMask  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "figure.dpi": 120,
    "savefig.bbox": "tight",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path)
    plt.close(fig)
    return path


def plot_histogram(hist: np.ndarray, gates: GateMask, path, bin_width: float | None = None) -> Path:
    """Global time histogram with the signal gates shaded."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(6, 2.6))
        ax.step(np.arange(len(hist)), hist, where="mid", lw=0.8, color="k")
        for a, b in gates.intervals:
            ax.axvspan(a - 0.5, b - 0.5, color="tab:orange", alpha=0.3, lw=0)
        xlabel = "time bin" if bin_width is None else f"time bin ({bin_width * 1e12:g} ps)"
        ax.set_xlabel(xlabel)
        ax.set_ylabel("counts (all pixels)")
        ax.set_xlim(0, len(hist) - 1)
        return _save(fig, path)


def plot_depth_maps(maps: dict[str, DepthMap], path, vmin=None, vmax=None) -> Path:
    """Side-by-side depth images on a shared color scale; invalid pixels are blank."""
    finite = [m.depth[m.valid] for m in maps.values() if m.valid.any()]
    if finite and vmin is None:
        vmin = min(float(np.min(f)) for f in finite)
    if finite and vmax is None:
        vmax = max(float(np.max(f)) for f in finite)
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(maps), figsize=(2.6 * len(maps), 2.8), squeeze=False)
        for ax, (title, dm) in zip(axes[0], maps.items()):
            im = ax.imshow(np.ma.masked_invalid(dm.depth), cmap="viridis", vmin=vmin, vmax=vmax)
            ax.set_title(title)
            ax.set_xticks([])
            ax.set_yticks([])
        fig.colorbar(im, ax=axes[0].tolist(), shrink=0.8, label="depth (m)")
        return _save(fig, path)


def plot_trace(phi: np.ndarray, path) -> Path:
    """Objective value per accepted iteration, relative to the final value."""
    phi = np.asarray(phi, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        gap = phi - phi[-1]
        ax.semilogy(np.arange(len(phi)), np.where(gap > 0, gap, np.nan), "k.-", lw=0.8, ms=3)
        ax.set_xlabel("iteration")
        ax.set_ylabel(r"$\Phi - \Phi_{final}$")
        return _save(fig, path)


def plot_depth_profile(maps: dict[str, DepthMap], row: int, path) -> Path:
    """Depth along one image row for each map."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 2.6))
        for name, dm in maps.items():
            ax.plot(dm.depth[row], drawstyle="steps-mid", lw=0.9, label=name)
        ax.set_xlabel("x (pixel)")
        ax.set_ylabel("depth (m)")
        ax.legend(frameon=False)
        return _save(fig, path)
