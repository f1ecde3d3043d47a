"""Global gating: find the time bins that carry signal using the all-pixel histogram.

Reflectors in a natural scene cluster in a few depth ranges, so summing every
pixel's histogram piles the sparse signal into a few peaks that stand out
from the flat background even when each pixel sees about one signal photon.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from splidar.core import BackgroundModel, DataCube, GateMask, UsageError
from splidar.simulate import kernel_fwhm


@dataclass(frozen=True)
class GateConfig:
    threshold_sigma: float = 5.0
    gate_halfwidth: int | None = None  # None: 4 pulse FWHMs
    max_peaks: int = 8

    def __post_init__(self):
        if not self.threshold_sigma > 0:
            raise UsageError("threshold_sigma must be positive")
        if self.gate_halfwidth is not None and self.gate_halfwidth < 1:
            raise UsageError("gate_halfwidth must be at least 1")
        if self.max_peaks < 1:
            raise UsageError("max_peaks must be at least 1")

    def halfwidth_for(self, temporal_kernel: np.ndarray) -> int:
        if self.gate_halfwidth is not None:
            return int(self.gate_halfwidth)
        return max(1, int(round(4.0 * kernel_fwhm(temporal_kernel))))


def global_histogram(cube: DataCube) -> np.ndarray:
    """Counts summed over all pixels, one entry per time bin."""
    return cube.counts.sum(axis=(0, 1), dtype=np.int64)


def _runs(mask: np.ndarray) -> list[tuple[int, int]]:
    padded = np.concatenate(([False], mask, [False])).astype(np.int8)
    d = np.diff(padded)
    return list(zip(np.flatnonzero(d == 1).tolist(), np.flatnonzero(d == -1).tolist()))


def find_signal_gates(
    hist: np.ndarray, temporal_kernel: np.ndarray, cfg: GateConfig | None = None
) -> GateMask:
    """Matched-filter the histogram, threshold at ``median + k sqrt(median)``, dilate and merge."""
    cfg = cfg or GateConfig()
    hist = np.asarray(hist, dtype=float)
    kernel = np.asarray(temporal_kernel, dtype=float)
    nt = len(hist)
    if nt < len(kernel):
        raise UsageError(f"histogram ({nt} bins) is shorter than the temporal kernel ({len(kernel)})")

    filtered = ndimage.correlate1d(hist, kernel, mode="constant", cval=0.0)
    floor = float(np.median(filtered))
    threshold = floor + cfg.threshold_sigma * np.sqrt(max(floor, 1.0))
    hw = cfg.halfwidth_for(kernel)

    merged: list[list[int]] = []
    for a, b in _runs(filtered > threshold):
        a, b = max(0, a - hw), min(nt, b + hw)
        if merged and a <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], b)
        else:
            merged.append([a, b])

    if len(merged) > cfg.max_peaks:
        heights = [filtered[a:b].max() for a, b in merged]
        # stable sort keeps the earlier interval on equal heights
        keep = sorted(np.argsort(-np.asarray(heights), kind="stable")[: cfg.max_peaks])
        merged = [merged[i] for i in keep]
    return GateMask(tuple((a, b) for a, b in merged), nt)


def _in_gate(cube: DataCube, gates: GateMask) -> np.ndarray:
    if np.any(cube.bin_index >= gates.nt):
        raise UsageError(f"cube bins extend beyond the gate axis of {gates.nt} bins")
    return gates.as_bool()[cube.bin_index]


def estimate_background(cube: DataCube, gates: GateMask) -> BackgroundModel:
    """Per-pixel background counts per bin from the out-of-gate bins.

    With fewer than 10 % of the bins outside the gates the per-pixel estimate
    is too noisy and the mean over all pixels is used instead. With no
    out-of-gate bins at all the rate is 0 and ``note`` says so.
    """
    outside = ~_in_gate(cube, gates)
    n_out = int(outside.sum())
    shape = (cube.ny, cube.nx)
    if n_out == 0:
        note = "gates cover every bin; background set to 0"
        warnings.warn(note, RuntimeWarning, stacklevel=2)
        return BackgroundModel(np.zeros(shape), note=note)
    per_pixel = cube.counts[:, :, outside].sum(axis=2) / n_out
    if n_out < 0.1 * cube.nt:
        return BackgroundModel(
            np.full(shape, per_pixel.mean()),
            note=f"only {n_out} out-of-gate bins; using the global mean",
        )
    return BackgroundModel(per_pixel)


def crop_cube(cube: DataCube, gates: GateMask) -> DataCube:
    """Keep only in-gate bins; ``bin_index`` of the result records their original positions."""
    if not gates:
        raise UsageError(
            "no signal gates were found; lower threshold_sigma or widen gate_halfwidth"
        )
    keep = _in_gate(cube, gates)
    return DataCube(cube.counts[:, :, keep], cube.bin_width, cube.t0, cube.bin_index[keep])
