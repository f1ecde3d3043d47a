"""Pixelwise maximum-likelihood depth: every pixel's histogram on its own."""

from __future__ import annotations

import numpy as np

from splidar.core import BackgroundModel, DataCube, DepthMap, GateMask, UsageError, fractional_bin_to_depth
from splidar.operators import segment_ids

TIE_RTOL = 1e-12


def shift_scores(
    counts: np.ndarray,
    kernel: np.ndarray,
    in_gate: np.ndarray,
    bin_index: np.ndarray | None = None,
    background: np.ndarray | None = None,
    signal: np.ndarray | None = None,
) -> np.ndarray:
    """Log-likelihood (up to a per-pixel constant) of a pulse centred on each bin.

    For a pixel with background ``b`` per bin and signal ``a`` photons the
    Poisson log-likelihood of shift ``s`` over in-gate bins ``G`` is

        sum_{k in G} S_k log(1 + (a/b) h_{k-s}) - a sum_{k in G} h_{k-s}

    plus terms independent of ``s``. Where ``b`` or ``a`` is zero the plain
    correlation ``sum S_k h_{k-s}`` (the weak-signal limit) is used instead.
    """
    counts = np.asarray(counts, dtype=float)
    kernel = np.asarray(kernel, dtype=float)
    ny, nx, nt = counts.shape
    c = len(kernel) // 2
    seg = segment_ids(bin_index, nt)
    s_gated = counts * in_gate

    if background is None:
        background = np.zeros((ny, nx))
    if signal is None:
        signal = np.zeros((ny, nx))
    use_log = (background > 0) & (signal > 0)
    ratio = np.where(use_log, signal / np.where(background > 0, background, 1.0), 0.0)

    scores = np.zeros((ny, nx, nt))
    mass = np.zeros((ny, nx, nt))
    pos = np.arange(nt)
    for j, h in enumerate(kernel):
        if h == 0:
            continue
        off = j - c
        src = pos + off
        ok = (src >= 0) & (src < nt)
        ok[ok] &= seg[src[ok]] == seg[pos[ok]]
        shifted = np.zeros((ny, nx, nt))
        shifted[:, :, ok] = s_gated[:, :, src[ok]]
        weight = np.where(use_log, np.log1p(ratio * h), h)
        scores += shifted * weight[:, :, None]
        gate_hit = np.zeros(nt)
        gate_hit[ok] = in_gate[src[ok]]
        mass += h * gate_hit
    scores -= np.where(use_log, signal, 0.0)[:, :, None] * mass
    return scores


def argmax_smallest(scores: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    """Index of the maximum along the last axis, smallest index among near-ties."""
    masked = np.where(allowed, scores, -np.inf)
    best = masked.max(axis=-1, keepdims=True)
    tol = TIE_RTOL * np.maximum(np.abs(best), 1.0)
    return np.argmax(masked >= best - tol, axis=-1)


def pixelwise_ml(
    data: DataCube,
    temporal_kernel: np.ndarray,
    gates: GateMask | None = None,
    intensity_floor: float = 0.1,
    background: BackgroundModel | None = None,
    subtract_background: bool = True,
) -> DepthMap:
    """Depth from the most likely pulse position in each pixel's in-gate histogram.

    Intensity is the in-gate count total, minus the expected in-gate
    background when ``subtract_background`` is set and a background model is
    given. Pixels with no more than ``intensity_floor`` in-gate counts are
    invalid. Ties go to the smaller bin index.
    """
    counts = data.counts
    if gates is None:
        in_gate = np.ones(data.nt, dtype=bool)
    else:
        if np.any(data.bin_index >= gates.nt):
            raise UsageError("cube bins extend beyond the gate axis")
        in_gate = gates.as_bool()[data.bin_index]
    n_in = int(in_gate.sum())
    total = counts[:, :, in_gate].sum(axis=2).astype(float)

    b = None if background is None else background.per_pixel_rate
    if b is not None and b.shape != total.shape:
        raise UsageError("background shape does not match the cube")
    signal = total if b is None else np.maximum(total - b * n_in, 0.0)

    scores = shift_scores(counts, temporal_kernel, in_gate, data.bin_index, b, signal)
    best = argmax_smallest(scores, in_gate[None, None, :])
    valid = (total > intensity_floor) & (n_in > 0)
    depth = np.where(valid, fractional_bin_to_depth(data.bin_index[best], data.bin_width, data.t0), np.nan)
    intensity = signal if (subtract_background and b is not None) else total
    return DepthMap(depth, intensity, valid)
