"""Depth-map quality measures: PSNR, RMSE and bar-grating contrast."""

from __future__ import annotations

import math

import numpy as np

from splidar.core import DepthMap, EvaluationError, UsageError

PSNR_CAP = 200.0  # dB reported for identical maps


def _field(dm: DepthMap, quantity: str) -> np.ndarray:
    if quantity == "depth":
        return dm.depth
    if quantity == "intensity":
        return dm.intensity
    raise UsageError(f"unknown quantity {quantity!r}")


def _joint(estimate: DepthMap, reference: DepthMap) -> np.ndarray:
    if estimate.shape != reference.shape:
        raise UsageError(f"map shapes differ: {estimate.shape} vs {reference.shape}")
    mask = estimate.valid & reference.valid
    if not mask.any():
        raise EvaluationError("no pixel is valid in both maps")
    return mask


def mse(estimate: DepthMap, reference: DepthMap, quantity: str = "depth") -> float:
    mask = _joint(estimate, reference)
    diff = _field(estimate, quantity)[mask] - _field(reference, quantity)[mask]
    return float(np.mean(diff**2))


def psnr(estimate: DepthMap, reference: DepthMap, peak: float, quantity: str = "depth") -> float:
    """``10 log10(peak^2 / MSE)`` over pixels valid in both maps, capped at 200 dB."""
    if not peak > 0:
        raise UsageError(f"peak must be positive, got {peak}")
    err = mse(estimate, reference, quantity)
    if err == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak**2 / err))


def depth_rmse(estimate: DepthMap, reference: DepthMap) -> float:
    return math.sqrt(mse(estimate, reference, "depth"))


def bar_contrast(
    depthmap: DepthMap, period: int, depth_range: float, orientation: str = "vertical"
) -> float:
    """Modulation of a bar grating recovered in a depth map, in [0, 1].

    The map is averaged along the bars, the profile across them is fitted
    with ``m + a cos(2 pi u / period) + b sin(2 pi u / period)``, and the
    result is ``2 sqrt(a^2 + b^2) / depth_range`` clipped to [0, 1]. Invalid
    pixels are skipped; a full-modulation square wave scores 1.
    """
    if orientation not in ("vertical", "horizontal"):
        raise UsageError(f"orientation must be 'vertical' or 'horizontal', got {orientation!r}")
    if period < 2:
        raise UsageError("bar period must be at least 2 pixels to carry a modulation")
    if not depth_range > 0:
        raise UsageError("depth_range must be positive")
    depth = np.where(depthmap.valid, depthmap.depth, 0.0)
    valid = depthmap.valid
    if orientation == "horizontal":
        depth, valid = depth.T, valid.T
    n = depth.shape[1]
    if n % period or n < 2 * period:
        raise UsageError(f"map extent {n} across the bars is not a multiple of period {period} (>= 2 periods)")
    counts = valid.sum(axis=0)
    used = counts > 0
    if used.sum() < 3:
        raise EvaluationError("too few columns with valid pixels to fit the grating")
    profile = depth.sum(axis=0)[used] / counts[used]
    u = np.arange(n)[used]
    phase = 2.0 * np.pi * u / period
    columns = [np.ones_like(phase), np.cos(phase)]
    if period > 2:  # the sine term vanishes at the Nyquist period
        columns.append(np.sin(phase))
    coef, *_ = np.linalg.lstsq(np.column_stack(columns), profile, rcond=None)
    amplitude = math.hypot(*coef[1:])
    return float(min(1.0, 2.0 * amplitude / depth_range))
