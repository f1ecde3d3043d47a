"""3D Poisson deconvolution with a transverse total-variation penalty.

Minimizes

    Phi(RD) = sum(L - S log L) + beta * TV_xy(RD),    L = h * RD + B,  RD >= 0

with a SPIRAL-TAP style proximal gradient method: Barzilai-Borwein curvature
estimates, a TV-denoising subproblem per step and a sufficient-decrease
backtracking test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from splidar.core import (
    BackgroundModel,
    DataCube,
    DepthMap,
    DomainError,
    KernelSet,
    NumericalError,
    ReconCube,
    UsageError,
    fractional_bin_to_depth,
)
from splidar._tv import tv_cols, tv_rows
from splidar.operators import ConvolutionOperator, segments

RATE_FLOOR = 1e-12
MAX_BACKTRACKS = 50
DR_GAMMA = 0.5  # Douglas-Rachford step, relative to the unit-strength quadratic
DR_RELAX = 1.8


@dataclass(frozen=True)
class SolverConfig:
    beta_tv: float = 1.0
    auto_beta: bool = False
    max_iters: int = 100
    rel_tol: float = 1e-6
    bb_bounds: tuple[float, float] = (1e-30, 1e30)
    alpha_init: float = 1.0
    backtrack_eta: float = 2.0
    backtrack_accept: float = 0.1
    tv_inner_iters: int = 20
    intensity_floor: float = 0.1
    depth_mode: str = "centroid"  # or "gated": centroid of the strongest gate only

    def __post_init__(self):
        lo, hi = self.bb_bounds
        if not 0 < lo < hi:
            raise UsageError(f"bb_bounds must satisfy 0 < min < max, got {self.bb_bounds}")
        if self.beta_tv < 0:
            raise UsageError("beta_tv must be nonnegative")
        if self.max_iters < 1 or self.tv_inner_iters < 1:
            raise UsageError("iteration counts must be positive")
        if not (self.rel_tol > 0 and self.backtrack_eta > 1 and self.backtrack_accept > 0):
            raise UsageError("rel_tol, backtrack_accept must be positive and backtrack_eta > 1")
        if self.intensity_floor < 0:
            raise UsageError("intensity_floor must be nonnegative")
        if self.depth_mode not in ("centroid", "gated"):
            raise UsageError(f"unknown depth_mode {self.depth_mode!r}")

    def beta_for(self, counts: np.ndarray) -> float:
        """Penalty weight; with ``auto_beta`` it is a tenth of the mean count per voxel (heuristic)."""
        if self.auto_beta:
            return 0.1 * float(np.mean(counts)) if counts.size else 0.0
        return self.beta_tv


def _values(rd) -> np.ndarray:
    return np.asarray(rd.values if isinstance(rd, ReconCube) else rd, dtype=float)


def _setup(rd, data: DataCube, kernels: KernelSet, bg: BackgroundModel):
    x = _values(rd)
    if x.shape != data.counts.shape:
        raise UsageError(f"reconstruction shape {x.shape} does not match data {data.counts.shape}")
    if bg.per_pixel_rate.shape != x.shape[:2]:
        raise UsageError("background shape does not match the cube")
    if np.any(x < 0):
        raise DomainError("reconstruction has negative entries")
    op = ConvolutionOperator(kernels, data.bin_index, data.nt)
    return x, op, bg.per_pixel_rate[:, :, None]


def nll(rd, data: DataCube, kernels: KernelSet, bg: BackgroundModel) -> float:
    """Poisson negative log-likelihood without the ``log S!`` constant.

    The rate inside the logarithm is clamped at 1e-12.
    """
    x, op, b = _setup(rd, data, kernels, bg)
    return _nll(op.forward(x) + b, data.counts)


def _nll(lam: np.ndarray, counts: np.ndarray) -> float:
    return float(np.sum(lam - counts * np.log(np.maximum(lam, RATE_FLOOR))))


def nll_gradient(rd, data: DataCube, kernels: KernelSet, bg: BackgroundModel) -> np.ndarray:
    """``h~ * (1 - S / L)`` with ``h~`` the adjoint (reflected) kernel."""
    x, op, b = _setup(rd, data, kernels, bg)
    lam = op.forward(x) + b
    return op.adjoint(1.0 - data.counts / np.maximum(lam, RATE_FLOOR))


# ---------------------------------------------------------------------------
# transverse total variation


def tv_penalty(rd) -> float:
    """Anisotropic TV over the two spatial axes, summed over time slices."""
    x = _values(rd)
    if x.ndim == 2:
        x = x[:, :, None]
    return float(np.abs(np.diff(x, axis=0)).sum() + np.abs(np.diff(x, axis=1)).sum())


def _tv_slices(x: np.ndarray) -> np.ndarray:
    return np.abs(np.diff(x, axis=0)).sum(axis=(0, 1)) + np.abs(np.diff(x, axis=1)).sum(axis=(0, 1))


def prox_objective(x: np.ndarray, v: np.ndarray, weight: float) -> np.ndarray:
    """Per-slice value of ``0.5 ||x - v||^2 + weight TV_xy(x)``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    if x.ndim == 2:
        x, v = x[:, :, None], v[:, :, None]
    return 0.5 * ((x - v) ** 2).sum(axis=(0, 1)) + weight * _tv_slices(x)


def tv_prox(v: np.ndarray, weight: float, inner_iters: int = 20) -> np.ndarray:
    """Nonnegative anisotropic-TV denoising of every time slice.

    Approximates ``argmin_{x >= 0} 0.5 ||x - v||^2 + weight TV_xy(x)`` with
    ``inner_iters`` relaxed Douglas-Rachford steps that split TV into its row
    and column parts, each solved exactly in 1D. For graph TV the
    nonnegative prox is the clipped unconstrained prox, so clipping comes
    last. A slice whose result is worse than ``max(v, 0)`` falls back to it.
    """
    v = np.asarray(v, dtype=float)
    squeeze = v.ndim == 2
    if squeeze:
        v = v[:, :, None]
    if weight < 0:
        raise DomainError("prox weight must be nonnegative")
    x0 = np.maximum(v, 0.0)
    if weight == 0 or v.shape[0] * v.shape[1] < 2:
        out = x0
    else:
        v = np.ascontiguousarray(v)
        g, c = DR_GAMMA, DR_GAMMA / (1.0 + DR_GAMMA)
        z = v.copy()
        a = np.empty_like(v)
        b = np.empty_like(v)
        for _ in range(inner_iters):
            tv_rows((z + g * v) / (1.0 + g), weight * c, a)
            tv_cols(2.0 * a - z, weight * g, b)
            z += DR_RELAX * (b - a)
        tv_rows((z + g * v) / (1.0 + g), weight * c, a)
        out = np.maximum(a, 0.0)
        worse = prox_objective(out, v, weight) > prox_objective(x0, v, weight)
        if np.any(worse):
            out[:, :, worse] = x0[:, :, worse]
    return out[:, :, 0] if squeeze else out


# ---------------------------------------------------------------------------
# SPIRAL-TAP


@dataclass
class IterationRecord:
    iteration: int
    phi: float
    alpha: float
    backtracks: int


@dataclass
class SpiralResult:
    recon: ReconCube
    trace: list[IterationRecord] = field(default_factory=list)
    converged: bool = False
    stalled: bool = False
    beta: float = 0.0

    @property
    def phi(self) -> np.ndarray:
        return np.array([r.phi for r in self.trace])


def spiral_tap(
    data: DataCube,
    kernels: KernelSet,
    bg: BackgroundModel,
    cfg: SolverConfig | None = None,
    callback=None,
) -> SpiralResult:
    """Minimize Poisson NLL + beta TV_xy over the nonnegative 3D cube.

    ``trace[0]`` is the objective at the initial point; each later record is
    an accepted step. ``callback(iteration, x)`` is called after every
    accepted step when given.
    """
    cfg = cfg or SolverConfig()
    counts = data.counts.astype(float)
    if bg.per_pixel_rate.shape != counts.shape[:2]:
        raise UsageError("background shape does not match the cube")
    op = ConvolutionOperator(kernels, data.bin_index, data.nt)
    b = bg.per_pixel_rate[:, :, None]
    beta = cfg.beta_for(counts)
    lo, hi = cfg.bb_bounds

    def objective(x):
        lam = op.forward(x) + b
        return _nll(lam, counts) + beta * tv_penalty(x), lam

    def gradient(lam):
        return op.adjoint(1.0 - counts / np.maximum(lam, RATE_FLOOR))

    x = np.maximum(op.adjoint(counts - b), 0.0)
    phi, lam = objective(x)
    if not math.isfinite(phi):
        raise NumericalError("objective is not finite at the initial point (iteration 0)")
    grad = gradient(lam)
    alpha = min(max(cfg.alpha_init, lo), hi)
    result = SpiralResult(ReconCube.like(data, x), [IterationRecord(0, phi, float("nan"), 0)], beta=beta)

    for it in range(1, cfg.max_iters + 1):
        backtracks = 0
        while True:
            cand = tv_prox(x - grad / alpha, beta / alpha, cfg.tv_inner_iters)
            phi_c, lam_c = objective(cand)
            if not math.isfinite(phi_c):
                raise NumericalError(f"objective became non-finite at iteration {it}")
            step = cand - x
            if phi_c <= phi - 0.5 * cfg.backtrack_accept * alpha * float(np.vdot(step, step)):
                break
            backtracks += 1
            if backtracks > MAX_BACKTRACKS:
                result.stalled = True
                result.recon = ReconCube.like(data, x)
                return result
            alpha = min(alpha * cfg.backtrack_eta, hi)

        grad_c = gradient(lam_c)
        ss = float(np.vdot(step, step))
        sy = float(np.vdot(step, grad_c - grad))
        delta = phi - phi_c
        x, phi, lam, grad = cand, phi_c, lam_c, grad_c
        result.trace.append(IterationRecord(it, phi, alpha, backtracks))
        if callback is not None:
            callback(it, x)
        if abs(delta) <= cfg.rel_tol * abs(phi) or ss == 0.0:
            result.converged = True
            break
        # nonpositive curvature (flat likelihood directions): keep the last step size
        if sy > 0:
            alpha = min(max(sy / ss, lo), hi)

    result.recon = ReconCube.like(data, x)
    return result


# ---------------------------------------------------------------------------
# depth and reflectivity maps


def extract_depth_reflectivity(
    rd,
    cfg: SolverConfig | None = None,
    bin_index: np.ndarray | None = None,
    *,
    bin_width: float | None = None,
    t0: float | None = None,
) -> DepthMap:
    """Per-pixel intensity (sum over time) and depth from the mean arrival time.

    Bin positions are mapped back through ``bin_index`` so a cropped cube
    yields depths on the original time axis. With ``cfg.depth_mode ==
    "gated"`` the centroid is taken only over the contiguous gate segment
    holding most of the pixel's mass.
    """
    cfg = cfg or SolverConfig()
    x = _values(rd)
    if np.any(x < 0):
        raise DomainError("reconstruction has negative entries")
    if isinstance(rd, ReconCube):
        bin_index = rd.bin_index if bin_index is None else bin_index
        bin_width = rd.bin_width if bin_width is None else bin_width
        t0 = rd.t0 if t0 is None else t0
    if bin_width is None:
        raise UsageError("bin_width is required when rd is a plain array")
    t0 = 0.0 if t0 is None else t0
    nt = x.shape[2]
    idx = np.arange(nt, dtype=float) if bin_index is None else np.asarray(bin_index, dtype=float)

    intensity = x.sum(axis=2)
    if cfg.depth_mode == "gated":
        segs = segments(None if bin_index is None else np.asarray(bin_index), nt)
        masses = np.stack([x[:, :, a:b].sum(axis=2) for a, b in segs], axis=-1)
        best = np.argmax(masses, axis=-1)
        weighted = np.zeros_like(intensity)
        mass = np.zeros_like(intensity)
        for n, (a, b) in enumerate(segs):
            sel = best == n
            weighted[sel] = (x[:, :, a:b] * idx[a:b]).sum(axis=2)[sel]
            mass[sel] = masses[:, :, n][sel]
    else:
        weighted = (x * idx).sum(axis=2)
        mass = intensity
    valid = intensity > cfg.intensity_floor
    with np.errstate(invalid="ignore", divide="ignore"):
        centroid = np.where(valid & (mass > 0), weighted / np.where(mass > 0, mass, 1.0), np.nan)
    valid &= np.isfinite(centroid)
    depth = np.where(valid, fractional_bin_to_depth(np.nan_to_num(centroid), bin_width, t0), np.nan)
    return DepthMap(depth, intensity, valid)
