"""Synthetic scenes, kernels and the Poisson photon-count forward model.

The expected count in voxel ``(y, x, k)`` is the spatio-temporal convolution of
the reflectivity-depth cube with the PSF and pulse shape plus a per-pixel
background that is constant in time. Counts are independent Poisson draws.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from splidar.core import (
    BackgroundModel,
    DataCube,
    DomainError,
    KernelSet,
    RangeError,
    SceneMap,
    UsageError,
    depth_to_bin,
)
from splidar.operators import ConvolutionOperator

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
SNR_GATE = 200e-9  # s; SNR is quoted for a 200 ns window (30 m of depth)
RNG_ALGORITHM = "numpy.random.PCG64"


@dataclass(frozen=True)
class SimConfig:
    signal_ppp: float = 1.0
    snr: float = 0.03
    bin_width: float = 250e-12
    nt: int = 512
    pulse_fwhm: float = 500e-12
    psf_fwhm: float = 2.0
    seed: int = 0
    t0: float = 0.0

    def __post_init__(self):
        if not self.signal_ppp >= 0:
            raise DomainError(f"signal_ppp must be nonnegative, got {self.signal_ppp}")
        for name in ("snr", "bin_width", "pulse_fwhm", "psf_fwhm"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if int(self.nt) != self.nt or self.nt < 1:
            raise DomainError(f"nt must be a positive integer, got {self.nt}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError(f"seed must fit in an unsigned 64-bit integer, got {self.seed}")
        if self.nt < len(build_temporal_kernel(self.pulse_fwhm, self.bin_width)):
            raise UsageError("nt is shorter than the temporal kernel")

    @property
    def background_per_bin(self) -> float:
        """Background counts per bin per pixel implied by ``signal_ppp`` and ``snr``."""
        return self.signal_ppp / (self.snr * (SNR_GATE / self.bin_width))

    def kernels(self) -> KernelSet:
        return KernelSet(
            build_spatial_kernel(self.psf_fwhm),
            build_temporal_kernel(self.pulse_fwhm, self.bin_width),
        )


@dataclass(frozen=True)
class LinkBudget:
    power: float
    aperture_area: float
    system_efficiency: float
    background_rate: float
    algorithm_efficiency: float
    photon_energy: float
    range: float


def link_budget_snr(lb: LinkBudget) -> float:
    """Received-signal to background ratio ``P A eta_s / (R^2 h nu n)``.

    Only proportionality is meaningful; multiply by ``lb.algorithm_efficiency``
    for the operational-range figure of merit.
    """
    for name, value in vars(lb).items():
        if not value > 0:
            raise DomainError(f"link budget field {name} must be positive, got {value}")
    return lb.power * lb.aperture_area * lb.system_efficiency / (
        lb.range**2 * lb.photon_energy * lb.background_rate
    )


# ---------------------------------------------------------------------------
# kernels


def _gaussian_bins(sigma: float, width: float) -> np.ndarray:
    half = math.ceil(4.0 * sigma / width)
    edges = (np.arange(-half, half + 2) - 0.5) * width / sigma
    k = np.diff(ndtr(edges))
    k = 0.5 * (k + k[::-1])  # exact symmetry
    return k / k.sum()


def build_temporal_kernel(fwhm: float, bin_width: float) -> np.ndarray:
    """Gaussian pulse integrated over each time bin, truncated at +-4 sigma.

    Pulses narrower than a tenth of a bin collapse to a single-bin delta.
    """
    if not (fwhm > 0 and bin_width > 0):
        raise DomainError("fwhm and bin_width must be positive")
    if fwhm < bin_width / 10:
        warnings.warn(
            f"pulse FWHM {fwhm:g} s is below a tenth of the bin width; using a delta kernel",
            RuntimeWarning,
            stacklevel=2,
        )
        return np.ones(1)
    return _gaussian_bins(fwhm * FWHM_TO_SIGMA, bin_width)


def build_spatial_kernel(fwhm: float) -> np.ndarray:
    """Isotropic Gaussian PSF in pixel units, the outer product of 1D pixel-integrated profiles."""
    if not fwhm > 0:
        raise DomainError("fwhm must be positive")
    if fwhm < 0.1:
        return np.ones((1, 1))
    g = _gaussian_bins(fwhm * FWHM_TO_SIGMA, 1.0)
    k = np.outer(g, g)
    return k / k.sum()


def kernel_fwhm(kernel: np.ndarray) -> float:
    """FWHM of a 1D kernel in samples, from its second moment."""
    kernel = np.asarray(kernel, dtype=float)
    pos = np.arange(len(kernel))
    mean = (pos * kernel).sum() / kernel.sum()
    var = (((pos - mean) ** 2) * kernel).sum() / kernel.sum()
    return math.sqrt(var) / FWHM_TO_SIGMA


# ---------------------------------------------------------------------------
# forward model


def normalized_reflectivity(scene: SceneMap, signal_ppp: float) -> np.ndarray:
    """Reflectivity rescaled so its mean over valid pixels is ``signal_ppp``."""
    refl = np.where(scene.valid, scene.reflectivity, 0.0)
    mean = refl[scene.valid].mean() if scene.valid.any() else 0.0
    if mean == 0:
        return refl
    return refl * (signal_ppp / mean)


def truth_cube(scene: SceneMap, config: SimConfig) -> np.ndarray:
    """Reflectivity-depth cube: one nonzero bin per valid pixel."""
    rd = np.zeros((scene.height, scene.width, config.nt))
    refl = normalized_reflectivity(scene, config.signal_ppp)
    ys, xs = np.nonzero(scene.valid)
    for y, x in zip(ys, xs):
        try:
            k = depth_to_bin(scene.depth[y, x], config.bin_width, config.t0, config.nt)
        except RangeError as exc:
            raise RangeError(
                f"pixel (x={x}, y={y}) depth {scene.depth[y, x]:g} m lies outside the cube: {exc}"
            ) from None
        rd[y, x, k] = refl[y, x]
    return rd


def background_from_snr(config: SimConfig, shape: tuple[int, int]) -> BackgroundModel:
    return BackgroundModel.constant(config.background_per_bin, shape)


def forward_rates(
    scene: SceneMap,
    kernels: KernelSet,
    background: BackgroundModel,
    config: SimConfig,
) -> np.ndarray:
    """Expected photon counts ``h * RD + B`` for every voxel."""
    if background.per_pixel_rate.shape != scene.reflectivity.shape:
        raise UsageError(
            f"background shape {background.per_pixel_rate.shape} does not match scene "
            f"{scene.reflectivity.shape}"
        )
    rd = truth_cube(scene, config)
    rates = ConvolutionOperator(kernels).forward(rd)
    rates += background.per_pixel_rate[:, :, None]
    # convolution round-off can leave -1e-17 in empty voxels
    return np.maximum(rates, 0.0)


def sample_poisson(rates: np.ndarray, seed: int, bin_width: float, t0: float = 0.0) -> DataCube:
    """Independent Poisson draw per voxel with a PCG64 generator seeded by ``seed``."""
    rates = np.asarray(rates, dtype=float)
    if np.any(~np.isfinite(rates)) or np.any(rates < 0):
        raise DomainError("Poisson rates must be finite and nonnegative")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    counts = rng.poisson(rates)
    return DataCube(counts, bin_width, t0)


def simulate(scene: SceneMap, config: SimConfig, seed: int | None = None) -> DataCube:
    """Scene -> sampled photon cube using the kernels and background implied by ``config``."""
    rates = forward_rates(
        scene, config.kernels(), background_from_snr(config, scene.reflectivity.shape), config
    )
    return sample_poisson(rates, config.seed if seed is None else seed, config.bin_width, config.t0)


# ---------------------------------------------------------------------------
# test scenes

SCENE_KINDS = ("two_plane", "staircase", "bars", "mannequin_like")


def make_test_scene(
    kind: str,
    width: int,
    height: int,
    depth_range: float = 5.0,
    *,
    period: int = 2,
    steps: int = 4,
    base_depth: float = 3.0,
) -> SceneMap:
    """Deterministic synthetic targets.

    two_plane
        A far wall with a near facade whose 2-pixel windows expose the wall,
        so the PSF footprint regularly spans both depths.
    staircase
        ``steps`` depth levels increasing along x.
    bars
        Vertical grating along x: columns with ``x % period < period / 2``
        sit at ``base_depth``, the rest at ``base_depth + depth_range``.
    mannequin_like
        A smooth rounded figure (head and torso) in front of a wall.
    """
    if width < 8 or height < 8:
        raise UsageError("scene dimensions must be at least 8 pixels")
    yy, xx = np.mgrid[0:height, 0:width]
    near, far = base_depth, base_depth + depth_range
    valid = np.ones((height, width), dtype=bool)

    if kind == "two_plane":
        depth = np.full((height, width), far)
        refl = np.full((height, width), 0.6)
        y0, y1 = height // 4, height - height // 4
        x0, x1 = width // 4, width - width // 4
        facade = (yy >= y0) & (yy < y1) & (xx >= x0) & (xx < x1)
        windows = facade & ((yy - y0) % 6 >= 2) & ((yy - y0) % 6 < 4) & ((xx - x0) % 5 >= 2) & (
            (xx - x0) % 5 < 4
        )
        front = facade & ~windows
        depth[front] = near
        refl[front] = 1.0
    elif kind == "staircase":
        if not 1 <= steps <= width:
            raise UsageError(f"staircase needs 1 <= steps <= width, got {steps}")
        step = (xx * steps) // width
        depth = near + depth_range * step / max(steps - 1, 1)
        refl = np.ones((height, width))
    elif kind == "bars":
        if period < 1:
            raise UsageError(f"bar period must be at least 1, got {period}")
        bar = (xx % period) < period / 2
        depth = np.where(bar, near, far).astype(float)
        refl = np.ones((height, width))
    elif kind == "mannequin_like":
        cx = (width - 1) / 2
        head_r = min(width, height) / 8
        head_cy = height * 0.25
        dh = np.hypot(xx - cx, yy - head_cy) / head_r
        head = dh < 1
        torso_rx, torso_ry = width / 5, height * 0.3
        dt = np.hypot((xx - cx) / torso_rx, (yy - height * 0.65) / torso_ry)
        torso = (dt < 1) & ~head
        depth = np.full((height, width), far)
        refl = np.full((height, width), 0.5)
        bulge = 0.15 * depth_range
        depth[head] = near + bulge * dh[head] ** 2
        depth[torso] = near + bulge * dt[torso] ** 2
        refl[head | torso] = 1.0
    else:
        raise UsageError(f"unknown scene kind {kind!r}; expected one of {', '.join(SCENE_KINDS)}")
    return SceneMap(refl, depth, valid)
