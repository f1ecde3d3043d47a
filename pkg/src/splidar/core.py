"""Domain types, time/depth conversion and the exception hierarchy.

Array layout used throughout the package:

* 2D grids are ``(height, width)``, i.e. indexed ``[y, x]``.
* Cubes are ``(height, width, nt)``, i.e. indexed ``[y, x, k]`` with ``k`` the
  time bin.

All containers validate on construction and freeze their arrays, so they can
be shared freely between workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s, exact


class SplidarError(Exception):
    """Base class for all package errors."""


class DomainError(SplidarError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class RangeError(SplidarError, IndexError):
    """A bin index or depth falls outside the time axis."""


class UsageError(SplidarError, ValueError):
    """Invalid combination of arguments or configuration."""


class EvaluationError(SplidarError, ValueError):
    """A metric cannot be evaluated (for example an empty pixel mask)."""


class NumericalError(SplidarError, ArithmeticError):
    """An iterative method produced a non-finite value."""


class FormatError(SplidarError, ValueError):
    """Malformed file contents; ``offset`` is the byte offset of the problem."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


def _frozen(a, dtype=None) -> np.ndarray:
    out = np.array(a, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# time <-> depth


def bin_to_depth(k, bin_width: float, t0: float = 0.0, nt: int | None = None):
    """One-way depth (m) of the centre of time bin ``k``.

    ``k`` may be an integer or an integer array. When ``nt`` is given, indices
    outside ``[0, nt)`` raise :class:`RangeError`.
    """
    if bin_width <= 0:
        raise DomainError(f"bin_width must be positive, got {bin_width}")
    k_arr = np.asarray(k)
    if np.any(k_arr < 0) or (nt is not None and np.any(k_arr >= nt)):
        raise RangeError(f"bin index {k} outside [0, {nt if nt is not None else 'inf'})")
    depth = SPEED_OF_LIGHT * (t0 + (k_arr + 0.5) * bin_width) / 2.0
    return float(depth) if depth.ndim == 0 else depth


def fractional_bin_to_depth(k, bin_width: float, t0: float = 0.0):
    """Like :func:`bin_to_depth` but accepts fractional bin positions without range checks."""
    return SPEED_OF_LIGHT * (t0 + (np.asarray(k, dtype=float) + 0.5) * bin_width) / 2.0


def depth_to_bin(d, bin_width: float, t0: float = 0.0, nt: int | None = None):
    """Nearest time bin for one-way depth ``d`` (m)."""
    if bin_width <= 0:
        raise DomainError(f"bin_width must be positive, got {bin_width}")
    d_arr = np.asarray(d, dtype=float)
    if np.any(~np.isfinite(d_arr)) or np.any(d_arr < 0):
        raise RangeError(f"depth {d} is negative or not finite")
    k = np.floor((2.0 * d_arr / SPEED_OF_LIGHT - t0) / bin_width).astype(np.int64)
    if np.any(k < 0) or (nt is not None and np.any(k >= nt)):
        raise RangeError(f"depth {d} maps outside the time axis [0, {nt})")
    return int(k) if k.ndim == 0 else k


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True, eq=False)
class SceneMap:
    """Ground-truth reflectivity (signal photons per pixel) and depth (m)."""

    reflectivity: np.ndarray
    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        refl = _frozen(self.reflectivity, float)
        depth = _frozen(self.depth, float)
        valid = _frozen(self.valid, bool)
        if refl.ndim != 2 or depth.shape != refl.shape or valid.shape != refl.shape:
            raise UsageError(
                f"scene grids must share one 2D shape, got {refl.shape}, {depth.shape}, {valid.shape}"
            )
        if np.any(~np.isfinite(refl)) or np.any(refl < 0):
            raise DomainError("reflectivity must be finite and nonnegative")
        if np.any(~np.isfinite(depth[valid])):
            raise DomainError("depth must be finite wherever valid is set")
        object.__setattr__(self, "reflectivity", refl)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @property
    def height(self) -> int:
        return self.reflectivity.shape[0]

    @property
    def width(self) -> int:
        return self.reflectivity.shape[1]


def _check_bin_index(bin_index, nt: int) -> np.ndarray:
    if bin_index is None:
        return _frozen(np.arange(nt, dtype=np.int64))
    idx = _frozen(bin_index, np.int64)
    if idx.shape != (nt,):
        raise UsageError(f"bin_index must have length {nt}, got shape {idx.shape}")
    if nt and (idx[0] < 0 or np.any(np.diff(idx) <= 0)):
        raise UsageError("bin_index must be nonnegative and strictly increasing")
    return idx


@dataclass(frozen=True, eq=False)
class DataCube:
    """Photon-count histogram cube ``counts[y, x, k]``.

    ``bin_index`` maps each stored bin to its index on the original
    (uncropped) time axis; it is ``arange(nt)`` for uncropped cubes.
    """

    counts: np.ndarray
    bin_width: float
    t0: float = 0.0
    bin_index: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 3:
            raise UsageError(f"counts must be 3D (ny, nx, nt), got shape {counts.shape}")
        if counts.size and (np.any(counts < 0) or not np.all(np.equal(np.mod(counts, 1), 0))):
            raise DomainError("counts must be nonnegative integers")
        if not self.bin_width > 0:
            raise DomainError(f"bin_width must be positive, got {self.bin_width}")
        object.__setattr__(self, "counts", _frozen(counts, np.int64))
        object.__setattr__(self, "bin_width", float(self.bin_width))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "bin_index", _check_bin_index(self.bin_index, counts.shape[2]))

    @property
    def ny(self) -> int:
        return self.counts.shape[0]

    @property
    def nx(self) -> int:
        return self.counts.shape[1]

    @property
    def nt(self) -> int:
        return self.counts.shape[2]

    @property
    def is_cropped(self) -> bool:
        return not np.array_equal(self.bin_index, np.arange(self.nt))


@dataclass(frozen=True, eq=False)
class KernelSet:
    """Normalized spatial PSF ``spatial[dy, dx]`` and temporal pulse shape."""

    spatial: np.ndarray
    temporal: np.ndarray

    def __post_init__(self):
        sp = _frozen(self.spatial, float)
        tm = _frozen(self.temporal, float)
        if sp.ndim != 2 or tm.ndim != 1:
            raise UsageError("spatial kernel must be 2D and temporal kernel 1D")
        if any(n % 2 == 0 for n in sp.shape + tm.shape):
            raise UsageError(f"kernel side lengths must be odd, got {sp.shape} and {tm.shape}")
        for name, k in (("spatial", sp), ("temporal", tm)):
            if np.any(~np.isfinite(k)) or np.any(k < 0):
                raise DomainError(f"{name} kernel must be finite and nonnegative")
            if abs(k.sum() - 1.0) > 1e-12:
                raise DomainError(f"{name} kernel sums to {k.sum():.15g}, expected 1")
        object.__setattr__(self, "spatial", sp)
        object.__setattr__(self, "temporal", tm)

    @property
    def spatial_center(self) -> tuple[int, int]:
        return self.spatial.shape[0] // 2, self.spatial.shape[1] // 2

    @property
    def temporal_center(self) -> int:
        return len(self.temporal) // 2


@dataclass(frozen=True, eq=False)
class ReconCube:
    """Nonnegative reflectivity-depth estimate on the same grid as a :class:`DataCube`."""

    values: np.ndarray
    bin_width: float
    t0: float = 0.0
    bin_index: np.ndarray | None = None

    def __post_init__(self):
        values = _frozen(self.values, float)
        if values.ndim != 3:
            raise UsageError(f"values must be 3D, got shape {values.shape}")
        if np.any(~(values >= 0)):
            raise DomainError("reconstruction values must be nonnegative")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bin_width", float(self.bin_width))
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "bin_index", _check_bin_index(self.bin_index, values.shape[2]))

    @classmethod
    def like(cls, cube: DataCube, values) -> ReconCube:
        return cls(values, cube.bin_width, cube.t0, cube.bin_index)


@dataclass(frozen=True, eq=False)
class BackgroundModel:
    """Expected background counts per time bin for every pixel.

    ``note`` carries a diagnostic when the estimate had to fall back to a
    global value.
    """

    per_pixel_rate: np.ndarray
    note: str | None = field(default=None, compare=False)

    def __post_init__(self):
        rate = _frozen(self.per_pixel_rate, float)
        if rate.ndim != 2:
            raise UsageError(f"per_pixel_rate must be 2D, got shape {rate.shape}")
        if np.any(~np.isfinite(rate)) or np.any(rate < 0):
            raise DomainError("background rate must be finite and nonnegative")
        object.__setattr__(self, "per_pixel_rate", rate)

    @classmethod
    def constant(cls, rate: float, shape: tuple[int, int]) -> BackgroundModel:
        return cls(np.full(shape, float(rate)))

    def cube(self, nt: int) -> np.ndarray:
        """Dense background cube, constant along time."""
        return np.broadcast_to(self.per_pixel_rate[:, :, None], self.per_pixel_rate.shape + (nt,))


@dataclass(frozen=True)
class GateMask:
    """Sorted, disjoint, nonempty half-open bin intervals ``[start, end)`` within ``[0, nt)``."""

    intervals: tuple[tuple[int, int], ...]
    nt: int

    def __post_init__(self):
        ivs = tuple((int(a), int(b)) for a, b in self.intervals)
        prev_end = 0
        for a, b in ivs:
            if not (0 <= a < b <= self.nt):
                raise UsageError(f"gate interval [{a}, {b}) is empty or outside [0, {self.nt})")
            if a < prev_end:
                raise UsageError("gate intervals must be sorted and disjoint")
            prev_end = b
        object.__setattr__(self, "intervals", ivs)

    def __len__(self) -> int:
        return len(self.intervals)

    def __bool__(self) -> bool:
        return bool(self.intervals)

    def bins(self) -> np.ndarray:
        """All in-gate bin indices, ascending."""
        if not self.intervals:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.arange(a, b) for a, b in self.intervals])

    def as_bool(self) -> np.ndarray:
        mask = np.zeros(self.nt, dtype=bool)
        for a, b in self.intervals:
            mask[a:b] = True
        return mask


@dataclass(frozen=True, eq=False)
class DepthMap:
    """Per-pixel depth (m), intensity (photons) and validity."""

    depth: np.ndarray
    intensity: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.array(self.depth, dtype=float)
        intensity = _frozen(self.intensity, float)
        valid = _frozen(self.valid, bool)
        if depth.ndim != 2 or intensity.shape != depth.shape or valid.shape != depth.shape:
            raise UsageError("depth map grids must share one 2D shape")
        if np.any(~np.isfinite(depth[valid])):
            raise DomainError("depth must be finite where valid")
        if np.any(~(intensity >= 0)):
            raise DomainError("intensity must be nonnegative")
        depth[~valid] = np.nan
        depth.setflags(write=False)
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "intensity", intensity)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @classmethod
    def from_scene(cls, scene: SceneMap) -> DepthMap:
        return cls(scene.depth, scene.reflectivity, scene.valid)
