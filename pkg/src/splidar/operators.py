"""Zero-padded spatio-temporal convolution ``h * x`` and its exact adjoint.

The time axis of a cube may be a concatenation of disjoint gate intervals
(see :func:`splidar.gate.crop_cube`). Each run of consecutive original bin
indices is a *segment* and the temporal kernel never crosses a segment
boundary, so a cropped cube behaves as if the discarded bins were zero.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from splidar.core import KernelSet, UsageError


def segments(bin_index: np.ndarray | None, nt: int) -> list[tuple[int, int]]:
    """Half-open runs ``[a, b)`` of stored bins whose original indices are consecutive."""
    if bin_index is None or nt == 0:
        return [(0, nt)] if nt else []
    breaks = np.flatnonzero(np.diff(bin_index) != 1) + 1
    edges = np.concatenate(([0], breaks, [nt]))
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def segment_ids(bin_index: np.ndarray | None, nt: int) -> np.ndarray:
    ids = np.zeros(nt, dtype=np.int64)
    for n, (a, b) in enumerate(segments(bin_index, nt)):
        ids[a:b] = n
    return ids


def _separable_factors(spatial: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
    col = spatial.sum(axis=1)
    row = spatial.sum(axis=0)
    if np.allclose(np.outer(col, row), spatial, rtol=0, atol=1e-15):
        return col, row
    return None


class ConvolutionOperator:
    """Linear map ``x -> h_xy * h_t * x`` on cubes indexed ``[y, x, k]``."""

    def __init__(self, kernels: KernelSet, bin_index: np.ndarray | None = None, nt: int | None = None):
        self.kernels = kernels
        self.spatial = np.asarray(kernels.spatial, dtype=float)
        self.temporal = np.asarray(kernels.temporal, dtype=float)
        self._factors = _separable_factors(self.spatial)
        self.separable = self._factors is not None
        if bin_index is not None:
            nt = len(bin_index) if nt is None else nt
            if len(bin_index) != nt:
                raise UsageError("bin_index length does not match nt")
        self.nt = nt
        self.bin_index = bin_index
        self._segments = None if nt is None else segments(bin_index, nt)

    def _segments_for(self, nt: int) -> list[tuple[int, int]]:
        if self._segments is None:
            return [(0, nt)]
        if nt != self.nt:
            raise UsageError(f"cube has {nt} time bins, operator was built for {self.nt}")
        return self._segments

    def _temporal(self, x: np.ndarray, adjoint: bool) -> np.ndarray:
        if len(self.temporal) == 1:
            return x * self.temporal[0]
        fn = ndimage.correlate1d if adjoint else ndimage.convolve1d
        out = np.empty_like(x)
        for a, b in self._segments_for(x.shape[2]):
            out[:, :, a:b] = fn(x[:, :, a:b], self.temporal, axis=2, mode="constant", cval=0.0)
        return out

    def _spatial(self, x: np.ndarray, adjoint: bool) -> np.ndarray:
        if self.spatial.size == 1:
            return x * self.spatial[0, 0]
        if self._factors is not None:
            fn = ndimage.correlate1d if adjoint else ndimage.convolve1d
            col, row = self._factors
            x = fn(x, col, axis=0, mode="constant", cval=0.0)
            return fn(x, row, axis=1, mode="constant", cval=0.0)
        fn = ndimage.correlate if adjoint else ndimage.convolve
        return fn(x, self.spatial[:, :, None], mode="constant", cval=0.0)

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self._spatial(self._temporal(x, adjoint=False), adjoint=False)

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return self._temporal(self._spatial(y, adjoint=True), adjoint=True)

    __call__ = forward
