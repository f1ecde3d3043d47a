import math

import numpy as np
import pytest
from scipy import stats

from splidar.baseline import argmax_smallest, pixelwise_ml, shift_scores
from splidar.core import BackgroundModel, DataCube, GateMask, KernelSet, UsageError, bin_to_depth, depth_to_bin
from splidar.simulate import SimConfig, build_temporal_kernel, forward_rates, make_test_scene

BW = 250e-12
PULSE = build_temporal_kernel(500e-12, BW)


def test_shifted_kernel_peaks_at_its_bin():
    nt, k = 40, 17
    c = len(PULSE) // 2
    counts = np.zeros((1, 1, nt), dtype=np.int64)
    counts[0, 0, k - c : k + c + 1] = np.round(1000 * PULSE).astype(np.int64)
    dm = pixelwise_ml(DataCube(counts, BW), PULSE)
    assert dm.depth[0, 0] == bin_to_depth(k, BW)


def test_zero_pixel_invalid():
    counts = np.zeros((2, 1, 20), dtype=np.int64)
    counts[1, 0, 5] = 3
    dm = pixelwise_ml(DataCube(counts, BW), PULSE)
    assert dm.valid.tolist() == [[False], [True]]
    assert np.isnan(dm.depth[0, 0])


def test_noise_free_staircase_exact_with_delta_psf():
    cfg = SimConfig(signal_ppp=20.0, snr=1.0, nt=256)
    scene = make_test_scene("staircase", 16, 8, 2.0, steps=5)
    kernels = KernelSet(np.ones((1, 1)), PULSE)
    rates = forward_rates(scene, kernels, BackgroundModel(np.zeros((8, 16))), cfg)
    dm = pixelwise_ml(DataCube(np.round(rates * 50).astype(np.int64), BW), PULSE)
    expected = bin_to_depth(depth_to_bin(scene.depth, BW), BW)
    np.testing.assert_array_equal(dm.depth, expected)


def test_pixels_are_independent(rng):
    counts = rng.poisson(0.4, (5, 6, 30))
    counts[:, :, 12:15] += rng.poisson(3.0, (5, 6, 3))
    bg = BackgroundModel(rng.uniform(0.1, 0.5, (5, 6)))
    base = pixelwise_ml(DataCube(counts, BW), PULSE, background=bg)
    perm = rng.permutation(30)
    flat = counts.reshape(30, 30)[perm].reshape(5, 6, 30)
    rate = bg.per_pixel_rate.reshape(30)[perm].reshape(5, 6)
    moved = pixelwise_ml(DataCube(flat, BW), PULSE, background=BackgroundModel(rate))
    np.testing.assert_array_equal(moved.depth.reshape(30), base.depth.reshape(30)[perm])


def _brute_force_shift(hist, kernel, b, a, gate):
    """Exact Poisson log-likelihood of each in-gate shift, loop by loop."""
    nt = len(hist)
    c = len(kernel) // 2
    lls = []
    for s in range(nt):
        if not gate[s]:
            lls.append(-math.inf)
            continue
        ll = 0.0
        for k in range(nt):
            if not gate[k]:
                continue
            j = k - s + c
            h = kernel[j] if 0 <= j < len(kernel) else 0.0
            lam = b + a * h
            ll += stats.poisson.logpmf(hist[k], lam)
        lls.append(ll)
    return np.array(lls)


@pytest.mark.parametrize("seed", range(12))
def test_agrees_with_brute_force_likelihood(seed):
    rng = np.random.default_rng(seed)
    nt = 24
    kernel = build_temporal_kernel(rng.uniform(300e-12, 900e-12), BW)
    b = float(rng.uniform(0.05, 0.6))
    gate = np.zeros(nt, bool)
    gate[4:20] = True
    rate = np.full(nt, b)
    true = int(rng.integers(6, 18))
    c = len(kernel) // 2
    rate[true - c : true + c + 1] += 10.0 * kernel
    hist = rng.poisson(rate)
    n_in = gate.sum()
    a = max(hist[gate].sum() - b * n_in, 0.0)
    if a == 0:
        pytest.skip("no signal left after background subtraction")
    lls = _brute_force_shift(hist, kernel, b, a, gate)
    scores = shift_scores(hist[None, None, :], kernel, gate, None, np.array([[b]]), np.array([[a]]))[0, 0]
    # scores differ from the log-likelihood by a constant
    diff = (scores - lls)[gate]
    np.testing.assert_allclose(diff, diff[0], atol=1e-9)
    best = int(argmax_smallest(scores, gate))
    winners = np.flatnonzero(lls >= lls.max() - 1e-9 * max(1.0, abs(lls.max())))
    assert best == winners[0]


def test_zero_background_uses_correlation():
    hist = np.zeros(20)
    hist[[8, 9, 10]] = [1, 4, 1]
    gate = np.ones(20, bool)
    scores = shift_scores(hist[None, None, :], PULSE, gate)[0, 0]
    corr = np.correlate(hist, PULSE, mode="same")
    np.testing.assert_allclose(scores, corr, atol=1e-12)


def test_ties_take_smallest_index():
    assert int(argmax_smallest(np.array([1.0, 3.0, 3.0, 2.0]), np.ones(4, bool))) == 1
    assert int(argmax_smallest(np.array([5.0, 3.0, 3.0]), np.array([False, True, True]))) == 1


def test_gated_search_and_shape_errors(rng):
    counts = rng.poisson(0.5, (3, 3, 60))
    counts[:, :, 50] += 20
    gates = GateMask(((10, 20),), 60)
    dm = pixelwise_ml(DataCube(counts, BW), PULSE, gates)
    bins = depth_to_bin(dm.depth[dm.valid], BW)
    assert np.all((bins >= 10) & (bins < 20))
    with pytest.raises(UsageError):
        pixelwise_ml(DataCube(counts, BW), PULSE, GateMask(((0, 5),), 30))
    with pytest.raises(UsageError):
        pixelwise_ml(DataCube(counts, BW), PULSE, background=BackgroundModel(np.zeros((2, 2))))


def test_intensity_background_subtraction():
    counts = np.full((1, 1, 10), 2, dtype=np.int64)
    bg = BackgroundModel(np.full((1, 1), 1.5))
    sub = pixelwise_ml(DataCube(counts, BW), PULSE, background=bg)
    raw = pixelwise_ml(DataCube(counts, BW), PULSE, background=bg, subtract_background=False)
    assert sub.intensity[0, 0] == pytest.approx(5.0)
    assert raw.intensity[0, 0] == 20.0
