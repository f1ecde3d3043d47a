"""Acceptance criteria 1-9, each at its stated tolerance.

Every test prints one ``criterion N: PASS|FAIL`` line (visible with ``-s``)
and the same lines are repeated in pytest's terminal summary. Run alone with
``python tests/test_acceptance.py``.
"""

import contextlib
import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from splidar import io
from splidar.cli import main
from splidar.core import DepthMap, KernelSet
from splidar.gate import find_signal_gates, global_histogram
from splidar.metrics import bar_contrast, psnr
from splidar.operators import ConvolutionOperator
from splidar.pipeline import reconstruct
from splidar.simulate import SimConfig, background_from_snr, forward_rates, make_test_scene, sample_poisson
from splidar.solver import SolverConfig, nll, nll_gradient, spiral_tap, tv_prox

import conftest
from conftest import direct_convolve, fgp_tv_prox, prox_value, random_problem

# Frozen once from an oracle run of pixelwise ML on the 64x64 bar scene
# (seeds 0-4, mean contrast 0.0629): the spiral reconstruction must reach
# three times that.
ML_BAR_CONTRAST_CALIBRATION = 0.0629
SPIRAL_BAR_CONTRAST_THRESHOLD = 3 * ML_BAR_CONTRAST_CALIBRATION

DESCENT_LOG: list[tuple[str, np.ndarray, bool]] = []


@contextlib.contextmanager
def criterion(n: int, title: str):
    detail = {}
    try:
        yield detail
    except BaseException as exc:
        line = f"criterion {n}: FAIL  {title}  {detail.get('msg', '')}  ({type(exc).__name__}: {exc})".rstrip()
        conftest.ACCEPTANCE_RESULTS[n] = line.splitlines()[0]
        print(conftest.ACCEPTANCE_RESULTS[n])
        raise
    line = f"criterion {n}: PASS  {title}  {detail.get('msg', '')}".rstrip()
    conftest.ACCEPTANCE_RESULTS[n] = line
    print(line)


def _tracked_reconstruct(label, cube, kernels):
    """Default spiral reconstruction, logging the trace and iterate signs for criterion 3."""
    nonneg = []
    rec = reconstruct(cube, kernels, callback=lambda it, x: nonneg.append(bool(np.all(x >= 0))))
    ok = all(nonneg) and bool(np.all(rec.spiral.recon.values >= 0))
    DESCENT_LOG.append((label, rec.spiral.phi, ok))
    return rec


# ---------------------------------------------------------------------------


def test_criterion_1_gradient_finite_differences():
    with criterion(1, "nll gradient vs central differences, 20 x 8x8x32, 1e-5 rel, < 60 s") as d:
        start = time.perf_counter()
        worst = 0.0
        for seed in range(20):
            rng = np.random.default_rng(1000 + seed)
            rd, data, kernels, bg = random_problem(rng, (8, 8, 32), separable=bool(seed % 2))
            grad = nll_gradient(rd, data, kernels, bg)
            x = rd.copy()
            for idx in np.ndindex(x.shape):
                h = 1e-6 * max(1.0, abs(x[idx]))
                x0 = x[idx]
                x[idx] = x0 + h
                up = nll(x, data, kernels, bg)
                x[idx] = x0 - h
                dn = nll(x, data, kernels, bg)
                x[idx] = x0
                fd = (up - dn) / (2 * h)
                worst = max(worst, abs(fd - grad[idx]) / max(abs(grad[idx]), 1.0))
        elapsed = time.perf_counter() - start
        d["msg"] = f"worst rel err {worst:.2e}, {elapsed:.1f} s"
        assert worst <= 1e-5
        assert elapsed < 60


def test_criterion_2_separable_matches_brute_force():
    with criterion(2, "separable convolution vs triple loop, 50 seeds, <= 1e-12 rel") as d:
        worst = 0.0
        for seed in range(50):
            rng = np.random.default_rng(2000 + seed)
            shape = (int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 33)))
            gy = rng.random(2 * int(rng.integers(0, 3)) + 1) + 0.05
            gx = rng.random(2 * int(rng.integers(0, 3)) + 1) + 0.05
            spatial = np.outer(gy, gx)
            spatial /= spatial.sum()
            temporal = rng.random(2 * int(rng.integers(0, 4)) + 1) + 0.05
            kernels = KernelSet(spatial, temporal / temporal.sum())
            op = ConvolutionOperator(kernels)
            assert op.separable
            x = rng.random(shape) * (rng.random(shape) < 0.6)
            ref = direct_convolve(x, kernels.spatial, kernels.temporal)
            got = op.forward(x)
            scale = max(float(np.abs(ref).max()), 1e-300)
            worst = max(worst, float(np.abs(got - ref).max()) / scale)
        d["msg"] = f"worst rel err {worst:.2e}"
        assert worst <= 1e-12


# criteria 5 and 6 run before 3 so their benchmark traces are checked too


def test_criterion_4_gating_recovery():
    with criterion(4, "gates hold >= 99% of signal mass in >= 19/20 seeds, < 10 s each") as d:
        cfg = SimConfig(signal_ppp=1.0, snr=0.03)
        scene = make_test_scene("two_plane", 64, 64)
        kernels = cfg.kernels()
        bg = background_from_snr(cfg, (64, 64))
        rates = forward_rates(scene, kernels, bg, cfg)
        signal_per_bin = (rates - bg.per_pixel_rate[:, :, None]).sum(axis=(0, 1))
        total = signal_per_bin.sum()
        fractions, slowest = [], 0.0
        for seed in range(20):
            start = time.perf_counter()
            cube = sample_poisson(rates, seed, cfg.bin_width)
            gates = find_signal_gates(global_histogram(cube), kernels.temporal)
            slowest = max(slowest, time.perf_counter() - start)
            fractions.append(float(signal_per_bin[gates.as_bool()].sum() / total))
        good = sum(f >= 0.99 for f in fractions)
        d["msg"] = f"{good}/20 seeds pass, min captured {min(fractions):.4f}, slowest {slowest:.2f} s"
        assert good >= 19
        assert slowest < 10


def test_criterion_5_psnr_ordering():
    with criterion(5, "spiral depth PSNR >= ML + 6 dB, 5 seeds 64x64x512, < 10 min") as d:
        cfg = SimConfig(signal_ppp=1.0, snr=0.03)
        scene = make_test_scene("two_plane", 64, 64)
        reference = DepthMap.from_scene(scene)
        peak = float(scene.depth.max() - scene.depth.min())
        kernels = cfg.kernels()
        start = time.perf_counter()
        sp, ml = [], []
        for seed in range(5):
            cube = sample_poisson(forward_rates(scene, kernels, background_from_snr(cfg, (64, 64)), cfg),
                                  seed, cfg.bin_width)
            sp.append(psnr(_tracked_reconstruct(f"two_plane seed {seed}", cube, kernels).depthmap, reference, peak))
            ml.append(psnr(reconstruct(cube, kernels, algorithm="ml").depthmap, reference, peak))
        elapsed = time.perf_counter() - start
        gap = float(np.mean(sp) - np.mean(ml))
        d["msg"] = f"spiral {np.mean(sp):.2f} dB, ML {np.mean(ml):.2f} dB, gap {gap:.2f} dB, {elapsed:.0f} s"
        assert gap >= 6.0
        assert elapsed < 600


def test_criterion_6_bar_super_resolution():
    with criterion(6, "bar contrast spiral >= 3x ML, period 2, PSF 2 px, PPP 4, SNR 1, 5 seeds") as d:
        cfg = SimConfig(signal_ppp=4.0, snr=1.0, psf_fwhm=2.0)
        depth_range = 3.0
        scene = make_test_scene("bars", 64, 64, depth_range, period=2)
        kernels = cfg.kernels()
        rates = forward_rates(scene, kernels, background_from_snr(cfg, (64, 64)), cfg)
        sp, ml = [], []
        for seed in range(5):
            cube = sample_poisson(rates, seed, cfg.bin_width)
            sp.append(bar_contrast(_tracked_reconstruct(f"bars seed {seed}", cube, kernels).depthmap, 2, depth_range))
            ml.append(bar_contrast(reconstruct(cube, kernels, algorithm="ml").depthmap, 2, depth_range))
        d["msg"] = (f"spiral mean {np.mean(sp):.3f}, ML mean {np.mean(ml):.3f}, "
                    f"frozen threshold {SPIRAL_BAR_CONTRAST_THRESHOLD:.3f}")
        assert np.mean(sp) >= 3 * np.mean(ml)
        assert np.mean(sp) >= SPIRAL_BAR_CONTRAST_THRESHOLD


def test_criterion_3_objective_descent():
    with criterion(3, "phi non-increasing within 1e-9 rel per step, iterates nonnegative") as d:
        for seed in range(6):
            rng = np.random.default_rng(3000 + seed)
            _, data, kernels, bg = random_problem(rng, (8, 8, 32), separable=bool(seed % 2))
            nonneg = []
            res = spiral_tap(data, kernels, bg, SolverConfig(beta_tv=float(rng.uniform(0, 2))),
                             callback=lambda it, x: nonneg.append(bool(np.all(x >= 0))))
            DESCENT_LOG.append((f"random seed {seed}", res.phi, all(nonneg)))
        bad = []
        for label, phi, nonneg_ok in DESCENT_LOG:
            rises = np.diff(phi) - 1e-9 * np.abs(phi[1:])
            if np.any(rises > 0) or not nonneg_ok:
                bad.append(label)
        d["msg"] = f"{len(DESCENT_LOG)} runs checked, {len(bad)} violating"
        assert not bad, bad


def test_criterion_7_poisson_sampler():
    with criterion(7, "Poisson mean within 3 sigma, chi-square p > 0.001 in >= 9/10 seeds") as d:
        n = 10**6
        cube = sample_poisson(np.full((100, 100, 100), 3.0), 7, 1e-9)
        mean_err = abs(cube.counts.mean() - 3.0)
        passes, pvals = 0, []
        for seed in range(10):
            counts = sample_poisson(np.full((100, 100, 100), 3.0), 700 + seed, 1e-9).counts.ravel()
            observed = np.bincount(np.minimum(counts, 12), minlength=13).astype(float)
            expected = stats.poisson.pmf(np.arange(12), 3.0) * n
            expected = np.append(expected, stats.poisson.sf(11, 3.0) * n)
            p = stats.chisquare(observed, expected).pvalue
            pvals.append(p)
            passes += p > 0.001
        d["msg"] = f"|mean-3| = {mean_err:.2e} (bound {3 * math.sqrt(3 / n):.2e}), {passes}/10 chi-square pass"
        assert mean_err < 3 * math.sqrt(3.0 / n)
        assert passes >= 9


def test_criterion_8_prox_quality():
    with criterion(8, "tv_prox within 1e-4 rel of a 10 000-iteration reference on 20 slices") as d:
        rng = np.random.default_rng(8000)
        worst = -np.inf
        for _ in range(20):
            v = rng.normal(1.0, 1.0, (8, 8)) * rng.uniform(0.2, 3.0)
            w = float(rng.uniform(0.1, 2.0))
            ref = prox_value(fgp_tv_prox(v, w, 10_000), v, w)
            got = prox_value(tv_prox(v, w), v, w)
            worst = max(worst, (got - ref) / abs(ref))
        d["msg"] = f"worst relative excess {worst:.2e}"
        assert worst <= 1e-4


def test_criterion_9_end_to_end_determinism(tmp_path):
    with criterion(9, "simulate -> gate -> reconstruct -> eval twice: identical cube bytes and metric CSVs") as d:
        scene = tmp_path / "scene.sps"
        cfg = tmp_path / "demo.cfg"
        cfg.write_text("signal_ppp = 2.59\nsnr = 0.03\n")
        assert main(["make-scene", "--kind", "two_plane", "--width", "32", "--height", "32", "--out", str(scene)]) == 0
        outputs = []
        for run in ("a", "b"):
            r = tmp_path / run
            r.mkdir()
            steps = [
                ["simulate", "--scene", str(scene), "--config", str(cfg), "--seed", "11", "--out", str(r / "cube.spc")],
                ["gate", "--cube", str(r / "cube.spc"), "--config", str(cfg), "--out", str(r / "gates.txt")],
                ["reconstruct", "--cube", str(r / "cube.spc"), "--config", str(cfg), "--out", str(r / "depth.txt"),
                 "--trace", str(r / "trace.csv")],
                ["eval", "--estimate", str(r / "depth.txt"), "--scene", str(scene), "--config", str(cfg),
                 "--out", str(r / "metrics.csv")],
            ]
            for argv in steps:
                assert main(argv) == 0, argv
            outputs.append({p.name: p.read_bytes() for p in sorted(r.iterdir())})
        differing = [name for name in outputs[0] if outputs[0][name] != outputs[1][name]]
        d["msg"] = f"{len(outputs[0])} files compared, differing: {differing or 'none'}"
        assert outputs[0]["cube.spc"] == outputs[1]["cube.spc"]
        assert outputs[0]["metrics.csv"] == outputs[1]["metrics.csv"]
        assert not differing


if __name__ == "__main__":
    sys.exit(pytest.main([str(Path(__file__)), "-s", "-q"]))
