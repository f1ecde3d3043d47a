"""Command-line front end: ``splidar <command> ...``.

Exit codes: 0 success, 2 usage or configuration error, 3 file parse error,
4 numerical or evaluation failure. ``SPLIDAR_NUM_THREADS`` caps the worker
threads of the numerical libraries.
"""

from __future__ import annotations

import argparse
import contextlib
import os
import sys
from pathlib import Path

import numpy as np

from splidar import io
from splidar.core import (
    DataCube,
    DepthMap,
    DomainError,
    EvaluationError,
    FormatError,
    NumericalError,
    RangeError,
    UsageError,
)
from splidar.gate import GateConfig, global_histogram
from splidar.metrics import bar_contrast, depth_rmse, psnr
from splidar.pipeline import gate_and_background, reconstruct
from splidar.simulate import (
    SCENE_KINDS,
    SNR_GATE,
    SimConfig,
    background_from_snr,
    forward_rates,
    make_test_scene,
    sample_poisson,
)
from splidar.solver import SolverConfig

EXIT_OK, EXIT_USAGE, EXIT_PARSE, EXIT_NUMERIC = 0, 2, 3, 4


def _thread_limit():
    n = os.environ.get("SPLIDAR_NUM_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=int(n))


def _load_config(path) -> dict[str, str]:
    return io.read_config(path) if path else {}


def _configs(values: dict[str, str], seed=None):
    sim = io.build_config(SimConfig, values, seed=seed)
    return sim, io.build_config(GateConfig, values), io.build_config(SolverConfig, values)


def _need(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return p


def _simulate(scene, sim: SimConfig, seed: int) -> tuple[DataCube, dict[str, float]]:
    kernels = sim.kernels()
    bg = background_from_snr(sim, scene.reflectivity.shape)
    rates = forward_rates(scene, kernels, bg, sim)
    cube = sample_poisson(rates, seed, sim.bin_width, sim.t0)
    signal = rates - bg.cube(sim.nt)
    npix = scene.width * scene.height
    ppp = float(signal.sum() / max(int(scene.valid.sum()), 1))
    bg_gate = sim.background_per_bin * SNR_GATE / sim.bin_width
    summary = {
        "signal_ppp": ppp,
        "snr": ppp / bg_gate if bg_gate > 0 else float("inf"),
        "background_per_bin": sim.background_per_bin,
        "detected_counts_per_pixel": float(cube.counts.sum() / npix),
    }
    return cube, summary


def cmd_make_scene(args) -> int:
    scene = make_test_scene(
        args.kind, args.width, args.height, args.depth_range,
        period=args.period, steps=args.steps, base_depth=args.base_depth,
    )
    io.write_scene(args.out, scene)
    print(f"wrote {args.kind} scene {args.width}x{args.height} to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    scene = io.read_scene(_need(args.scene, "scene"))
    values = _load_config(args.config and _need(args.config, "config"))
    sim, _, _ = _configs(values, args.seed)
    cube, summary = _simulate(scene, sim, sim.seed)
    io.write_cube(args.out, cube)
    print(f"configured PPP {sim.signal_ppp:g}, SNR {sim.snr:g}; bin width {sim.bin_width / 1e-12:g} ps, nt {sim.nt}")
    print(f"realized signal PPP {summary['signal_ppp']:.4g}, SNR {summary['snr']:.4g} (200 ns gate)")
    print(f"background {summary['background_per_bin']:.4g} counts/bin/pixel, "
          f"{summary['detected_counts_per_pixel']:.4g} detected counts/pixel, seed {sim.seed}")
    return EXIT_OK


def _kernels_for(cube: DataCube, values):
    sim = io.build_config(SimConfig, values, bin_width=cube.bin_width, nt=cube.nt, t0=cube.t0)
    return sim.kernels()


def cmd_gate(args) -> int:
    cube = io.read_cube(_need(args.cube, "cube"))
    values = _load_config(args.config and _need(args.config, "config"))
    _, gate_cfg, _ = _configs(values)
    gates, _ = gate_and_background(cube, _kernels_for(cube, values), gate_cfg, values.get("order", "gate_first"))
    Path(args.out).write_text(io.gates_to_text(gates))
    print(f"{len(gates)} gate interval(s): " + ", ".join(f"[{a}, {b})" for a, b in gates.intervals))
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cube = io.read_cube(_need(args.cube, "cube"))
    values = _load_config(args.config and _need(args.config, "config"))
    _, gate_cfg, solver_cfg = _configs(values)
    rec = reconstruct(
        cube, _kernels_for(cube, values), gate_cfg, solver_cfg,
        algorithm=args.algorithm, order=values.get("order", "gate_first"),
    )
    io.write_depth(args.out, rec.depthmap)
    msg = f"{args.algorithm}: {int(rec.depthmap.valid.sum())} valid pixels, gates {list(rec.gates.intervals)}"
    if rec.spiral is not None:
        if args.trace:
            Path(args.trace).write_text(io.trace_to_csv(rec.spiral.trace))
        state = "stalled" if rec.spiral.stalled else ("converged" if rec.spiral.converged else "iteration cap")
        msg += f", {len(rec.spiral.trace) - 1} iterations ({state}), beta {rec.spiral.beta:g}"
    print(msg)
    return EXIT_OK


def cmd_baseline_ml(args) -> int:
    args.algorithm = "ml"
    args.trace = None
    return cmd_reconstruct(args)


def evaluate(estimate: DepthMap, scene, peak=None, period=None, orientation="vertical", quantity="depth"):
    reference = DepthMap.from_scene(scene)
    depths = scene.depth[scene.valid]
    depth_range = float(depths.max() - depths.min()) if depths.size else 0.0
    if peak is None:
        if depth_range <= 0:
            raise UsageError("scene has a single depth; pass --peak")
        peak = depth_range
    rows = [
        ("psnr_db", psnr(estimate, reference, peak, quantity)),
        ("depth_rmse_m", depth_rmse(estimate, reference)),
        ("valid_fraction", float(estimate.valid.mean())),
    ]
    if period:
        rows.append(("bar_contrast", bar_contrast(estimate, period, depth_range, orientation)))
    return rows


def cmd_eval(args) -> int:
    estimate = io.read_depth(_need(args.estimate, "depth"))
    scene = io.read_scene(_need(args.scene, "scene"))
    values = _load_config(args.config and _need(args.config, "config"))
    rows = evaluate(estimate, scene, args.peak, args.period, args.orientation, args.quantity)
    text = io.metrics_to_csv(rows, io.config_hash(values))
    if args.out:
        Path(args.out).write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_render_ply(args) -> int:
    dm = io.read_depth(_need(args.depth, "depth"))
    text = io.ply_text(dm)
    Path(args.out).write_text(text)
    print(f"wrote {io.ply_vertex_count(text)} vertices to {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    from splidar import plotting

    scene = io.read_scene(_need(args.scene, "scene"))
    values = _load_config(args.config and _need(args.config, "config"))
    sim, gate_cfg, solver_cfg = _configs(values, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    cube, summary = _simulate(scene, sim, sim.seed)
    io.write_cube(out / "cube.spc", cube)
    kernels = sim.kernels()
    order = values.get("order", "gate_first")
    ml = reconstruct(cube, kernels, gate_cfg, solver_cfg, algorithm="ml", order=order)
    sp = reconstruct(cube, kernels, gate_cfg, solver_cfg, algorithm="spiral", order=order)
    io.write_depth(out / "depth_ml.txt", ml.depthmap)
    io.write_depth(out / "depth_spiral.txt", sp.depthmap)
    (out / "gates.txt").write_text(io.gates_to_text(sp.gates))
    (out / "trace.csv").write_text(io.trace_to_csv(sp.spiral.trace))
    (out / "spiral.ply").write_text(io.ply_text(sp.depthmap))

    rows = [("sim_" + k, v) for k, v in summary.items()]
    for name, rec in (("ml", ml), ("spiral", sp)):
        rows += [(f"{name}_{k}", v) for k, v in evaluate(rec.depthmap, scene, args.peak, args.period)]
    (out / "metrics.csv").write_text(io.metrics_to_csv(rows, io.config_hash(values)))

    truth = DepthMap.from_scene(scene)
    maps = {"truth": truth, "pixelwise ML": ml.depthmap, "SPIRAL-TAP 3D": sp.depthmap}
    plotting.plot_histogram(global_histogram(cube), sp.gates, out / "histogram.png", cube.bin_width)
    plotting.plot_depth_maps(maps, out / "depth_maps.png")
    plotting.plot_depth_profile(maps, scene.height // 2, out / "depth_profile.png")
    plotting.plot_trace(sp.spiral.phi, out / "trace.png")
    for name, value in rows:
        print(f"{name:32s} {value:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splidar", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-scene", help="write a synthetic scene file")
    p.add_argument("--kind", choices=SCENE_KINDS, required=True)
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--depth-range", type=float, default=5.0)
    p.add_argument("--period", type=int, default=2)
    p.add_argument("--steps", type=int, default=4)
    p.add_argument("--base-depth", type=float, default=3.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_scene)

    p = sub.add_parser("simulate", help="scene -> photon-count cube")
    p.add_argument("--scene", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gate", help="global gating; writes gate intervals")
    p.add_argument("--cube", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gate)

    p = sub.add_parser("reconstruct", help="cube -> depth map")
    p.add_argument("--cube", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--trace")
    p.add_argument("--algorithm", choices=("spiral", "ml"), default="spiral")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("baseline-ml", help="pixelwise ML depth map")
    p.add_argument("--cube", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_baseline_ml)

    p = sub.add_parser("eval", help="PSNR / RMSE / bar contrast against a scene")
    p.add_argument("--estimate", required=True)
    p.add_argument("--scene", required=True)
    p.add_argument("--config")
    p.add_argument("--peak", type=float)
    p.add_argument("--period", type=int)
    p.add_argument("--orientation", choices=("vertical", "horizontal"), default="vertical")
    p.add_argument("--quantity", choices=("depth", "intensity"), default="depth")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("render-ply", help="depth map -> ASCII PLY point cloud")
    p.add_argument("--depth", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_ply)

    p = sub.add_parser("report", help="simulate, reconstruct with both methods, write CSV and figures")
    p.add_argument("--scene", required=True)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--peak", type=float)
    p.add_argument("--period", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with _thread_limit(), np.errstate(all="ignore"):
            return args.func(args)
    except FormatError as exc:
        print(f"error: parse failure: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (UsageError, DomainError, RangeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, EvaluationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
