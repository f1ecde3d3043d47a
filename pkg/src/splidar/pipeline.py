"""End-to-end reconstruction: gate, estimate background, crop, solve, extract depth."""

from __future__ import annotations

from dataclasses import dataclass

from splidar.baseline import pixelwise_ml
from splidar.core import BackgroundModel, DataCube, DepthMap, GateMask, KernelSet, UsageError
from splidar.gate import GateConfig, crop_cube, estimate_background, find_signal_gates, global_histogram
from splidar.solver import SolverConfig, SpiralResult, extract_depth_reflectivity, spiral_tap

ORDERS = ("gate_first", "background_first")


@dataclass
class Reconstruction:
    depthmap: DepthMap
    gates: GateMask
    background: BackgroundModel
    cube: DataCube  # the cropped cube the solver saw
    spiral: SpiralResult | None = None


def gate_and_background(
    cube: DataCube,
    kernels: KernelSet,
    gate_cfg: GateConfig | None = None,
    order: str = "gate_first",
) -> tuple[GateMask, BackgroundModel]:
    """Gates from the global histogram and the background model.

    ``gate_first`` estimates the background from out-of-gate bins;
    ``background_first`` uses every bin, before gating.
    """
    if order not in ORDERS:
        raise UsageError(f"order must be one of {ORDERS}, got {order!r}")
    gates = find_signal_gates(global_histogram(cube), kernels.temporal, gate_cfg)
    if order == "gate_first":
        background = estimate_background(cube, gates)
    else:
        background = estimate_background(cube, GateMask((), cube.nt))
    return gates, background


def reconstruct(
    cube: DataCube,
    kernels: KernelSet,
    gate_cfg: GateConfig | None = None,
    solver_cfg: SolverConfig | None = None,
    algorithm: str = "spiral",
    order: str = "gate_first",
    callback=None,
) -> Reconstruction:
    """Gate, estimate the background, then run SPIRAL-TAP on the cropped cube or the pixelwise ML estimator.

    ``callback(iteration, x)`` is forwarded to :func:`spiral_tap`.
    """
    solver_cfg = solver_cfg or SolverConfig()
    if algorithm not in ("spiral", "ml"):
        raise UsageError(f"unknown algorithm {algorithm!r}")
    gates, background = gate_and_background(cube, kernels, gate_cfg, order)
    if not gates:
        raise UsageError("no signal gates were found; lower threshold_sigma or widen gate_halfwidth")
    if algorithm == "ml":
        dm = pixelwise_ml(cube, kernels.temporal, gates, solver_cfg.intensity_floor, background)
        return Reconstruction(dm, gates, background, cube)
    cropped = crop_cube(cube, gates)
    result = spiral_tap(cropped, kernels, background, solver_cfg, callback)
    dm = extract_depth_reflectivity(result.recon, solver_cfg)
    return Reconstruction(dm, gates, background, cropped, result)
