"""Single-photon LiDAR simulation, global gating and 3D TV-regularized Poisson deconvolution."""

from splidar.core import (
    SPEED_OF_LIGHT,
    BackgroundModel,
    DataCube,
    DepthMap,
    GateMask,
    KernelSet,
    ReconCube,
    SceneMap,
    bin_to_depth,
    depth_to_bin,
)

__version__ = "0.1.0"

__all__ = [
    "SPEED_OF_LIGHT",
    "BackgroundModel",
    "DataCube",
    "DepthMap",
    "GateMask",
    "KernelSet",
    "ReconCube",
    "SceneMap",
    "bin_to_depth",
    "depth_to_bin",
]
