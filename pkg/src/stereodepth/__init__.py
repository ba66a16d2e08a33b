"""Coarse-to-fine stereo depth estimation by direct per-scene optimisation.

A discrete disparity-probability branch and a bounded continuous residual are
fitted to one rectified stereo pair through differentiable view
reconstruction, with occlusion-aware masking of the photometric loss.
"""

from .geometry import CameraRig, DisparityLadder, discretize
from .optimize import OptimizerConfig, optimize_scene
from .synth import SceneSpec, generate

__all__ = [
    "CameraRig",
    "DisparityLadder",
    "OptimizerConfig",
    "SceneSpec",
    "discretize",
    "generate",
    "optimize_scene",
]

__version__ = "0.1.0"
