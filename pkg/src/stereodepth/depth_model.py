"""Coarse-to-fine depth head driven by directly optimised per-pixel parameters.

The density volume and the residual map are the free variables here; in a
learned model they would be the outputs of the backbone's two heads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import field_core as fc
from .field_core import FieldError, Var
from .geometry import CameraRig, DisparityLadder, depth_to_disparity, disparity_to_depth


@dataclass
class SceneParams:
    """Unconstrained unknowns for one stereo pair.

    ``raw_density`` is ``(H, W, N)`` logits, ``raw_residual`` is ``(H, W)``
    pre-sigmoid values. Either may hold a :class:`Var` during a forward pass.
    """

    raw_density: np.ndarray
    raw_residual: np.ndarray

    def __post_init__(self):
        dens = fc.value_of(self.raw_density)
        res = fc.value_of(self.raw_residual)
        if dens.ndim != 3 or res.shape != dens.shape[:2]:
            raise FieldError(
                f"density {dens.shape} and residual {res.shape} dimensions disagree"
            )
        if not (np.all(np.isfinite(dens)) and np.all(np.isfinite(res))):
            raise FieldError("scene parameters must be finite")

    @classmethod
    def zeros(cls, height: int, width: int, n: int) -> "SceneParams":
        """Uniform probability volume and zero residual."""
        return cls(np.zeros((height, width, n)), np.zeros((height, width)))

    @property
    def shape(self) -> tuple[int, int, int]:
        return fc.value_of(self.raw_density).shape


@dataclass
class CoarseFineOutput:
    coarse_disparity: Var
    coarse_depth: Var
    residual: Var
    fine_depth: Var
    fine_disparity: Var
    probability_volume: Var


def coarse_disparity(raw_density, ladder: DisparityLadder) -> tuple[Var, Var]:
    """Softmax the density volume and take the expected disparity over the ladder."""
    dens = fc.as_var(raw_density)
    if dens.ndim != 3 or dens.shape[2] != ladder.n:
        raise FieldError(
            f"density volume has {dens.shape[-1]} channels, ladder has {ladder.n}"
        )
    prob = fc.softmax_channels(dens)
    disp = fc.sum_(prob * ladder.levels, axis=-1)
    return prob, disp


def residual_depth(raw_residual, w: float) -> Var:
    if not w > 0:
        raise FieldError("residual range w must be positive")
    return (fc.sigmoid(raw_residual) - 0.5) * w


def fine_depth(coarse_depth, residual, floor: float | None = None) -> Var:
    c, r = fc.as_var(coarse_depth), fc.as_var(residual)
    if c.shape != r.shape:
        raise FieldError(f"coarse depth {c.shape} and residual {r.shape} differ")
    out = c + r
    if floor is not None:
        out = fc.maximum(out, floor)
    return out


def depth_floor(rig: CameraRig, ladder: DisparityLadder) -> float:
    return rig.bf / ladder.d_max


def forward(
    params: SceneParams,
    rig: CameraRig,
    ladder: DisparityLadder,
    w: float,
    use_residual: bool = True,
    detach_coarse: bool = False,
) -> CoarseFineOutput:
    prob, d_c = coarse_disparity(params.raw_density, ladder)
    depth_c = disparity_to_depth(rig, d_c)
    if use_residual:
        res = residual_depth(params.raw_residual, w)
        base = fc.detach(depth_c) if detach_coarse else depth_c
        depth_f = fine_depth(base, res, floor=depth_floor(rig, ladder))
        d_f = depth_to_disparity(rig, depth_f)
    else:
        res = fc.Var(np.zeros(d_c.shape))
        depth_f, d_f = depth_c, d_c
    return CoarseFineOutput(d_c, depth_c, res, depth_f, d_f, prob)


def logits_for_disparity(
    disparity: np.ndarray, ladder: DisparityLadder, sharpness: float = 1e3
) -> np.ndarray:
    """One-hot-like logits selecting, per pixel, the ladder level nearest ``disparity``."""
    disparity = np.asarray(disparity, dtype=np.float64)
    nearest = np.argmin(np.abs(disparity[..., None] - ladder.levels), axis=-1)
    logits = np.zeros(disparity.shape + (ladder.n,))
    np.put_along_axis(logits, nearest[..., None], sharpness, axis=-1)
    return logits


def params_from_depth(
    depth: np.ndarray, rig: CameraRig, ladder: DisparityLadder, w: float
) -> SceneParams:
    """Parameters reproducing ``depth`` as fine depth: nearest level plus residual.

    Exact when the remaining residual fits inside ``(-w/2, w/2)``.
    """
    depth = np.asarray(depth, dtype=np.float64)
    logits = logits_for_disparity(rig.bf / depth, ladder)
    _, d_c = coarse_disparity(logits, ladder)
    res = depth - rig.bf / d_c.value
    frac = np.clip(res / w + 0.5, 1e-12, 1 - 1e-12)
    return SceneParams(logits, np.log(frac) - np.log1p(-frac))
