"""Discrete (right-view) and continuous (left-view) image reconstruction."""

from __future__ import annotations

import numpy as np

from . import field_core as fc
from .field_core import FieldError, Var
from .geometry import CameraRig, DisparityLadder


def shift_density_volume(density, ladder: DisparityLadder, fill: float = 0.0) -> Var:
    """Move each left-view channel into the right view by its own level."""
    v = fc.as_var(density)
    if v.ndim != 3 or v.shape[2] != ladder.n:
        raise FieldError(f"volume has {v.shape[-1]} channels, ladder has {ladder.n}")
    return fc.horizontal_shift(v, ladder.levels.reshape(1, 1, -1), direction=1, fill=fill)


def reconstruct_right(left_image, density, ladder: DisparityLadder) -> tuple[Var, Var]:
    """Right image as the probability-weighted sum of level-shifted left images.

    Returns ``(right_estimate, right_probability_volume)``.
    """
    img = fc.as_var(left_image)
    dens = fc.as_var(density)
    if img.shape[:2] != dens.shape[:2]:
        raise FieldError(f"image {img.shape} and volume {dens.shape} sizes differ")
    prob_r = fc.softmax_channels(shift_density_volume(dens, ladder))
    total = None
    for n, level in enumerate(ladder.levels):
        shifted = fc.horizontal_shift(img, level, direction=1)
        term = prob_r[:, :, n : n + 1] * shifted
        total = term if total is None else total + term
    return total, prob_r


def reconstruct_left(right_image, fine_depth, rig: CameraRig, fill: float = 0.0) -> Var:
    """Left image sampled from the right one at ``x - B*f_x / depth``."""
    img = fc.as_var(right_image)
    depth = fc.as_var(fine_depth)
    if np.any(depth.value <= 0):
        raise FieldError("fine depth must be positive")
    if img.shape[:2] != depth.shape:
        raise FieldError(f"image {img.shape} and depth {depth.shape} sizes differ")
    offset = fc.div(-rig.bf, depth)
    return fc.sample_x(img, offset[:, :, None], fill=fill)


def edge_mask(fine_depth, rig: CameraRig) -> np.ndarray:
    """1 where the warped coordinate lands inside the right image, else 0."""
    depth = fc.value_of(fine_depth)
    if np.any(depth <= 0):
        raise FieldError("fine depth must be positive")
    w = depth.shape[1]
    xs = np.arange(w, dtype=np.float64)[None, :] - rig.bf / depth
    return ((xs >= 0) & (xs <= w - 1)).astype(np.float64)
