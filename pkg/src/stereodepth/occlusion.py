"""Occlusion masks for the left view.

All masks are plain arrays: they are built from detached values and act as
constants in the backward pass.
"""

from __future__ import annotations

import numpy as np

from . import field_core as fc
from .field_core import FieldError
from .geometry import DisparityLadder


def cyclic_volume(right_probability, ladder: DisparityLadder) -> np.ndarray:
    """Shift a right-view probability volume back into the left view."""
    vol = fc.value_of(right_probability)
    if vol.ndim != 3 or vol.shape[2] != ladder.n:
        raise FieldError(f"volume has {vol.shape[-1]} channels, ladder has {ladder.n}")
    return fc.horizontal_shift(vol, ladder.levels.reshape(1, 1, -1), direction=-1).value


def mask_from_volume(cyclic) -> np.ndarray:
    """Channel sum of the cyclic volume, clipped to at most 1."""
    return np.minimum(fc.value_of(cyclic).sum(axis=-1), 1.0)


def mask_from_disparity(disparity, k: int = 41) -> np.ndarray:
    """Visibility from disparity geometry along each row.

    A pixel is occluded when some right neighbour ``i <= k`` columns away has
    a disparity exactly ``i`` larger, i.e. both land on the same right-image
    column. Neighbours past the right border are skipped; a pixel with none
    is visible.
    """
    if k < 1:
        raise FieldError("neighbour horizon k must be >= 1")
    d = fc.value_of(disparity)
    w = d.shape[1]
    best = np.full(d.shape, np.inf)
    for i in range(1, min(k, w - 1) + 1):
        gap = np.abs(d[:, i:] - d[:, :-i] - i)
        np.minimum(best[:, :-i], gap, out=best[:, :-i])
    return np.minimum(best, 1.0)


def combine(mask_volume, mask_disparity) -> np.ndarray:
    a, b = fc.value_of(mask_volume), fc.value_of(mask_disparity)
    if a.shape != b.shape:
        raise FieldError(f"mask shapes {a.shape} and {b.shape} differ")
    return a * b
