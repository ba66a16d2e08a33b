"""Stereo rig, disparity ladder and the two pixel transforms of a rectified pair."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field_core import FieldError, Var, as_var, div, value_of


@dataclass(frozen=True)
class CameraRig:
    """Rectified stereo pair sharing one intrinsic matrix.

    The right camera sits ``baseline`` metres along +X of the left camera,
    with identity rotation.
    """

    baseline: float = 0.54
    focal_x: float = 720.0
    focal_y: float = 720.0
    cx: float = 0.0
    cy: float = 0.0

    def __post_init__(self):
        if not self.baseline > 0:
            raise FieldError("baseline must be positive")
        if not (self.focal_x > 0 and self.focal_y > 0):
            raise FieldError("focal lengths must be positive")

    @property
    def bf(self) -> float:
        """Baseline times horizontal focal length (metre-pixels)."""
        return self.baseline * self.focal_x

    def intrinsics(self) -> np.ndarray:
        return np.array(
            [[self.focal_x, 0.0, self.cx], [0.0, self.focal_y, self.cy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class DisparityLadder:
    d_min: float
    d_max: float
    levels: np.ndarray = field(repr=False)

    def __post_init__(self):
        lv = np.asarray(self.levels, dtype=np.float64)
        if lv.ndim != 1 or lv.size < 1:
            raise FieldError("ladder needs at least one level")
        if lv.size > 1 and not np.all(np.diff(lv) < 0):
            raise FieldError("ladder levels must be strictly decreasing")
        if lv.min() < self.d_min or lv.max() > self.d_max:
            raise FieldError("ladder levels must lie in [d_min, d_max]")
        lv.flags.writeable = False
        object.__setattr__(self, "levels", lv)

    @property
    def n(self) -> int:
        return self.levels.size

    @classmethod
    def from_levels(cls, levels) -> "DisparityLadder":
        lv = np.asarray(levels, dtype=np.float64)
        return cls(float(lv.min()), float(lv.max()), lv)


def discretize(d_min: float, d_max: float, n: int) -> DisparityLadder:
    """Mirrored exponential discretisation of ``[d_min, d_max]`` into ``n`` levels.

    Level 0 is ``d_max`` and level ``n-1`` is ``d_min``; the log of the level is
    affine in its index. Written as ``d_max**(1-t) * d_min**t`` so both ends
    are reproduced bit-exactly.
    """
    if not (0 < d_min < d_max):
        raise FieldError(f"invalid disparity range [{d_min}, {d_max}]")
    if n < 2:
        raise FieldError("need at least two disparity levels")
    t = np.arange(n, dtype=np.float64) / (n - 1)
    levels = d_max ** (1.0 - t) * d_min**t
    return DisparityLadder(float(d_min), float(d_max), levels)


def disparity_to_depth(rig: CameraRig, disparity) -> Var:
    d = as_var(disparity)
    if np.any(d.value <= 0):
        raise FieldError("disparity must be positive to convert to depth")
    return div(rig.bf, d)


def depth_to_disparity(rig: CameraRig, depth) -> Var:
    z = as_var(depth)
    if np.any(z.value <= 0):
        raise FieldError("depth must be positive to convert to disparity")
    return div(rig.bf, z)


def warp_coords_t1(rig: CameraRig, p, depth) -> np.ndarray:
    """Left pixel ``p`` at ``depth`` -> its coordinate in the right image.

    Inhomogeneous form of ``K [R|t] [D K^-1 p; 1]`` with ``t = [-B, 0, 0]``;
    ``depth`` may be ``inf`` (zero offset).
    """
    z = np.asarray(value_of(depth), dtype=np.float64)
    if np.any(z <= 0):
        raise FieldError("depth must be positive")
    p = np.asarray(p, dtype=np.float64)
    out = p.copy()
    out[..., 0] = p[..., 0] - rig.bf / z
    return out


def warp_coords_t2(p, d_n: float) -> np.ndarray:
    """Right pixel ``p`` -> its source coordinate in the left image for level ``d_n``."""
    p = np.asarray(p, dtype=np.float64)
    out = p.copy()
    out[..., 0] = p[..., 0] + d_n
    return out
