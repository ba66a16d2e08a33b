"""Procedural rectified stereo pairs with exact ground truth.

Scenes are stacks of textured rectangles parallel to the image plane (or
slanted along x). The left image is painted directly; visibility in the
right view is resolved with a forward-splatting z-buffer, which doubles as
the occlusion oracle for the mask builders.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .field_core import FieldError, rgb_image
from .geometry import CameraRig

DESK_RIG = CameraRig(baseline=0.54, focal_x=72.0, focal_y=72.0, cx=64.0, cy=48.0)


@dataclass(frozen=True)
class Layer:
    """A rectangle covering columns ``x0..x1-1`` and rows ``y0..y1-1``.

    ``slope`` is the change in disparity per pixel along x, measured from ``x0``.
    """

    depth: float
    x0: int
    y0: int
    x1: int
    y1: int
    slope: float = 0.0

    def disparity_at(self, rig: CameraRig, x) -> np.ndarray:
        d = rig.bf / self.depth + self.slope * (np.asarray(x, dtype=np.float64) - self.x0)
        # depth = bf / k round-trips to k only within an ulp; keep integer scenes integral
        snapped = np.rint(d)
        return np.where(np.abs(d - snapped) < 1e-9, snapped, d)


@dataclass(frozen=True)
class SceneSpec:
    width: int = 128
    height: int = 96
    layers: tuple[Layer, ...] = ()
    octaves: int = 4
    amplitude: float = 0.5
    cell: float = 16.0
    rig: CameraRig = DESK_RIG
    d_min: float = 2.0
    d_max: float = 32.0
    seed: int = 0

    def validate(self) -> None:
        if self.width < 2 or self.height < 2:
            raise FieldError("scene must be at least 2x2 pixels")
        if not self.layers:
            raise FieldError("scene has no layers")
        bg = self.layers[0]
        if (bg.x0, bg.y0, bg.x1, bg.y1) != (0, 0, self.width, self.height):
            raise FieldError("first layer must cover the full frame")
        for i, layer in enumerate(self.layers):
            if layer.depth <= 0:
                raise FieldError(f"layer {i} has nonpositive depth")
            if not (0 <= layer.x0 < layer.x1 <= self.width and 0 <= layer.y0 < layer.y1 <= self.height):
                raise FieldError(f"layer {i} box lies outside the frame")
            ends = layer.disparity_at(self.rig, [layer.x0, layer.x1 - 1])
            if ends.min() < self.d_min or ends.max() > self.d_max:
                raise FieldError(
                    f"layer {i} disparity {ends.min():.3f}..{ends.max():.3f} outside "
                    f"[{self.d_min}, {self.d_max}]"
                )
        if self.amplitude < 0 or self.octaves < 0 or self.cell < 1:
            raise FieldError("invalid texture descriptor")


@dataclass
class SyntheticScene:
    left: np.ndarray
    right: np.ndarray
    gt_depth: np.ndarray
    gt_disparity: np.ndarray
    gt_occlusion: np.ndarray
    rig: CameraRig
    seed: int
    zbuffer_occluded: np.ndarray = field(repr=False, default=None)
    right_disparity: np.ndarray = field(repr=False, default=None)
    spec: SceneSpec | None = field(repr=False, default=None)

    @property
    def in_frame(self) -> np.ndarray:
        w = self.gt_disparity.shape[1]
        target = np.arange(w)[None, :] - self.gt_disparity
        return (target >= 0) & (target <= w - 1)


# ---------------------------------------------------------------------------
# texture


class _ValueNoise:
    """Smooth RGB value noise defined on the whole plane around the frame."""

    def __init__(self, rng: np.random.Generator, spec: SceneSpec):
        self.base = rng.uniform(0.3, 0.7, size=3)
        self.amplitude = spec.amplitude
        self.margin = int(np.ceil(spec.d_max)) + 2
        self.octaves = []
        cell = float(spec.cell)
        for k in range(spec.octaves):
            span_x = spec.width + 2 * self.margin
            nx = int(np.ceil(span_x / cell)) + 2
            ny = int(np.ceil(spec.height / cell)) + 2
            self.octaves.append((cell, 0.5**k, rng.uniform(0.0, 1.0, size=(ny, nx, 3))))
            cell = max(cell / 2.0, 1.0)

    def __call__(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if not self.octaves or self.amplitude == 0:
            return np.broadcast_to(self.base, x.shape + (3,)).copy()
        acc = np.zeros(x.shape + (3,))
        norm = 0.0
        for cell, weight, grid in self.octaves:
            u = (x + self.margin) / cell
            v = y / cell
            i = np.clip(np.floor(u).astype(int), 0, grid.shape[1] - 2)
            j = np.clip(np.floor(v).astype(int), 0, grid.shape[0] - 2)
            fu = _fade(u - i)[..., None]
            fv = _fade(v - j)[..., None]
            top = (1 - fu) * grid[j, i] + fu * grid[j, i + 1]
            bot = (1 - fu) * grid[j + 1, i] + fu * grid[j + 1, i + 1]
            acc += weight * ((1 - fv) * top + fv * bot)
            norm += weight
        return np.clip(self.base + self.amplitude * (acc / norm - 0.5) * 2.0, 0.0, 1.0)


def _fade(t: np.ndarray) -> np.ndarray:
    return t * t * (3.0 - 2.0 * t)


# ---------------------------------------------------------------------------
# z-buffer oracle


def _splat(disparity: np.ndarray):
    """Resolve, per row, which left pixel wins each (possibly out-of-frame) target column.

    Returns ``(target, winner)`` where ``target`` is the rounded right-image
    column of every left pixel and ``winner`` marks left pixels that are the
    nearest (largest disparity) source of their target.
    """
    h, w = disparity.shape
    target = np.rint(np.arange(w)[None, :] - disparity).astype(np.int64)
    lo = int(target.min())
    span = int(target.max()) - lo + 1
    keys = (np.arange(h)[:, None] * span + (target - lo)).ravel()
    order = np.lexsort((-disparity.ravel(), keys))
    _, first = np.unique(keys[order], return_index=True)
    winner = np.zeros(h * w, dtype=bool)
    winner[order[first]] = True
    return target, winner.reshape(h, w)


def zbuffer_occlusion(disparity: np.ndarray) -> np.ndarray:
    """Left pixels hidden in the right view behind a nearer pixel."""
    _, winner = _splat(np.asarray(disparity, dtype=np.float64))
    return ~winner


def _fill_holes(values: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Fill unset pixels with the horizontally nearest set pixel (ties go right)."""
    h, w = filled.shape
    cols = np.broadcast_to(np.arange(w), (h, w))
    left = np.where(filled, cols, -1)
    left = np.maximum.accumulate(left, axis=1)
    right = np.where(filled, cols, w)
    right = np.minimum.accumulate(right[:, ::-1], axis=1)[:, ::-1]
    dl = np.where(left >= 0, cols - left, np.inf)
    dr = np.where(right < w, right - cols, np.inf)
    src = np.where(dr <= dl, right, left)
    src = np.clip(src, 0, w - 1)
    rows = np.arange(h)[:, None]
    out = values[rows, src]
    return np.where(_expand(filled, values), values, out)


def _expand(mask: np.ndarray, like: np.ndarray) -> np.ndarray:
    return mask.reshape(mask.shape + (1,) * (like.ndim - mask.ndim))


def _splat_right(left: np.ndarray, disparity: np.ndarray):
    h, w = disparity.shape
    target, winner = _splat(disparity)
    # judge the frame on the unrounded column so sub-pixel scenes agree with in_frame
    exact = np.arange(w)[None, :] - disparity
    in_frame = (exact >= 0) & (exact <= w - 1)
    use = winner & in_frame
    rows, cols = np.nonzero(use)
    right = np.zeros_like(left)
    right_disp = np.zeros((h, w))
    seen = np.zeros((h, w), dtype=bool)
    right[rows, target[rows, cols]] = left[rows, cols]
    right_disp[rows, target[rows, cols]] = disparity[rows, cols]
    seen[rows, target[rows, cols]] = True
    return right, right_disp, seen, use


def render_right(left_image: np.ndarray, disparity: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward-warp the left image into the right view with a z-buffer.

    Each left pixel lands on column ``x - d`` (rounded); the largest disparity
    wins. Right pixels no left pixel reaches are filled from the nearest
    reached pixel in the same row. Returns ``(right_image, visible)`` where
    ``visible`` is 1 for left pixels that win an in-frame target.
    """
    disparity = np.asarray(disparity, dtype=np.float64)
    left = np.asarray(left_image, dtype=np.float64)
    right, _, seen, use = _splat_right(left, disparity)
    return _fill_holes(right, seen), use.astype(np.float64)


def right_view_disparity(disparity: np.ndarray) -> np.ndarray:
    """Disparity of the visible surface at each right pixel (holes filled as for images)."""
    disparity = np.asarray(disparity, dtype=np.float64)
    _, right_disp, seen, _ = _splat_right(disparity[..., None], disparity)
    return _fill_holes(right_disp[..., 0] if right_disp.ndim == 3 else right_disp, seen)


# ---------------------------------------------------------------------------
# scenes


def _layer_maps(spec: SceneSpec):
    h, w = spec.height, spec.width
    xs = np.broadcast_to(np.arange(w, dtype=np.float64), (h, w))
    disp = np.full((h, w), -np.inf)
    owner = np.zeros((h, w), dtype=int)
    for idx, layer in enumerate(spec.layers):
        d = layer.disparity_at(spec.rig, xs)
        cover = np.zeros((h, w), dtype=bool)
        cover[layer.y0 : layer.y1, layer.x0 : layer.x1] = True
        nearer = cover & (d > disp)
        disp = np.where(nearer, d, disp)
        owner = np.where(nearer, idx, owner)
    return disp, owner


def _render_right_exact(spec: SceneSpec, textures: list[_ValueNoise]) -> np.ndarray:
    """Ray-cast the right view through the layer stack, sampling textures continuously."""
    h, w = spec.height, spec.width
    xr = np.broadcast_to(np.arange(w, dtype=np.float64), (h, w))
    ys = np.broadcast_to(np.arange(h, dtype=np.float64)[:, None], (h, w))
    best = np.full((h, w), -np.inf)
    out = np.zeros((h, w, 3))
    for idx, layer in enumerate(spec.layers):
        d0 = spec.rig.bf / layer.depth
        # x_l - d(x_l) = x_r with d(x) = d0 + slope * (x - x0)
        xl = (xr + d0 - layer.slope * layer.x0) / (1.0 - layer.slope)
        d = layer.disparity_at(spec.rig, xl)
        rows = (ys >= layer.y0) & (ys < layer.y1)
        if idx == 0:
            cover = rows
        else:
            cover = rows & (xl >= layer.x0 - 0.5) & (xl < layer.x1 - 0.5)
        nearer = cover & (d > best)
        best = np.where(nearer, d, best)
        out = np.where(nearer[..., None], textures[idx](xl, ys), out)
    return out


def generate(spec: SceneSpec) -> SyntheticScene:
    """Render a scene. Deterministic in ``spec`` (including its seed)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    textures = [_ValueNoise(rng, spec) for _ in spec.layers]
    h, w = spec.height, spec.width
    disp, owner = _layer_maps(spec)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    left = np.zeros((h, w, 3))
    for idx, tex in enumerate(textures):
        sel = owner == idx
        if np.any(sel):
            left[sel] = tex(xs[sel], ys[sel])
    left = rgb_image(left)

    integral = np.all(disp == np.rint(disp))
    right_splat, visible = render_right(left, disp)
    right = right_splat if integral else rgb_image(_render_right_exact(spec, textures))

    return SyntheticScene(
        left=left,
        right=right,
        gt_depth=spec.rig.bf / disp,
        gt_disparity=disp,
        gt_occlusion=visible,
        rig=spec.rig,
        seed=spec.seed,
        zbuffer_occluded=zbuffer_occlusion(disp),
        right_disparity=right_view_disparity(disp),
        spec=spec,
    )


def plane_spec(disparity: float = 8.0, width: int = 64, height: int = 48, seed: int = 0, **kw) -> SceneSpec:
    rig = kw.pop("rig", DESK_RIG)
    return SceneSpec(
        width=width,
        height=height,
        layers=(Layer(rig.bf / disparity, 0, 0, width, height),),
        rig=rig,
        seed=seed,
        **kw,
    )


def two_layer_spec(
    width: int = 128,
    height: int = 96,
    background: float = 5.0,
    foreground: float = 14.0,
    seed: int = 0,
    **kw,
) -> SceneSpec:
    """Full-frame background plus a centred foreground rectangle; disparities in pixels."""
    rig = kw.pop("rig", DESK_RIG)
    fx0, fx1 = int(round(width * 0.35)), int(round(width * 0.7))
    fy0, fy1 = int(round(height * 0.25)), int(round(height * 0.75))
    return SceneSpec(
        width=width,
        height=height,
        layers=(
            Layer(rig.bf / background, 0, 0, width, height),
            Layer(rig.bf / foreground, fx0, fy0, fx1, fy1),
        ),
        rig=rig,
        seed=seed,
        **kw,
    )


def slanted_spec(width: int = 96, height: int = 64, start: float = 4.0, slope: float = 0.05, seed: int = 0, **kw) -> SceneSpec:
    """A single full-frame plane whose disparity ramps linearly along x."""
    rig = kw.pop("rig", DESK_RIG)
    return SceneSpec(
        width=width,
        height=height,
        layers=(Layer(rig.bf / start, 0, 0, width, height, slope=slope),),
        rig=rig,
        seed=seed,
        **kw,
    )


def textureless_spec(**kw) -> SceneSpec:
    """Two-layer scene with flat colours: the photometric losses carry no depth signal."""
    kw.setdefault("amplitude", 0.0)
    return two_layer_spec(**kw)
