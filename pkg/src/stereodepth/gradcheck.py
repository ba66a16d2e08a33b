"""Finite-difference verification of every differentiable operation.

Each check builds a small random instance (16x12 pixels, 5 disparity levels),
reduces the operation's output to a scalar with fixed random weights, and
compares the tape gradient projected on random directions against central
differences of the same scalar.

Operations are looked up through their modules at call time, so a test can
monkeypatch one of them and watch the corresponding check fail.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import depth_model as dm
from . import field_core as fc
from . import geometry as geo
from . import losses as L
from . import reconstruction as rc

logger = logging.getLogger(__name__)

HEIGHT, WIDTH, LEVELS = 12, 16, 5
TOLERANCE = 1e-4
STEP = 1e-4
DIRECTIONS = 100

RIG = geo.CameraRig(baseline=0.5, focal_x=20.0, focal_y=20.0, cx=8.0, cy=6.0)
LADDER = geo.discretize(1.0, 6.0, LEVELS)
W_RES = 1.0


@dataclass
class Case:
    """Inputs (by name) and a scalar function of them."""

    inputs: dict[str, np.ndarray]
    fn: Callable[[dict[str, fc.Var]], fc.Var]


@dataclass(frozen=True)
class CheckResult:
    name: str
    max_rel_error: float
    passed: bool


def _image(rng, h=HEIGHT, w=WIDTH):
    return rng.uniform(0.1, 0.9, size=(h, w, 3))


def _depth(rng):
    # fine depths whose warped x stay away from the image border
    return rng.uniform(RIG.bf / 4.0, RIG.bf / 2.0, size=(HEIGHT, WIDTH))


def _case_bilinear(rng):
    field = rng.normal(size=(HEIGHT, WIDTH))
    x = rng.uniform(0.2, WIDTH - 1.2, size=(7, 9))
    y = rng.uniform(0.2, HEIGHT - 1.2, size=(7, 9))
    r = rng.uniform(0.5, 1.5, size=(7, 9))
    return Case(
        {"field": field, "x": x, "y": y},
        lambda v: fc.sum_(fc.bilinear_sample(v["field"], v["x"], v["y"]) * r),
    )


def _case_sample_x(rng):
    field = rng.normal(size=(HEIGHT, WIDTH, 3))
    offset = rng.uniform(-3.3, 3.3, size=(HEIGHT, WIDTH))
    r = rng.uniform(0.5, 1.5, size=(HEIGHT, WIDTH, 3))
    return Case({"field": field, "offset": offset}, lambda v: fc.sum_(fc.sample_x(v["field"], v["offset"]) * r))


def _case_shift(rng):
    field = rng.normal(size=(HEIGHT, WIDTH))
    r = rng.uniform(0.5, 1.5, size=(HEIGHT, WIDTH))
    return Case({"field": field}, lambda v: fc.sum_(fc.horizontal_shift(v["field"], 2.37, direction=1) * r))


def _case_softmax(rng):
    vol = rng.normal(size=(HEIGHT, WIDTH, LEVELS))
    r = rng.uniform(0.5, 1.5, size=vol.shape)
    return Case({"volume": vol}, lambda v: fc.sum_(fc.softmax_channels(v["volume"]) * r))


def _case_coarse_disparity(rng):
    vol = rng.normal(size=(HEIGHT, WIDTH, LEVELS))
    r = rng.uniform(0.5, 1.5, size=(HEIGHT, WIDTH))
    return Case({"density": vol}, lambda v: fc.sum_(dm.coarse_disparity(v["density"], LADDER)[1] * r))


def _case_disparity_to_depth(rng):
    d = rng.uniform(1.0, 6.0, size=(HEIGHT, WIDTH))
    r = rng.uniform(0.5, 1.5, size=d.shape)
    return Case({"disparity": d}, lambda v: fc.sum_(geo.disparity_to_depth(RIG, v["disparity"]) * r))


def _case_residual(rng):
    raw = rng.normal(size=(HEIGHT, WIDTH))
    r = rng.uniform(0.5, 1.5, size=raw.shape)
    return Case({"raw_residual": raw}, lambda v: fc.sum_(dm.residual_depth(v["raw_residual"], W_RES) * r))


def _case_fine_depth(rng):
    c = rng.uniform(2.0, 4.0, size=(HEIGHT, WIDTH))
    res = rng.uniform(-0.4, 0.4, size=c.shape)
    r = rng.uniform(0.5, 1.5, size=c.shape)
    return Case(
        {"coarse": c, "residual": res},
        lambda v: fc.sum_(dm.fine_depth(v["coarse"], v["residual"], floor=0.5) * r),
    )


def _case_forward(rng):
    dens = rng.normal(size=(HEIGHT, WIDTH, LEVELS))
    raw = rng.normal(size=(HEIGHT, WIDTH))
    r = rng.uniform(0.5, 1.5, size=(HEIGHT, WIDTH))

    def fn(v):
        out = dm.forward(dm.SceneParams(v["density"], v["raw_residual"]), RIG, LADDER, W_RES)
        return fc.sum_(out.fine_disparity * r)

    return Case({"density": dens, "raw_residual": raw}, fn)


def _case_reconstruct_right(rng):
    img = _image(rng)
    dens = rng.normal(size=(HEIGHT, WIDTH, LEVELS))
    r = rng.uniform(0.5, 1.5, size=img.shape)
    return Case(
        {"left": img, "density": dens},
        lambda v: fc.sum_(rc.reconstruct_right(v["left"], v["density"], LADDER)[0] * r),
    )


def _case_reconstruct_left(rng):
    img = _image(rng)
    depth = _depth(rng)
    r = rng.uniform(0.5, 1.5, size=img.shape)
    return Case(
        {"right": img, "depth": depth},
        lambda v: fc.sum_(rc.reconstruct_left(v["right"], v["depth"], RIG) * r),
    )


def _case_ssim(rng):
    a, b = _image(rng), _image(rng)
    mask = (rng.uniform(size=(HEIGHT, WIDTH)) > 0.2).astype(float)
    r = rng.uniform(0.5, 1.5, size=(HEIGHT, WIDTH))
    return Case({"a": a, "b": b}, lambda v: fc.sum_(L.ssim(v["a"], v["b"], mask) * r))


def _case_coarse_reconstruction(rng):
    est, ref = _image(rng), _image(rng)
    return Case({"estimate": est}, lambda v: L.loss_coarse_reconstruction(v["estimate"], ref))


def _case_fine_reconstruction(rng):
    est, ref = _image(rng), _image(rng)
    m_occ = rng.uniform(size=(HEIGHT, WIDTH))
    m_edge = (rng.uniform(size=(HEIGHT, WIDTH)) > 0.1).astype(float)
    return Case({"estimate": est}, lambda v: L.loss_fine_reconstruction(v["estimate"], ref, m_occ, m_edge))


def _case_coarse_smooth(rng):
    d = rng.uniform(1.0, 6.0, size=(HEIGHT, WIDTH))
    img = _image(rng)
    return Case({"disparity": d}, lambda v: L.loss_coarse_smooth(v["disparity"], img))


def _case_fine_smooth(rng):
    d = rng.uniform(1.0, 6.0, size=(HEIGHT, WIDTH))
    img = _image(rng)
    m_occ = rng.uniform(size=d.shape)
    m_edge = (rng.uniform(size=d.shape) > 0.1).astype(float)
    return Case({"disparity": d}, lambda v: L.loss_fine_smooth(v["disparity"], img, m_occ, m_edge))


def _case_total(rng):
    """Full pipeline: scene parameters to the weighted total loss."""
    from .optimize import OptimizerConfig, evaluate_params

    left, right = _image(rng), _image(rng)
    dens = rng.normal(size=(HEIGHT, WIDTH, LEVELS))
    raw = rng.normal(scale=0.5, size=(HEIGHT, WIDTH))
    config = OptimizerConfig(w=W_RES, k=5, detach_coarse=False)
    base = evaluate_params({"raw_density": dens, "raw_residual": raw}, left, right, RIG, LADDER, config)
    masks = {"mask_volume": base.mask_volume, "mask_disparity": base.mask_disparity, "mask_edge": base.mask_edge}

    def fn(v):
        params = {"raw_density": v["raw_density"], "raw_residual": v["raw_residual"]}
        return evaluate_params(params, left, right, RIG, LADDER, config, frozen_masks=masks).total

    return Case({"raw_density": dens, "raw_residual": raw}, fn)


CHECKS: dict[str, Callable[[np.random.Generator], Case]] = {
    "bilinear_sample": _case_bilinear,
    "sample_x": _case_sample_x,
    "horizontal_shift": _case_shift,
    "softmax_channels": _case_softmax,
    "coarse_disparity": _case_coarse_disparity,
    "disparity_to_depth": _case_disparity_to_depth,
    "residual_depth": _case_residual,
    "fine_depth": _case_fine_depth,
    "forward": _case_forward,
    "reconstruct_right": _case_reconstruct_right,
    "reconstruct_left": _case_reconstruct_left,
    "ssim": _case_ssim,
    "loss_coarse_reconstruction": _case_coarse_reconstruction,
    "loss_fine_reconstruction": _case_fine_reconstruction,
    "loss_coarse_smooth": _case_coarse_smooth,
    "loss_fine_smooth": _case_fine_smooth,
    "total_loss": _case_total,
}


def _scalar(case: Case, values: dict[str, np.ndarray]) -> float:
    return float(case.fn({k: fc.Var(v) for k, v in values.items()}).value)


def check_case(case: Case, rng: np.random.Generator, directions: int = DIRECTIONS, step: float = STEP) -> float:
    """Largest relative error between analytic and central-difference slopes."""
    tape = fc.Tape()
    with tape:
        bound = {k: tape.param(v, k) for k, v in case.inputs.items()}
        out = case.fn(bound)
    grads = tape.backward(out)

    worst = 0.0
    for _ in range(directions):
        dirs = {k: rng.normal(size=v.shape) for k, v in case.inputs.items()}
        total = np.sqrt(sum(float(np.sum(d * d)) for d in dirs.values()))
        dirs = {k: d / total for k, d in dirs.items()}
        plus = _scalar(case, {k: v + step * dirs[k] for k, v in case.inputs.items()})
        minus = _scalar(case, {k: v - step * dirs[k] for k, v in case.inputs.items()})
        numeric = (plus - minus) / (2 * step)
        analytic = sum(float(np.sum(grads[k] * dirs[k])) for k in case.inputs)
        scale = max(abs(numeric), abs(analytic), 1e-8)
        worst = max(worst, abs(numeric - analytic) / scale)
    return worst


def run(names=None, seed: int = 0, directions: int = DIRECTIONS, tolerance: float = TOLERANCE) -> list[CheckResult]:
    results = []
    for name in names or CHECKS:
        if name not in CHECKS:
            raise KeyError(f"no gradient check named {name!r}")
        rng = np.random.default_rng([seed, sorted(CHECKS).index(name)])
        start = time.perf_counter()
        err = check_case(CHECKS[name](rng), rng, directions)
        logger.debug("%s: max rel err %.3e in %.2fs", name, err, time.perf_counter() - start)
        results.append(CheckResult(name, err, bool(err < tolerance)))
    return results
