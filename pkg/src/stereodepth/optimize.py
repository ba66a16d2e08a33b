"""Per-scene gradient descent on the depth parameters.

Each iteration runs the depth head, both reconstructions and the masks,
evaluates the loss for the chosen mode, backpropagates through the tape and
takes one Adam step.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import depth_model as dm
from . import field_core as fc
from . import losses as L
from . import occlusion as occ
from . import reconstruction as rc
from .geometry import CameraRig, DisparityLadder, disparity_to_depth
from .synth import SyntheticScene

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ("iter", "L_CR", "L_FR", "L_CS", "L_FS", "total")


@dataclass(frozen=True)
class OptimizerConfig:
    learning_rate: float = 0.3
    beta1: float = 0.5
    beta2: float = 0.999
    epsilon: float = 1e-8
    iterations: int = 200
    # (iteration, multiplier) pairs; ``None`` halves at 60% and again at 80%
    schedule: tuple[tuple[int, float], ...] | None = None
    mode: str = "coarse-to-fine"
    w: float = 0.5
    k: int = 41
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    clip_norm: float = 10.0
    occlusion_mask: bool = True
    # the fine-branch losses train only the residual; without this the
    # continuous warp loss drags the density volume into local minima
    detach_coarse: bool = True
    # fraction of iterations during which only the density volume trains, so
    # the residual starts from a converged coarse depth instead of saturating
    residual_warmup: float = 0.5

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")
        if not 0 <= self.residual_warmup < 1:
            raise ValueError("residual_warmup must lie in [0, 1)")
        if self.iterations < 1:
            raise ValueError("need at least one iteration")
        if self.mode not in L.MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {L.MODES}")
        steps = [it for it, _ in self.resolved_schedule()]
        if any(b <= a for a, b in zip(steps, steps[1:])):
            raise ValueError("schedule iterations must be strictly increasing")

    def resolved_schedule(self) -> tuple[tuple[int, float], ...]:
        if self.schedule is not None:
            return tuple((int(i), float(m)) for i, m in self.schedule)
        return ((int(0.6 * self.iterations), 0.5), (int(0.8 * self.iterations), 0.25))

    def lr_at(self, iteration: int) -> float:
        mult = 1.0
        for start, m in self.resolved_schedule():
            if iteration >= start:
                mult = m
        return self.learning_rate * mult


@dataclass
class AdamState:
    # per-parameter step counts, so a parameter that starts training late
    # gets its own bias correction
    step: dict[str, int] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    config: OptimizerConfig,
    iteration: int,
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update; returns new arrays and a new state."""
    lr = config.lr_at(iteration)
    b1, b2 = config.beta1, config.beta2
    new_params = dict(params)
    new_step, new_m, new_v = dict(state.step), dict(state.m), dict(state.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
        t = state.step.get(name, 0) + 1
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_params[name] = p - lr * m_hat / (np.sqrt(v_hat) + config.epsilon)
        new_step[name], new_m[name], new_v[name] = t, m, v
    return new_params, AdamState(new_step, new_m, new_v)


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if max_norm <= 0 or total <= max_norm:
        return grads
    scale = max_norm / total
    return {k: g * scale for k, g in grads.items()}


@dataclass
class Evaluation:
    """Everything one forward pass produces for a given parameter set."""

    output: dm.CoarseFineOutput
    terms: L.LossTerms
    total: fc.Var
    mask_volume: np.ndarray
    mask_disparity: np.ndarray
    mask_occlusion: np.ndarray
    mask_edge: np.ndarray


@dataclass
class RunReport:
    trace: list[dict[str, float]]
    output: dm.CoarseFineOutput
    masks: dict[str, np.ndarray]
    params: dict[str, np.ndarray]
    duration: float
    config: OptimizerConfig

    def config_echo(self) -> dict:
        return asdict(self.config)


def initial_params(shape: tuple[int, int], ladder: DisparityLadder, rig: CameraRig, mode: str) -> dict[str, np.ndarray]:
    h, w = shape
    params = {"raw_density": np.zeros((h, w, ladder.n))}
    if mode == "cdc-only":
        start = float(np.mean(ladder.levels))
        params["raw_disparity"] = np.full((h, w), start + math.log(-math.expm1(-start)))
    else:
        params["raw_residual"] = np.zeros((h, w))
    return params


def trainable(mode: str) -> tuple[str, ...]:
    return {
        "coarse-to-fine": ("raw_density", "raw_residual"),
        "ddc-only": ("raw_density",),
        "cdc-only": ("raw_disparity",),
    }[mode]


def evaluate_params(
    params: dict,
    left: np.ndarray,
    right: np.ndarray,
    rig: CameraRig,
    ladder: DisparityLadder,
    config: OptimizerConfig,
    frozen_masks: dict[str, np.ndarray] | None = None,
) -> Evaluation:
    """Forward pass and loss for ``params`` (arrays or tape-registered Vars).

    Masks never carry gradient. ``frozen_masks`` (keys as in
    :attr:`RunReport.masks`) replaces the computed ones, which keeps the loss
    a smooth function of the parameters for finite-difference checks.
    """
    mode, wts = config.mode, config.weights
    if mode == "cdc-only":
        prob = fc.softmax_channels(params["raw_density"])
        disp = fc.softplus(params["raw_disparity"])
        depth = disparity_to_depth(rig, disp)
        zeros = fc.Var(np.zeros(disp.shape))
        out = dm.CoarseFineOutput(disp, depth, zeros, depth, disp, prob)
    else:
        scene_params = dm.SceneParams(params["raw_density"], params.get("raw_residual", np.zeros(left.shape[:2])))
        out = dm.forward(scene_params, rig, ladder, config.w, use_residual=mode == "coarse-to-fine", detach_coarse=config.detach_coarse)

    m_edge = rc.edge_mask(out.fine_depth, rig)
    terms = L.LossTerms()
    if mode != "cdc-only":
        right_est, prob_r = rc.reconstruct_right(left, params["raw_density"], ladder)
        m_v = occ.mask_from_volume(occ.cyclic_volume(prob_r, ladder))
        m_m = occ.mask_from_disparity(out.coarse_disparity, config.k)
        if frozen_masks is not None:
            m_v, m_m = frozen_masks["mask_volume"], frozen_masks["mask_disparity"]
        terms.coarse_reconstruction = L.loss_coarse_reconstruction(right_est, right, alpha1=wts.alpha1)
        terms.coarse_smooth = L.loss_coarse_smooth(out.coarse_disparity, left, wts.beta_c)
    else:
        m_v = np.ones(left.shape[:2])
        m_m = np.ones(left.shape[:2])
    if frozen_masks is not None:
        m_edge = frozen_masks["mask_edge"]
    m_occ = occ.combine(m_v, m_m)
    used_occ = m_occ if (config.occlusion_mask and mode != "cdc-only") else np.ones_like(m_occ)
    if mode != "ddc-only":
        left_est = rc.reconstruct_left(right, out.fine_depth, rig)
        terms.fine_reconstruction = L.loss_fine_reconstruction(left_est, left, used_occ, m_edge, wts.alpha2)
        terms.fine_smooth = L.loss_fine_smooth(out.fine_disparity, left, used_occ, m_edge, wts.beta_f)
    total = L.total_loss(terms, wts, mode)
    return Evaluation(out, terms, total, m_v, m_m, m_occ, m_edge)


def _trace_row(iteration: int, ev: Evaluation, mode: str) -> dict[str, float]:
    vals = ev.terms.values()
    unused = {"ddc-only": ("L_FR", "L_FS"), "cdc-only": ("L_CR", "L_CS")}.get(mode, ())
    row = {"iter": iteration}
    for key in ("L_CR", "L_FR", "L_CS", "L_FS"):
        row[key] = math.nan if key in unused else vals[key]
    row["total"] = float(ev.total.value)
    return row


def optimize_scene(
    scene: SyntheticScene,
    config: OptimizerConfig,
    ladder: DisparityLadder,
    params: dict[str, np.ndarray] | None = None,
) -> RunReport:
    """Fit depth parameters to one stereo pair.

    ``params`` overrides the default initialisation (uniform probability,
    zero residual); names follow :func:`initial_params`.
    """
    start = time.perf_counter()
    rig = scene.rig
    left, right = scene.left, scene.right
    current = initial_params(left.shape[:2], ladder, rig, config.mode)
    if params is not None:
        current.update({k: np.array(v, dtype=np.float64) for k, v in params.items()})
    names = trainable(config.mode)
    warmup = int(config.residual_warmup * config.iterations)
    state = AdamState()
    trace = []
    for it in range(config.iterations):
        active = tuple(k for k in names if not (k == "raw_residual" and it < warmup))
        tape = fc.Tape()
        with tape:
            bound = {k: (tape.param(v, k) if k in names else v) for k, v in current.items()}
            try:
                ev = evaluate_params(bound, left, right, rig, ladder, config)
            except L.NonFiniteLossError as err:
                logger.error("iteration %d: %s", it, err)
                raise
        grads = tape.backward(ev.total)
        if not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise L.NonFiniteLossError({k: float(np.sum(g)) for k, g in grads.items()})
        grads = clip_by_global_norm({k: g for k, g in grads.items() if k in active}, config.clip_norm)
        trace.append(_trace_row(it, ev, config.mode))
        if it % max(1, config.iterations // 10) == 0:
            logger.info("iter %d total %.6f", it, trace[-1]["total"])
        updated, state = adam_step({k: current[k] for k in active}, grads, state, config, it)
        current.update(updated)

    final = evaluate_params(current, left, right, rig, ladder, config)
    masks = {
        "mask_volume": final.mask_volume,
        "mask_disparity": final.mask_disparity,
        "mask_occlusion": final.mask_occlusion,
        "mask_edge": final.mask_edge,
    }
    return RunReport(trace, final.output, masks, current, time.perf_counter() - start, config)
