"""Run configuration stored as an INI document.

Every section and key is optional; missing values take the defaults below.
Unknown sections or keys are rejected so that typos cannot silently fall back
to a default. :func:`dumps` writes the fully resolved configuration, which is
what gets echoed into output directories: loading it back yields an equal
:class:`RunConfig`.

Sections and keys::

    [run]        seed, out
    [scene]      width, height, octaves, amplitude, cell, d_min, d_max,
                 layer0, layer1, ...   ("depth x0 y0 x1 y1 [slope]")
    [rig]        baseline, focal_x, focal_y, cx, cy
    [ladder]     d_min, d_max, n
    [optimizer]  learning_rate, beta1, beta2, epsilon, iterations,
                 schedule ("iter:mult, iter:mult" or "default"), mode, w, k,
                 clip_norm, occlusion_mask, detach_coarse, residual_warmup
    [loss]       lambda1, lambda2, lambda3, alpha1, alpha2, beta_c, beta_f
    [eval]       cap, crop ("top bottom left right" or "none"), median_scaling
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from . import synth
from .geometry import CameraRig, DisparityLadder, discretize
from .losses import LossWeights
from .metrics import EvalConfig
from .optimize import OptimizerConfig


class ConfigError(ValueError):
    """Malformed or unknown configuration entries."""


@dataclass(frozen=True)
class LadderSpec:
    d_min: float = 2.0
    d_max: float = 32.0
    n: int = 17

    def build(self) -> DisparityLadder:
        return discretize(self.d_min, self.d_max, self.n)


@dataclass(frozen=True)
class RunConfig:
    scene: synth.SceneSpec = field(default_factory=synth.two_layer_spec)
    ladder: LadderSpec = LadderSpec()
    optimizer: OptimizerConfig = OptimizerConfig()
    eval: EvalConfig = EvalConfig()
    seed: int = 0
    out: str = ""

    def with_overrides(self, seed: int | None = None, mode: str | None = None, out: str | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seed=seed, scene=replace(cfg.scene, seed=seed))
        if mode is not None:
            cfg = replace(cfg, optimizer=replace(cfg.optimizer, mode=mode))
        if out is not None:
            cfg = replace(cfg, out=out)
        return cfg


_SCENE_KEYS = ("width", "height", "octaves", "amplitude", "cell", "d_min", "d_max")
_RIG_KEYS = tuple(f.name for f in fields(CameraRig))
_LADDER_KEYS = tuple(f.name for f in fields(LadderSpec))
_OPT_KEYS = (
    "learning_rate", "beta1", "beta2", "epsilon", "iterations", "schedule", "mode",
    "w", "k", "clip_norm", "occlusion_mask", "detach_coarse", "residual_warmup",
)
_LOSS_KEYS = tuple(f.name for f in fields(LossWeights))
_EVAL_KEYS = ("cap", "crop", "median_scaling")
_RUN_KEYS = ("seed", "out")

SECTIONS = ("run", "scene", "rig", "ladder", "optimizer", "loss", "eval")


def _convert(raw: str, like, key: str):
    """Parse ``raw`` into the type of the default value ``like``."""
    try:
        if isinstance(like, bool):
            low = raw.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(like, int):
            return int(raw)
        if isinstance(like, float):
            return float(raw)
        return raw.strip()
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(like).__name__}") from None


def _parse_layer(raw: str, key: str) -> synth.Layer:
    parts = raw.split()
    if len(parts) not in (5, 6):
        raise ConfigError(f"{key}: expected 'depth x0 y0 x1 y1 [slope]', got {raw!r}")
    try:
        depth = float(parts[0])
        x0, y0, x1, y1 = (int(p) for p in parts[1:5])
        slope = float(parts[5]) if len(parts) == 6 else 0.0
    except ValueError:
        raise ConfigError(f"{key}: malformed layer {raw!r}") from None
    return synth.Layer(depth, x0, y0, x1, y1, slope)


def _parse_schedule(raw: str):
    text = raw.strip().lower()
    if text in ("", "default"):
        return None
    pairs = []
    for item in text.split(","):
        try:
            it, mult = item.split(":")
            pairs.append((int(it), float(mult)))
        except ValueError:
            raise ConfigError(f"optimizer.schedule: malformed entry {item!r}") from None
    return tuple(pairs)


def _parse_crop(raw: str):
    text = raw.strip().lower()
    if text in ("", "none"):
        return None
    try:
        vals = tuple(int(v) for v in text.split())
    except ValueError:
        raise ConfigError(f"eval.crop: malformed {raw!r}") from None
    if len(vals) != 4:
        raise ConfigError("eval.crop needs four integers: top bottom left right")
    return vals


def _section_values(parser, name: str, allowed, defaults_obj) -> dict:
    if not parser.has_section(name):
        return {}
    out = {}
    for key, raw in parser.items(name):
        if key not in allowed:
            raise ConfigError(f"unknown key {name}.{key}")
        out[key] = _convert(raw, getattr(defaults_obj, key), f"{name}.{key}")
    return out


def loads(text: str) -> RunConfig:
    parser = configparser.ConfigParser(interpolation=None, default_section="__none__")
    parser.optionxform = str  # keys are case-sensitive
    try:
        parser.read_string(text)
    except configparser.Error as err:
        raise ConfigError(f"unreadable config: {err}") from None
    unknown = set(parser.sections()) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")

    base = RunConfig()
    try:
        run = _section_values(parser, "run", _RUN_KEYS, base)
        rig = replace(base.scene.rig, **_section_values(parser, "rig", _RIG_KEYS, base.scene.rig))

        scene_kw, layers = {}, {}
        if parser.has_section("scene"):
            for key, raw in parser.items("scene"):
                if key.startswith("layer") and key[5:].isdigit():
                    layers[int(key[5:])] = _parse_layer(raw, f"scene.{key}")
                elif key in _SCENE_KEYS:
                    scene_kw[key] = _convert(raw, getattr(base.scene, key), f"scene.{key}")
                else:
                    raise ConfigError(f"unknown key scene.{key}")
        if layers:
            if sorted(layers) != list(range(len(layers))):
                raise ConfigError("scene layers must be numbered layer0, layer1, ... without gaps")
            scene_kw["layers"] = tuple(layers[i] for i in range(len(layers)))
        seed = run.get("seed", base.seed)
        scene = replace(base.scene, rig=rig, seed=seed, **scene_kw)
        if "layers" not in scene_kw and ("width" in scene_kw or "height" in scene_kw):
            # keep the standard two-layer geometry proportional to the frame
            default = synth.two_layer_spec(width=scene.width, height=scene.height)
            scene = replace(scene, layers=default.layers)
        scene.validate()

        ladder = LadderSpec(**_section_values(parser, "ladder", _LADDER_KEYS, base.ladder))

        opt_kw = {}
        if parser.has_section("optimizer"):
            for key, raw in parser.items("optimizer"):
                if key not in _OPT_KEYS:
                    raise ConfigError(f"unknown key optimizer.{key}")
                if key == "schedule":
                    opt_kw[key] = _parse_schedule(raw)
                else:
                    opt_kw[key] = _convert(raw, getattr(base.optimizer, key), f"optimizer.{key}")
        weights = LossWeights(**_section_values(parser, "loss", _LOSS_KEYS, base.optimizer.weights))
        optimizer = OptimizerConfig(**{**_opt_fields(base.optimizer), **opt_kw, "weights": weights})

        ev_kw = {}
        if parser.has_section("eval"):
            for key, raw in parser.items("eval"):
                if key not in _EVAL_KEYS:
                    raise ConfigError(f"unknown key eval.{key}")
                ev_kw[key] = _parse_crop(raw) if key == "crop" else _convert(raw, getattr(base.eval, key), f"eval.{key}")
        evaluation = EvalConfig(**ev_kw)
    except ConfigError:
        raise
    except (ValueError, TypeError) as err:
        raise ConfigError(str(err)) from None

    return RunConfig(scene, ladder, optimizer, evaluation, seed, run.get("out", base.out))


def _opt_fields(opt: OptimizerConfig) -> dict:
    return {f.name: getattr(opt, f.name) for f in fields(opt)}


def load(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None
    return loads(text)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dumps(cfg: RunConfig) -> str:
    """Serialise every resolved value; ``loads(dumps(c)) == c``."""
    lines = ["[run]", f"seed = {cfg.seed}", f"out = {cfg.out}", "", "[scene]"]
    sc = cfg.scene
    for key in _SCENE_KEYS:
        lines.append(f"{key} = {_fmt(getattr(sc, key))}")
    for i, layer in enumerate(sc.layers):
        vals = [_fmt(layer.depth), layer.x0, layer.y0, layer.x1, layer.y1, _fmt(layer.slope)]
        lines.append(f"layer{i} = " + " ".join(str(v) for v in vals))
    lines += ["", "[rig]"] + [f"{k} = {_fmt(getattr(sc.rig, k))}" for k in _RIG_KEYS]
    lines += ["", "[ladder]"] + [f"{k} = {_fmt(getattr(cfg.ladder, k))}" for k in _LADDER_KEYS]
    lines += ["", "[optimizer]"]
    opt = cfg.optimizer
    for key in _OPT_KEYS:
        if key == "schedule":
            sched = "default" if opt.schedule is None else ", ".join(f"{i}:{_fmt(m)}" for i, m in opt.schedule)
            lines.append(f"schedule = {sched}")
        else:
            lines.append(f"{key} = {_fmt(getattr(opt, key))}")
    lines += ["", "[loss]"] + [f"{k} = {_fmt(getattr(opt.weights, k))}" for k in _LOSS_KEYS]
    ev = cfg.eval
    crop = "none" if ev.crop is None else " ".join(str(v) for v in ev.crop)
    lines += ["", "[eval]", f"cap = {_fmt(ev.cap)}", f"crop = {crop}", f"median_scaling = {_fmt(ev.median_scaling)}", ""]
    return "\n".join(lines)


def as_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
