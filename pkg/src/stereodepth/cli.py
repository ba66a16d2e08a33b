"""Command-line entry point: ``stereodepth {synth,optimize,eval,gradcheck}``.

Exit codes: 0 on success, 1 for usage or configuration errors, 2 for runtime
failures (unreadable inputs, non-finite losses, failed gradient checks).
Outputs go to ``--out`` or, by default, a subdirectory of ``$STEREODEPTH_OUT``
(falling back to ``./runs``). Every output directory is assembled in a scratch
directory and renamed into place only once complete.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import config as cfgmod
from . import gradcheck
from . import io
from . import metrics
from . import optimize as op
from . import synth
from .field_core import FieldError
from .losses import MODES, NonFiniteLossError

logger = logging.getLogger("stereodepth")

OUT_ENV = "STEREODEPTH_OUT"
EXIT_OK, EXIT_USAGE, EXIT_FAILURE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def output_root() -> Path:
    return Path(os.environ.get(OUT_ENV) or "runs")


def _resolve_config(args) -> cfgmod.RunConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.RunConfig()
    return cfg.with_overrides(seed=args.seed, mode=getattr(args, "mode", None))


def _target(args, cfg: cfgmod.RunConfig, default_name: str) -> Path:
    if args.out:
        return Path(args.out)
    if cfg.out:
        return Path(cfg.out)
    return output_root() / default_name


# ---------------------------------------------------------------------------
# synth


def write_scene(directory: Path, scene: synth.SyntheticScene, cfg: cfgmod.RunConfig) -> None:
    io.write_rgb(directory / "left.png", scene.left)
    io.write_rgb(directory / "right.png", scene.right)
    io.write_depth(directory / "gt_depth.png", scene.gt_depth)
    io.write_mask(directory / "gt_occlusion.png", scene.gt_occlusion)
    io.save_arrays(directory, {k: getattr(scene, k) for k in io.SCENE_ARRAYS})
    (directory / "config.ini").write_text(cfgmod.dumps(cfg))


def cmd_synth(args) -> int:
    cfg = _resolve_config(args)
    target = _target(args, cfg, f"scene-seed{cfg.seed}")
    scene = synth.generate(cfg.scene)
    with io.atomic_directory(target) as tmp:
        write_scene(tmp, scene, cfg)
    print(f"scene written to {target}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# optimize


def load_scene(directory: Path) -> tuple[synth.SyntheticScene, cfgmod.RunConfig]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FieldError(f"scene directory {directory} does not exist")
    scene_cfg = cfgmod.load(directory / "config.ini")
    arrays = io.load_scene_arrays(directory)
    disp = arrays["gt_disparity"]
    scene = synth.SyntheticScene(
        left=arrays["left"],
        right=arrays["right"],
        gt_depth=arrays["gt_depth"],
        gt_disparity=disp,
        gt_occlusion=arrays["gt_occlusion"],
        rig=scene_cfg.scene.rig,
        seed=scene_cfg.seed,
        zbuffer_occluded=synth.zbuffer_occlusion(disp),
        right_disparity=synth.right_view_disparity(disp),
        spec=scene_cfg.scene,
    )
    return scene, scene_cfg


def write_run(directory: Path, report: op.RunReport, scene: synth.SyntheticScene, cfg: cfgmod.RunConfig) -> dict:
    out = report.output
    w = cfg.optimizer.w
    coarse = out.coarse_depth.value
    fine = out.fine_depth.value
    residual = out.residual.value
    io.write_csv(directory / "trace.csv", report.trace, op.TRACE_COLUMNS)
    io.write_depth(directory / "coarse_depth.png", coarse)
    io.write_depth(directory / "fine_depth.png", fine)
    io.write_residual(directory / "residual.png", residual, w)
    for name, mask in report.masks.items():
        io.write_mask(directory / f"{name}.png", mask)
    io.save_arrays(directory, {"coarse_depth": coarse, "fine_depth": fine, "residual": residual})
    (directory / "config.ini").write_text(cfgmod.dumps(cfg))

    visible = scene.gt_occlusion > 0
    summary = {
        "mode": cfg.optimizer.mode,
        "iterations": cfg.optimizer.iterations,
        "residual_encoding": {
            "formula": "value = round((residual + w/2) / w * 65535)",
            "w": w,
            "zero_point": io.RESIDUAL_ZERO_POINT,
        },
        "depth_encoding": "depth = value / 256 metres",
        "final_loss": {k: v for k, v in report.trace[-1].items() if k != "iter"},
        "metrics_visible": metrics.evaluate(fine, scene.gt_depth, cfg.eval, mask=visible).row(),
    }
    io.write_json(directory / "summary.json", _json_safe(summary))
    return summary


def _json_safe(obj):
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def cmd_optimize(args) -> int:
    cfg = _resolve_config(args)
    if args.scene:
        scene, scene_cfg = load_scene(Path(args.scene))
        # the rig and scene description belong to the data, not to the run
        cfg = replace(cfg, scene=scene_cfg.scene, seed=scene_cfg.seed)
    else:
        scene = synth.generate(cfg.scene)
    target = _target(args, cfg, f"run-{cfg.optimizer.mode}-seed{cfg.seed}")
    report = op.optimize_scene(scene, cfg.optimizer, cfg.ladder.build())
    logger.info("optimisation took %.1f s", report.duration)
    with io.atomic_directory(target) as tmp:
        summary = write_run(tmp, report, scene, cfg)
    m = summary["metrics_visible"]
    print(f"run written to {target}: abs_rel {m['abs_rel']:.4f} rmse {m['rmse']:.4f} ({report.duration:.1f} s)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def format_table(report: metrics.MetricReport) -> str:
    header = " ".join(f"{c:>9}" for c in metrics.METRIC_COLUMNS)
    values = " ".join(f"{getattr(report, c):9.4f}" for c in metrics.METRIC_COLUMNS)
    return f"{header}\n{values}"


def cmd_eval(args) -> int:
    cfg = _resolve_config(args)
    ev = cfg.eval
    if args.cap is not None:
        ev = replace(ev, cap=args.cap)
    if args.median_scale:
        ev = replace(ev, median_scaling=True)
    pred = io.read_depth(args.pred)
    gt = io.read_depth(args.gt)
    if args.pp:
        pred = metrics.post_process(pred, io.read_depth(args.pp))
    report = metrics.evaluate(pred, gt, ev)
    target = _target(args, cfg, "eval")
    with io.atomic_directory(target) as tmp:
        io.write_csv(tmp / "metrics.csv", [report.row()], metrics.METRIC_COLUMNS + ("count",))
    print(format_table(report))
    return EXIT_OK


# ---------------------------------------------------------------------------
# gradcheck


def cmd_gradcheck(args) -> int:
    seed = args.seed if args.seed is not None else 0
    results = gradcheck.run(seed=seed)
    width = max(len(r.name) for r in results)
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max_rel_err={r.max_rel_error:.3e}  {status}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} operation(s) failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="INI run configuration")
    common.add_argument("--seed", type=int, help="scene seed (overrides the config)")
    common.add_argument("--out", metavar="DIR", help=f"output directory (default under ${OUT_ENV} or ./runs)")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="stereodepth", description="Coarse-to-fine stereo depth by direct optimisation.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="render a synthetic stereo scene")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("optimize", parents=[common], help="fit depth to a stereo scene")
    p.add_argument("scene", nargs="?", help="scene directory from 'synth' (default: synthesise from the config)")
    p.add_argument("--mode", choices=MODES)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("eval", parents=[common], help="score a depth prediction against ground truth")
    p.add_argument("pred", help="predicted depth (16-bit PNG, value/256 m, or .npy)")
    p.add_argument("gt", help="ground-truth depth (same formats)")
    p.add_argument("--pp", metavar="FLIPPED_PRED", help="prediction for the mirrored input; average before scoring")
    p.add_argument("--median-scale", action="store_true", help="rescale the prediction by median(gt)/median(pred)")
    p.add_argument("--cap", type=float, metavar="METERS", help="maximum evaluated depth")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of every differentiable op")
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except cfgmod.ConfigError as err:
        print(f"stereodepth: configuration error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except NonFiniteLossError as err:
        print(f"stereodepth: optimisation diverged: {err}", file=sys.stderr)
        for key, value in err.terms.items():
            print(f"  {key} = {value!r}", file=sys.stderr)
        return EXIT_FAILURE
    except (FieldError, OSError) as err:
        print(f"stereodepth: {err}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
