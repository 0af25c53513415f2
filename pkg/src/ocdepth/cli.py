"""``ocdepth`` command-line interface.

Subcommands: ``iou-table``, ``eval``, ``synth``, ``train``, ``sweep`` and
``gradcheck``. Every subcommand accepts ``--config FILE`` with ``key=value``
lines (keys are the long flag names, dashes or underscores); flags given on
the command line override the file.

Exit codes: 0 success, 1 validation failure (bad arguments, a failed check),
2 I/O or format error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np

from .depth import save_depth_image
from .evaluation import (
    CENTER_DISTANCE_THRESHOLD,
    KITTI_IOU_THRESHOLDS,
    KITTI_REFERENCE_IOU,
    SURFACE_ERROR_DIMS,
    SURFACE_ERRORS,
    MatchSpec,
    evaluate,
    kitti_frames,
    surface_error_iou_table,
)
from .kitti import Difficulty, KittiAnnotation, KittiFormatError, read_frame_dir, serialize_calib, write_label_file

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


class ValidationError(Exception):
    """A check performed by a subcommand failed."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _float_list(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ratio(text: str) -> float:
    val = float(text)
    if not 0.0 <= val <= 1.0:
        raise argparse.ArgumentTypeError(f"expected a value in [0, 1], got {text}")
    return val


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return val


def _buckets(text: str) -> list[tuple[float, float]]:
    out = []
    for part in text.split(","):
        lo, sep, hi = part.strip().partition("-")
        if not sep:
            raise argparse.ArgumentTypeError(f"range bucket must look like 'min-max', got {part!r}")
        out.append((float(lo), float(hi)))
    return out


def read_config(path: str) -> dict[str, str]:
    """Parse a ``key=value`` file; blank lines and ``#`` comments are ignored."""
    cfg = {}
    for i, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValidationError(f"{path}:{i}: expected key=value")
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


# ---------------------------------------------------------------------------
# subcommands


def iou_table_csv(dims, errors, table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["category", "length", "d_s2c", *[f"{e:.2f}" for e in errors]])
    for (cat, _w, _h, l), row in zip(dims, table):
        writer.writerow([cat, repr(float(l)), repr(l / 2.0), *[repr(float(v)) for v in row]])
    return buf.getvalue()


def cmd_iou_table(args) -> int:
    """IoU lost to a radial error along the heading, per class; checked against the reference."""
    errors = args.errors if args.errors is not None else list(SURFACE_ERRORS)
    table = surface_error_iou_table(SURFACE_ERROR_DIMS, errors)
    text = iou_table_csv(SURFACE_ERROR_DIMS, errors, table)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    bad = []
    for (cat, _w, _h, l), row in zip(SURFACE_ERROR_DIMS, table):
        if tuple(errors) == SURFACE_ERRORS:
            expected = KITTI_REFERENCE_IOU[cat]
            tol = args.tolerance
        else:
            expected = [max(0.0, (l - e) / (l + e)) for e in errors]
            tol = 1e-9
        bad += [(cat, e, v, x) for e, v, x in zip(errors, row, expected) if abs(v - x) > tol]
    for cat, e, v, x in bad:
        print(f"deviation: {cat} e={e}: {v:.4f} vs {x:.4f}", file=sys.stderr)
    return EXIT_VALIDATION if bad else EXIT_OK


def cmd_eval(args) -> int:
    """Evaluate a KITTI result directory against a label directory."""
    gt = read_frame_dir(args.gt)
    det = read_frame_dir(args.det) if Path(args.det).is_dir() else None
    if det is None:
        raise FileNotFoundError(f"detection directory not found: {args.det}")
    if not gt:
        raise FileNotFoundError(f"no label files in {args.gt}")
    frames = kitti_frames(gt, det)
    categories = args.categories.split(",")
    if args.threshold is not None:
        specs = {c: MatchSpec(args.criterion, args.threshold) for c in categories}
    elif args.criterion == "center_distance":
        specs = {c: MatchSpec(args.criterion, CENTER_DISTANCE_THRESHOLD) for c in categories}
    else:
        specs = {c: MatchSpec(args.criterion, KITTI_IOU_THRESHOLDS.get(c, 0.5)) for c in categories}
    levels = []
    for name in args.difficulty.split(","):
        name = name.strip().lower()
        if name == "all":
            levels.append(None)
        elif name.upper() in Difficulty.__members__ and name != "ignored":
            levels.append(Difficulty[name.upper()])
        else:
            raise ValidationError(f"unknown difficulty {name!r}")
    report = evaluate(frames, categories, specs, levels, args.buckets, args.center_threshold)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(report.to_json())
    (out / "report.csv").write_text(report.to_csv())
    print(report.summary())
    return EXIT_OK


def cmd_synth(args) -> int:
    """Write generated scenes: JSON, depth image, KITTI label and calibration per frame."""
    from .synth import SceneConfig, generate_scene

    out = Path(args.out)
    for sub in ("label_2", "calib", "depth", "scenes"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    seeds = np.random.SeedSequence(args.seed).generate_state(args.scenes)
    for i, s in enumerate(seeds):
        sample = generate_scene(SceneConfig(), int(s))
        fid = f"{i:06d}"
        (out / "scenes" / f"{fid}.json").write_text(sample.to_json())
        save_depth_image(out / "depth" / f"{fid}.ocdi", sample.depth)
        anns = [KittiAnnotation.from_box(b, sample.cam, truncated=0.0, occluded=0) for b in sample.boxes]
        write_label_file(out / "label_2" / f"{fid}.txt", anns)
        (out / "calib" / f"{fid}.txt").write_text(serialize_calib(sample.cam))
    print(f"wrote {args.scenes} scene(s) to {out}")
    return EXIT_OK


def _train_config(args):
    from .synth import TrainConfig

    return TrainConfig(lam=args.lam, steps=args.steps, lr=args.lr, seed=args.seed, hidden=args.hidden,
                       n_train=args.train_scenes, n_test=args.test_scenes)


def cmd_train(args) -> int:
    """Train the toy model once and write its parameters and held-out metrics."""
    from .synth import train_toy

    model, res = train_toy(_train_config(args))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "model.npz", **model.params())
    metrics = {"lambda": args.lam, "seed": args.seed, "fg": asdict(res.fg), "raw": asdict(res.raw), "ap40": res.ap40,
               "loss_first": res.loss_history[0], "loss_last": res.loss_history[-1]}
    (out / "metrics.json").write_text(json.dumps(metrics, indent=2))
    (out / "loss.csv").write_text("step,loss\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(res.loss_history)))
    print(f"fg abs_rel={res.fg.abs_rel:.4f} raw abs_rel={res.raw.abs_rel:.4f} loss {res.loss_history[0]:.3f} -> "
          f"{res.loss_history[-1]:.3f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    """Train over a grid of foreground weights and seeds; write the sweep CSV."""
    from .synth import lambda_sweep

    base = _train_config(args)
    seeds = list(range(args.seed, args.seed + args.seeds))
    report = lambda_sweep(args.lambdas, seeds, base, jobs=args.jobs)
    Path(args.out).write_text(report.to_csv())
    for lam in report.lambdas():
        print(f"lambda={lam:g}  fg_abs_rel={report.mean(lam, 'fg_abs_rel'):.4f}  "
              f"raw_abs_rel={report.mean(lam, 'raw_abs_rel'):.4f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    """Run every finite-difference gradient suite; fail if any entry disagrees."""
    from .gradcheck import run_all

    results = run_all(n=args.instances, seed=args.seed)
    for r in results:
        print(r.line())
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


# ---------------------------------------------------------------------------
# parser


def _add_train_flags(p):
    p.add_argument("--steps", type=int, default=2000, help="gradient steps (default 2000)")
    p.add_argument("--lr", type=float, default=1e-2, help="learning rate (default 0.01)")
    p.add_argument("--hidden", type=_positive_int, default=16, help="hidden units (default 16)")
    p.add_argument("--train-scenes", type=_positive_int, default=8, help="training scenes (default 8)")
    p.add_argument("--test-scenes", type=_positive_int, default=4, help="held-out scenes (default 4)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="ocdepth", description=__doc__.split("\n\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, description=func.__doc__)
        p.add_argument("--config", help="key=value file; command-line flags override it")
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (default 1)")
        p.set_defaults(func=func)
        return p

    p = add("iou-table", cmd_iou_table, "surface-to-center error IoU table")
    p.add_argument("--out", help="CSV path (default stdout)")
    p.add_argument("--errors", type=_float_list, default=None, help="comma-separated radial errors in meters")
    p.add_argument("--tolerance", type=float, default=0.01, help="allowed deviation from the reference (default 0.01)")

    p = add("eval", cmd_eval, "evaluate KITTI-format detections")
    p.add_argument("--gt", required=True, help="label directory (one .txt per frame)")
    p.add_argument("--det", required=True, help="result directory (same frame ids)")
    p.add_argument("--out", required=True, help="output directory for report.json and report.csv")
    p.add_argument("--criterion", choices=("iou3d", "iou_bev", "center_distance"), default="iou3d")
    p.add_argument("--threshold", type=float, default=None,
                   help="matching threshold for all classes (default: 0.7/0.5/0.5 IoU, or 2 m)")
    p.add_argument("--center-threshold", type=float, default=CENTER_DISTANCE_THRESHOLD,
                   help="center distance for max recall, MAE and TP errors (default 2 m)")
    p.add_argument("--difficulty", default="easy,moderate,hard", help="levels: easy,moderate,hard,all")
    p.add_argument("--categories", default="Car,Pedestrian,Cyclist")
    p.add_argument("--buckets", type=_buckets, default=_buckets("0-15,15-30,30-inf"), help="range buckets (meters)")

    p = add("synth", cmd_synth, "generate synthetic scenes")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--scenes", type=_positive_int, default=1, help="number of scenes (default 1)")

    p = add("train", cmd_train, "train the toy depth model")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--lambda", dest="lam", type=_ratio, default=0.7, help="foreground weight (default 0.7)")
    _add_train_flags(p)

    p = add("sweep", cmd_sweep, "foreground-weight sweep")
    p.add_argument("--out", required=True, help="CSV path")
    p.add_argument("--lambdas", type=_float_list, default=[0.0, 0.3, 0.5, 0.7, 0.8, 1.0])
    p.add_argument("--seeds", type=_positive_int, default=5, help="number of seeds, starting at --seed (default 5)")
    p.set_defaults(lam=0.7)
    _add_train_flags(p)

    p = add("gradcheck", cmd_gradcheck, "finite-difference gradient suites")
    p.add_argument("--instances", type=_positive_int, default=100, help="random instances per suite (default 100)")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        cfg = read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        # accept long flag names as keys too (``lambda`` for ``--lambda``)
        aliases = {o[2:].replace("-", "_"): a.dest for a in sub._actions for o in a.option_strings if o.startswith("--")}
        cfg = {aliases.get(k, k): v for k, v in cfg.items()}
        unknown = sorted(set(cfg) - known)
        if unknown:
            raise ValidationError(f"unknown config key(s): {', '.join(unknown)}")
        sub.set_defaults(**{k: v for k, v in cfg.items() if k != "config"})
        for action in sub._actions:
            if action.dest in cfg and action.required:
                action.required = False
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        try:
            args = parse_args(argv)
        except SystemExit as exc:  # usage errors and --help
            return exc.code if isinstance(exc.code, int) else EXIT_VALIDATION
        if args.command == "sweep":
            if len(args.lambdas) < 2:
                raise ValidationError("--lambdas needs at least two values")
            if args.seeds < 3:
                raise ValidationError("--seeds must be at least 3")
            if any(not 0 <= x <= 1 for x in args.lambdas):
                raise ValidationError("--lambdas values must lie in [0, 1]")
        return args.func(args)
    except (ValidationError, ValueError) as exc:
        if isinstance(exc, KittiFormatError):
            print(f"ocdepth: format error: {exc}", file=sys.stderr)
            return EXIT_IO
        print(f"ocdepth: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (OSError, KeyError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"ocdepth: {msg}", file=sys.stderr)
        return EXIT_IO
    except RuntimeError as exc:
        print(f"ocdepth: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
