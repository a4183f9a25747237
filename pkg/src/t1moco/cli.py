"""Command-line interface.

Subcommands: ``phantom`` (synthesize a scene), ``fit`` (joint motion
correction + mapping), ``fit-uncorrected`` (baseline without
registration), ``eval`` (metrics report), ``export`` (render a T1 PNG).

Exit codes by category: 0 success, 2 usage, 3 data validation,
4 file/format, 5 configuration. ``--threads`` (or T1MOCO_THREADS) caps
worker parallelism; all current kernels are sequential vectorized code,
so outputs are bit-identical for any thread budget.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

from . import __version__
from .containers import FitConfig, min_max_normalize
from .errors import FileFormatError, InvalidConfigError, ValidationError
from .fileio import (
    export_t1_png,
    load_masks,
    load_phantom_scene,
    load_series,
    parse_config_file,
    save_eval_report,
    save_maps,
    save_phantom_scene,
    save_solution,
)
from .metrics import evaluate
from .optim import fit_uncorrected, joint_fit
from .phantom import PhantomConfig, generate_phantom

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_VALIDATION = 3
EXIT_FORMAT = 4
EXIT_CONFIG = 5

_INT_FIELDS = {"outer_iterations", "integration_steps", "seed", "refit_interval",
               "levels", "reference_index", "max_halvings"}


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    """One override flag per FitConfig field; unset flags defer to the file."""
    for f in dataclasses.fields(FitConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "magnitude_mode":
            parser.add_argument(flag, choices=("true", "false"), default=None)
        elif f.name in _INT_FIELDS:
            parser.add_argument(flag, type=int, default=None)
        else:
            parser.add_argument(flag, type=float, default=None)


def _build_config(args) -> FitConfig:
    kwargs: dict = {}
    if getattr(args, "config", None):
        kwargs.update(parse_config_file(args.config))
    for f in dataclasses.fields(FitConfig):
        value = getattr(args, f.name, None)
        if value is None:
            continue
        kwargs[f.name] = value == "true" if f.name == "magnitude_mode" else value
    return FitConfig(**kwargs)


def _threads(args) -> int:
    n = args.threads
    if n is None:
        n = int(os.environ.get("T1MOCO_THREADS", "1"))
    if n < 1:
        raise InvalidConfigError("--threads must be >= 1")
    return n


def _cmd_phantom(args) -> int:
    config = PhantomConfig(
        height=args.size[0],
        width=args.size[1],
        n_frames=args.frames,
        translation_min=args.translation_min,
        translation_max=args.translation_max,
        deform_amplitude=args.deform,
        snr=args.snr,
    )
    scene = generate_phantom(config, seed=args.seed)
    save_phantom_scene(scene, args.out, checksums=args.checksums)
    print(f"phantom scene (seed {args.seed}) written to {args.out}")
    return EXIT_OK


def _cmd_fit(args) -> int:
    threads = _threads(args)
    config = _build_config(args)
    series = load_series(args.infile)
    if args.normalize:
        series = min_max_normalize(series)
    masks = load_masks(args.masks) if args.masks else None
    solution = joint_fit(series, config, masks)
    save_solution(solution, args.out, threads=threads)
    final = solution.trace[-1]
    print(
        f"fit: {len(solution.trace) - 1} iterations, converged={solution.converged}, "
        f"total={final.total:.6g} (fit={final.fit:.6g} smooth={final.smooth:.6g} seg={final.seg:.6g})"
    )
    return EXIT_OK


def _cmd_fit_uncorrected(args) -> int:
    threads = _threads(args)
    config = _build_config(args).updated(outer_iterations=0)
    series = load_series(args.infile)
    if args.normalize:
        series = min_max_normalize(series)
    solution = joint_fit(series, config)
    save_solution(solution, args.out, threads=threads)
    print(f"uncorrected fit written to {args.out}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    from .fileio import load_solution

    solution = load_solution(args.solution)
    masks = load_masks(args.masks)
    truth = load_phantom_scene(args.truth) if args.truth else None
    report = evaluate(solution, masks, truth=truth, pooled_r2=args.pooled_r2)
    save_eval_report(report, args.out)
    extra = f", t1_rmse={report.t1_rmse_ms:.3f} ms" if report.t1_rmse_ms is not None else ""
    print(
        f"eval: r2={report.r2_mean:.4f}+/-{report.r2_std:.4f}, dice={report.dice_mean:.4f}, "
        f"hd={report.hausdorff_mm:.3f} mm{extra}"
    )
    return EXIT_OK


def _cmd_export(args) -> int:
    from .fileio import load_maps

    maps = load_maps(args.maps)
    export_t1_png(maps, (args.range[0], args.range[1]), args.png)
    print(f"T1 map rendered to {args.png}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="t1moco",
        description="Joint myocardial T1/M0 mapping and motion correction for "
                    "free-breathing inversion-recovery series.",
    )
    parser.add_argument("--version", action="version", version=f"t1moco {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic moving-heart scene")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, nargs=2, default=(160, 160), metavar=("H", "W"))
    p.add_argument("--frames", type=int, default=11)
    p.add_argument("--translation-min", type=float, default=2.0)
    p.add_argument("--translation-max", type=float, default=4.0)
    p.add_argument("--deform", type=float, default=1.5)
    p.add_argument("--snr", type=float, default=30.0)
    p.add_argument("--checksums", action="store_true")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("fit", help="joint motion correction and mapping")
    p.add_argument("--in", dest="infile", required=True, help="series directory or manifest")
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None, help="key = value file of FitConfig fields")
    p.add_argument("--masks", default=None, help="mask directory (enables the segmentation term)")
    p.add_argument("--normalize", action="store_true", help="min-max normalize before fitting")
    p.add_argument("--threads", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("fit-uncorrected", help="baseline fit without motion correction")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--threads", type=int, default=None)
    _add_config_flags(p)
    p.set_defaults(func=_cmd_fit_uncorrected)

    p = sub.add_parser("eval", help="metrics report for a fitted solution")
    p.add_argument("--solution", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--truth", default=None, help="phantom scene directory with ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--pooled-r2", action="store_true")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("export", help="render a T1 map to PNG")
    p.add_argument("--maps", required=True)
    p.add_argument("--png", required=True)
    p.add_argument("--range", type=float, nargs=2, default=(0.0, 2000.0), metavar=("LO", "HI"))
    p.set_defaults(func=_cmd_export)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidConfigError as e:
        print(f"t1moco: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ValidationError as e:
        print(f"t1moco: validation error: {e}", file=sys.stderr)
        return EXIT_VALIDATION
    except (FileFormatError, OSError) as e:
        print(f"t1moco: file error: {e}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
