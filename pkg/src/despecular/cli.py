"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error (bad files, failed checks).
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .checkpoint import FORMAT_VERSION, CheckpointError, load_checkpoint, save_checkpoint
from .evaluate import evaluate_directories, evaluate_manifest, write_report
from .gradcheck import BLOCKS, grad_check
from .imageio import ImageFormatError, load_image, save_image
from .manifest import Manifest, ManifestError, build_manifest, check_benchmark_counts, format_counts
from .network import ModelConfig, build_model, forward
from .perfbench import KINDS, run_scaling
from .validation import ConfigurationError

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
DATA_ERRORS = (OSError, CheckpointError, ManifestError, ImageFormatError, ConfigurationError, json.JSONDecodeError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="despecular", description="Specular highlight removal network tools.")
    parser.add_argument(
        "--version", action="version",
        version=f"despecular {__version__} (checkpoint format {FORMAT_VERSION})",
    )
    sub = parser.add_subparsers(dest="command", parser_class=_Parser, metavar="COMMAND")

    p = sub.add_parser("init", help="create a seeded checkpoint")
    p.add_argument("--config", help="JSON file with ModelConfig fields (default: toy preset)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("infer", help="run the network on one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--float32", action="store_true", help="run inference in single precision")

    p = sub.add_parser("eval", help="score predictions (or model outputs) against ground truth")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--split", choices=("train", "test"))
    p.add_argument("--pred-dir")
    p.add_argument("--gt-dir")
    p.add_argument("--report")

    p = sub.add_parser("bench", help="time attention kernels and check op counts")
    p.add_argument("--kind", choices=KINDS, required=True)
    p.add_argument("--sizes", type=_int_list, default=[64, 128, 256])
    p.add_argument("--channels", type=int, default=32)
    p.add_argument("--window", type=int, default=8)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--report")

    p = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p.add_argument("--block", choices=("all",) + BLOCKS, default="all")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report")

    p = sub.add_parser("manifest", help="pair input/gt images into a manifest")
    p.add_argument("--root", required=True)
    p.add_argument("--out", required=True)
    return parser


def _cmd_init(args) -> int:
    config = ModelConfig.from_json_file(args.config) if args.config else ModelConfig()
    model = build_model(config, seed=args.seed)
    save_checkpoint(model, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint)
    image = load_image(args.input)
    if args.float32:
        model = model.astype(np.float32)
        image = image.astype(np.float32)
    save_image(np.clip(forward(model, image), 0.0, 1.0), args.output)
    return EXIT_OK


def _cmd_eval(args) -> int:
    if bool(args.manifest) == bool(args.pred_dir or args.gt_dir):
        raise UsageError("eval needs either --manifest or both --pred-dir and --gt-dir")
    if args.manifest:
        model = load_checkpoint(args.checkpoint) if args.checkpoint else None
        report = evaluate_manifest(Manifest.load(args.manifest), model, split=args.split)
    else:
        if not (args.pred_dir and args.gt_dir):
            raise UsageError("--pred-dir and --gt-dir must be given together")
        if args.checkpoint:
            raise UsageError("--checkpoint applies to --manifest evaluation only")
        report = evaluate_directories(args.pred_dir, args.gt_dir)
    print(report.to_table())
    if args.report:
        write_report(report, args.report)
    return EXIT_OK


def _cmd_bench(args) -> int:
    report = run_scaling(args.kind, args.channels, args.window, args.sizes, reps=args.reps)
    print(report.to_table())
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(report.to_json())
    return EXIT_OK if report.passed else EXIT_DATA


def _cmd_gradcheck(args) -> int:
    report = grad_check(args.block, args.seed)
    text = report.to_json()
    print(text)
    if args.report:
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write(text)
    return EXIT_OK if report.passed else EXIT_DATA


def _cmd_manifest(args) -> int:
    manifest = build_manifest(args.root)
    summary = check_benchmark_counts(manifest)
    manifest.save(args.out)
    print(format_counts(summary))
    return EXIT_OK


COMMANDS = {
    "init": _cmd_init,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
    "gradcheck": _cmd_gradcheck,
    "manifest": _cmd_manifest,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return EXIT_USAGE
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
