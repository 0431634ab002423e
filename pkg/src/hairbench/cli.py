"""Command-line entry point.

Subcommands: simulate, train, infer, evaluate, compare, ablate.
Training options come from an optional JSON config file with flag
overrides on top.  Exit codes: 0 success, 2 usage error, 3 data error,
4 numerical fault.  HAIRBENCH_THREADS caps evaluation parallelism.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import hairsim, pipeline
from .errors import (ConfigurationError, ContractViolation, DataError,
                     DegenerateSampleError, EngineFault, TrainingFault)
from .loss import LossWeights

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hairbench",
        description="Hair-removal network training and restoration benchmarking")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="build a paired synthetic-hair dataset")
    p.add_argument("--clean", required=True, help="directory of clean images")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--split", type=float, default=0.7, help="train fraction")
    p.add_argument("--fraction-hairless", type=float, default=0.1)
    p.add_argument("--fraction-superimposed", type=float, default=0.0)
    p.add_argument("--mask-dir", default=None, help="binary hair masks to superimpose")
    p.add_argument("--strand-count", type=int, nargs=2, metavar=("LO", "HI"),
                   default=(3, 8))
    p.add_argument("--thickness", type=float, nargs=2, metavar=("LO", "HI"),
                   default=(1.0, 2.0))
    p.add_argument("--opacity", type=float, default=0.9)

    p = sub.add_parser("train", help="train the hair-removal network")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.add_argument("--config", default=None, help="JSON training config")
    p.add_argument("--preset", choices=("desk", "full"), default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--patience", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--val-fraction", type=float, default=None)
    p.add_argument("--resume", action="store_true")

    p = sub.add_parser("infer", help="restore a directory of images")
    p.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)

    p = sub.add_parser("evaluate", help="score restored images against references")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("compare", help="statistical comparison of methods")
    p.add_argument("--ref", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("methods", nargs="+", help="two or more method output directories")

    p = sub.add_parser("ablate", help="train and score ablation variants")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--toggles", required=True,
                   help=f"comma-separated subset of: {', '.join(pipeline.ABLATION_TOGGLES)}")
    p.add_argument("--config", default=None, help="JSON training config")
    p.add_argument("--max-epochs", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    return parser


def _train_config(args, manifest: str, out: str) -> pipeline.TrainConfig:
    doc = {}
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise DataError(f"config file not found: {path}")
        doc = json.loads(path.read_text(encoding="utf-8"))
    weights = LossWeights.from_dict(doc.pop("weights", {}))
    kwargs = dict(manifest=manifest, checkpoint_dir=out, weights=weights)
    for key in ("preset", "lr", "batch_size", "max_epochs", "patience", "seed",
                "val_fraction", "precision", "skip_connections", "downsampling"):
        if key in doc:
            kwargs[key] = doc[key]
    for key in ("preset", "lr", "batch_size", "max_epochs", "patience", "seed",
                "val_fraction"):
        val = getattr(args, key, None)
        if val is not None:
            kwargs[key] = val
    if getattr(args, "resume", False):
        kwargs["resume"] = True
    return pipeline.TrainConfig(**kwargs)


def _cmd_simulate(args) -> int:
    recipe = hairsim.DatasetRecipe(
        strands=hairsim.StrandParams(count=tuple(args.strand_count),
                                     thickness=tuple(args.thickness),
                                     opacity=args.opacity),
        fraction_hairless=args.fraction_hairless,
        fraction_superimposed=args.fraction_superimposed,
        mask_dir=args.mask_dir,
        superimpose_opacity=args.opacity,
    )
    manifest = hairsim.build_dataset(args.clean, recipe, args.out,
                                     split=args.split, seed=args.seed)
    print(f"manifest written: {manifest}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _train_config(args, args.manifest, args.out)
    result = pipeline.train(config)
    last = result.curve[-1] if result.curve else {}
    print(f"stopped: {result.stopped_reason} after epoch {last.get('epoch', '?')}; "
          f"best epoch {result.best_epoch} (val loss {result.best_val_loss:.6f})")
    print(f"checkpoints in {result.checkpoint_dir}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    written, skipped = pipeline.infer(args.checkpoint, args.input, args.output)
    print(f"restored {len(written)} image(s) into {args.output}")
    if skipped:
        print("skipped (unreadable):")
        for name in skipped:
            print(f"  {name}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    report = pipeline.evaluate(args.ref, args.test, args.out)
    if report.omissions:
        print("omissions:")
        for line in report.omissions:
            print(f"  {line}")
    if not report.rows:
        print("no comparable image pairs; no aggregate emitted")
        return EXIT_DATA
    print(f"evaluated {len(report.rows)} image(s); report in {args.out}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    table = pipeline.compare(args.ref, args.methods, args.out, alpha=args.alpha)
    print(table.to_text())
    return EXIT_OK


def _cmd_ablate(args) -> int:
    toggles = [t.strip() for t in args.toggles.split(",") if t.strip()]
    config = _train_config(args, args.manifest, str(Path(args.out) / "baseline" / "ckpt"))
    table = pipeline.ablate(config, toggles, args.out)
    for name, row in table.items():
        cells = "  ".join(f"{m}={row[m]:.4f}" for m in ("MSE", "PSNR", "SSIM"))
        print(f"{name:12s} {cells}")
    print(f"full table: {Path(args.out) / 'ablation.csv'}")
    return EXIT_OK


_COMMANDS = {
    "simulate": _cmd_simulate,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "evaluate": _cmd_evaluate,
    "compare": _cmd_compare,
    "ablate": _cmd_ablate,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (ConfigurationError, ContractViolation) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DegenerateSampleError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingFault, EngineFault) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
