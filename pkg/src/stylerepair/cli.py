"""Command line entry point: ``stylerepair <stage> [options]``."""
from __future__ import annotations

import argparse
import logging
import sys

from .errors import StageError, StyleRepairError
from .pipeline import STAGES, Pipeline, load_config

# per-subcommand flags: (flag, config key, type, help)
STAGE_FLAGS = {
    "prepare-data": [("--root", "data.root", str, "CIFAR batches or image directory"),
                     ("--kinds", "kinds", lambda s: [k.strip() for k in s.split(",") if k.strip()],
                      "comma-separated corruption kinds, e.g. GN,SN")],
    "train-base": [("--epochs", "base_training.max_epochs", int, "training epochs")],
    "collect-failures": [("--model", "inputs.model", str, "source checkpoint"),
                         ("--kind", "kinds", lambda s: [s], "corruption kind"),
                         ("--n", "failures.n_collect", int, "guidance set size")],
    "fit-sampler": [("--split", "inputs.split", str, "split file"),
                    ("--n-clusters", "sampler.n_clusters", int, "number of clusters"),
                    ("--strategy", "sampler.strategy", str, "clustering or uniform")],
    "repair": [("--split", "inputs.split", str, "split file"),
               ("--sampler", "inputs.sampler", str, "sampler file"),
               ("--model", "inputs.model", str, "source checkpoint"),
               ("--epochs", "repair.max_epochs", int, "maximum repair epochs")],
    "evaluate": [],
    "report": [],
    "run-all": [],
}


def build_parser():
    parser = argparse.ArgumentParser(prog="stylerepair",
                                     description="Repair a classifier's corruption failures with style-guided augmentation.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="stage", metavar="STAGE")
    sub.required = True
    for stage, flags in STAGE_FLAGS.items():
        p = sub.add_parser(stage)
        p.add_argument("--config", help="YAML experiment config")
        p.add_argument("--seed", type=int, help="global seed")
        p.add_argument("--out", help="output directory")
        p.add_argument("--force", action="store_true", help="recompute existing artifacts")
        for flag, key, typ, help_ in flags:
            p.add_argument(flag, dest=key, type=typ, default=None, help=help_)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = args.out
    for _, key, _, _ in STAGE_FLAGS[args.stage]:
        value = getattr(args, key)
        if value is not None:
            overrides[key] = value
    if overrides.get("data.root"):
        overrides["data.source"] = "path"
    try:
        config = load_config(args.config, overrides)
        pipe = Pipeline(config, force=args.force)
        written = pipe.run_all() if args.stage == "run-all" else pipe.run(args.stage)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (StyleRepairError, ValueError, OSError) as exc:
        print(f"error: [{args.stage}] {exc}", file=sys.stderr)
        return 1
    for path in written:
        print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
