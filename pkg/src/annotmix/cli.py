"""Command line interface.

Exit codes: 0 success, 2 configuration or input error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import RunConfig, json_schema, load_config
from .data import make_blobs, save_dataset
from .errors import AnnotMixError, ConfigError, ContractError, DivergenceError, IngestionError
from . import pipeline

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERIC = 3

log = logging.getLogger("annotmix")


def _setup_logging() -> None:
    level = os.environ.get("ANNOTMIX_LOG", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.INFO), format="%(levelname)s %(name)s: %(message)s")


def _load(args) -> RunConfig:
    cfg = pipeline.resolve_paths(load_config(args.config), Path(args.config).resolve().parent)
    if getattr(args, "seed", None) is not None:
        if args.command == "simulate":
            cfg = cfg.model_copy(update={"sim": cfg.sim.model_copy(update={"seed": args.seed})})
        else:
            cfg = cfg.model_copy(update={"train": cfg.train.model_copy(update={"seed": args.seed})})
    return cfg


def cmd_simulate(args) -> int:
    out = pipeline.run_simulation(_load(args), args.out)
    print(out)
    return EXIT_OK


def cmd_train(args) -> int:
    out, state = pipeline.run_training(_load(args), args.out)
    last = state.log[-1]
    print(f"{out}: {state.epoch} epochs, final train loss {last['train_loss']:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    doc = pipeline.run_evaluation(_load(args), args.run, args.out or args.run, fresh=args.out is not None)
    print(json.dumps(doc["last"], indent=2, sort_keys=True))
    return EXIT_OK


def cmd_benchmark(args) -> int:
    rows = pipeline.run_benchmark(_load(args), args.out, jobs=args.jobs)
    print(pipeline.format_table(rows), end="")
    return EXIT_OK


def cmd_synth(args) -> int:
    out = pipeline.prepare_run_dir(args.out)
    for split, n, seed in (("train", args.n_train, args.seed), ("test", args.n_test, args.seed + 1),
                           ("val", args.n_val, args.seed + 2)):
        if n <= 0:
            continue
        ds = make_blobs(n, args.classes, args.dim, args.spread, args.separation, seed,
                        "validation" if split == "val" else split)
        save_dataset(ds, out / f"{split}_features.csv", out / f"{split}_labels.csv")
    print(out)
    return EXIT_OK


def cmd_schema(args) -> int:
    print(json.dumps(json_schema(), indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="annotmix", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", required=out_required, help="fresh output directory")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--jobs", type=int, default=1, help="parallel workers (benchmark only)")

    common(sub.add_parser("simulate", help="simulate annotators and write annotations.csv"))
    common(sub.add_parser("train", help="train one model and write metrics.csv and checkpoints"))
    p = sub.add_parser("evaluate", help="score a trained run and write report.json")
    common(p, out_required=False)
    p.add_argument("--run", required=True, help="run directory produced by 'train'")
    common(sub.add_parser("benchmark", help="run a methods x seeds grid and summarize it"))

    p = sub.add_parser("synth", help="write a Gaussian-blob dataset as CSV files")
    p.add_argument("--out", required=True)
    p.add_argument("--n-train", type=int, default=2000)
    p.add_argument("--n-test", type=int, default=2000)
    p.add_argument("--n-val", type=int, default=0)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--dim", type=int, default=2)
    p.add_argument("--spread", type=float, default=1.0)
    p.add_argument("--separation", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=1)

    sub.add_parser("schema", help="print the configuration JSON schema")
    return parser


COMMANDS = {
    "simulate": cmd_simulate,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "benchmark": cmd_benchmark,
    "synth": cmd_synth,
    "schema": cmd_schema,
}


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    try:
        return COMMANDS[args.command](args)
    except DivergenceError as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, IngestionError, ContractError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except AnnotMixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
