"""``hgot`` command-line entry point.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from .config import load_run_config, load_sweep_spec, load_synthetic_config
from .errors import DataError, HGOTError
from .objective import AblationMode

log = logging.getLogger("hgot")


def _seeds(text: str) -> list[int]:
    try:
        seeds = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seed expects comma-separated integers, got {text!r}")
    if not seeds:
        raise argparse.ArgumentTypeError("--seed needs at least one integer")
    return seeds


def _sizes(text: str) -> list[int]:
    try:
        sizes = [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--sizes expects comma-separated integers, got {text!r}")
    if len(sizes) < 2 or min(sizes) < 2:
        raise argparse.ArgumentTypeError("--sizes needs at least two sizes, each >= 2")
    return sizes


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hgot", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, type=Path)
        p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("train", help="train an encoder and write loss history, checkpoint, embeddings, metrics")
    common(p)
    p.add_argument("--seed", type=_seeds, help="comma-separated seeds; overrides the config")
    p.add_argument("--ablation", choices=[m.value for m in AblationMode])
    p.add_argument("--dump-plans", action="store_true", help="write final transport plans as CSV + JSON")

    p = sub.add_parser("sweep", help="grid over rho, sigma or hidden_dim")
    common(p)
    p.add_argument("--seed", type=_seeds)
    p.add_argument("--ablation", choices=[m.value for m in AblationMode])

    p = sub.add_parser("bench", help="per-iteration solver timings with log-log slopes")
    p.add_argument("--out", type=Path)
    p.add_argument("--sizes", type=_sizes, default=[50, 100, 200])
    p.add_argument("--seed", type=_seeds, default=[0])

    p = sub.add_parser("generate", help="write a synthetic heterogeneous graph dataset")
    common(p)
    p.add_argument("--seed", type=_seeds, help="overrides the config seed (first value)")

    p = sub.add_parser("eval", help="re-evaluate a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True, type=Path)
    return parser


def _override(cfg, seeds: Optional[list[int]], ablation: Optional[str]):
    update = {}
    if seeds is not None:
        update["seeds"] = seeds
    if ablation is not None:
        update["train"] = cfg.train.model_copy(update={"mode": AblationMode(ablation)})
    return cfg.model_copy(update=update) if update else cfg


def _dispatch(args) -> None:
    from . import runner

    if args.command == "train":
        cfg = _override(load_run_config(args.config), args.seed, args.ablation)
        report = runner.run_train(cfg, args.out, dump_plans=args.dump_plans)
        print(json.dumps(report, indent=2, sort_keys=True))
    elif args.command == "sweep":
        spec = load_sweep_spec(args.config)
        spec = spec.model_copy(update={"base": _override(spec.base, args.seed, args.ablation)})
        for row in runner.run_sweep(spec, args.out):
            print(row)
    elif args.command == "bench":
        result = runner.run_bench(args.sizes, args.out, seed=args.seed[0])
        for row in result["rows"]:
            print(f"{row['solver']:9s} n={row['n']:5d} {row['seconds_per_iteration']:.3e} s/iter")
        slopes = result["slopes"]
        print(f"slopes: cg {slopes['cg']:.2f} sinkhorn {slopes['sinkhorn']:.2f}")
    elif args.command == "generate":
        cfg = load_synthetic_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed[0]})
        print(runner.run_generate(cfg, args.out))
    elif args.command == "eval":
        cfg = load_run_config(args.config)
        if not args.checkpoint.exists():
            raise DataError(f"checkpoint {args.checkpoint} not found")
        report = runner.run_eval(cfg, args.checkpoint, args.out)
        print(json.dumps(report, indent=2, sort_keys=True))


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors, which matches the config-error code
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        _dispatch(args)
    except HGOTError as exc:
        print(f"hgot {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"hgot {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
