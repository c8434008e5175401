"""``s2knilm`` command line.

Exit codes: 0 success, 1 some column did not converge (results are still
written), 2 configuration or I/O error.
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path
from typing import Sequence

from .dataio import IngestionError
from .harness import (
    METHOD_PARAMS,
    RunConfig,
    parse_method,
    run_build_dict,
    run_crossval,
    run_disaggregate,
    run_hierarchical,
)
from .model import ConfigError, StructureError

EXIT_OK, EXIT_NONCONVERGED, EXIT_CONFIG = 0, 1, 2

COMMANDS = {
    "build-dict": run_build_dict,
    "disaggregate": run_disaggregate,
    "crossval": run_crossval,
    "hierarchical": run_hierarchical,
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON run config; flags below override its keys")
    p.add_argument("--data", help="meter CSV")
    p.add_argument("--schema", help="dataset schema JSON")
    p.add_argument("--dictionary", help="dictionary directory (disaggregate)")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="parallel solves per batch of test columns")
    p.add_argument("--method", help="s2k, lasso or elastic-net; crossval accepts a comma list")
    p.add_argument("--beta", type=float, help="sum-to-k penalty weight")
    p.add_argument("--beta1", type=float, help="L1 weight (lasso, elastic-net)")
    p.add_argument("--beta2", type=float, help="L2 weight (elastic-net)")
    p.add_argument("--normalization", choices=["none", "unit-l2"])
    p.add_argument("--splits", help="comma list of train/test splits, e.g. 80/20,60/40 or 0.8,0.6")
    p.add_argument("--folds", type=int)
    p.add_argument("--split-mode", choices=["random", "kfold"])
    p.add_argument("--test-days", help="comma list of day labels or indices (disaggregate)")
    p.add_argument("--stage2-schema", help="stage-2 schema JSON (hierarchical)")
    p.add_argument("--stage2-data", help="stage-2 meter CSV, defaults to --data (hierarchical)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="s2knilm", description="Dictionary-based energy disaggregation with a sum-to-k constraint."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "build-dict": "build a device dictionary from training days",
        "disaggregate": "split aggregate test days into per-device estimates",
        "crossval": "cross-validated benchmark over methods and splits",
        "hierarchical": "building -> devices, then HVAC -> components",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text, description=text))
    return parser


def _csv(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def config_from_args(args: argparse.Namespace) -> RunConfig:
    if args.config is not None:
        config = RunConfig.load(args.config)
    else:
        config = RunConfig(base_dir=".")
    changes = {}
    for key in ("data", "schema", "dictionary", "seed", "out", "workers", "beta", "beta1", "beta2",
                "normalization", "folds", "stage2_schema", "stage2_data"):
        value = getattr(args, key)
        if value is not None:
            changes[key] = value
    if args.split_mode is not None:
        changes["split_mode"] = args.split_mode
    if args.method is not None:
        changes["methods"] = tuple(_csv(args.method))
    if args.splits is not None:
        changes["splits"] = tuple(_csv(args.splits))
    if args.test_days is not None:
        changes["test_days"] = tuple(_csv(args.test_days))
    # flag paths are relative to the working directory, not the config file
    for key in ("data", "schema", "dictionary", "out", "stage2_schema", "stage2_data"):
        if key in changes:
            changes[key] = str(Path(changes[key]).resolve())
    if not changes:
        return config
    if "methods" in changes:
        # a method switch drops config-file weights the new methods do not use
        used = set().union(*(METHOD_PARAMS[parse_method(m)] for m in changes["methods"]))
        for key in ("beta", "beta1", "beta2"):
            if key not in changes and key not in used:
                changes[key] = None
    try:
        return config.replace(**changes)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if not args.verbose:
        warnings.simplefilter("ignore")
    try:
        config = config_from_args(args)
        outcome = COMMANDS[args.command](config)
    except (ConfigError, StructureError, IngestionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in outcome.messages:
        print(line)
    return outcome.exit_code


if __name__ == "__main__":
    sys.exit(main())
