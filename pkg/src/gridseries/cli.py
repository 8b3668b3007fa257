"""Command-line entry point: ``python -m gridseries <subcommand>``.

Exit codes: 0 success, 2 invalid input or configuration, 3 infeasible
restoration, 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .errors import GridSeriesError, InfeasibleError, ParseError, SizeLimitError, ValidationError

EXIT_OK, EXIT_ERROR, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--parallelism", type=int)
    common.add_argument("--derate", type=float, help="branch limit factor in (0, 1]")
    common.add_argument("--granularity", type=int, help="target period length in minutes")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="gridseries", description="Component-level grid time series toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="all stages in order, with a manifest")
    sub.add_parser("geo", parents=[common], help="assign substations to registry locations")
    sub.add_parser("bids", parents=[common], help="map market offers onto generators")
    p = sub.add_parser("sample", parents=[common], help="draw volatility panels")
    p.add_argument("--dump-panel", action="store_true", help="also write per-quantity multiplier CSVs")
    sub.add_parser("disagg", parents=[common], help="split regional series into components")
    p = sub.add_parser("restore", parents=[common], help="restore DC feasibility per period")
    p.add_argument("--components", help="component CSV to restore (default: <out>/components.csv)")
    p = sub.add_parser("validate", parents=[common], help="statistical comparison")
    p.add_argument("--historical", help="historical regional history CSV")
    p.add_argument("--synthetic", help="synthetic regional history CSV")
    p.add_argument("--k", type=int, default=None, help="neighbours for the overlap score")
    return ap


def _config(args) -> pipeline.RunConfig:
    if not args.config:
        raise ValidationError(f"{args.command} needs --config")
    overrides = {k: getattr(args, k) for k in ("seed", "out", "parallelism", "derate", "granularity")}
    if getattr(args, "dump_panel", False):
        overrides["dump_panel"] = True
    if getattr(args, "k", None) is not None:
        overrides["overlap_k"] = args.k
    return pipeline.RunConfig.load(args.config, **overrides)


def _dispatch(args) -> dict:
    if args.command == "validate" and (args.historical or args.synthetic):
        if not (args.historical and args.synthetic):
            raise ValidationError("--historical and --synthetic go together")
        k = args.k if args.k is not None else 5
        return pipeline.validate_pair(args.historical, args.synthetic, args.out or ".", k)
    cfg = _config(args)
    if args.command == "run":
        return pipeline.run_pipeline(cfg)
    cfg.check_paths()
    if args.command == "restore":
        return pipeline.stage_restore(cfg, args.components)
    return pipeline.STAGE_FUNCS[args.command](cfg)


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, pipeline.StageError):
        exc = exc.cause
    if isinstance(exc, InfeasibleError):
        return EXIT_INFEASIBLE
    if isinstance(exc, (ValidationError, ParseError, SizeLimitError, FileNotFoundError)):
        return EXIT_INVALID
    return EXIT_ERROR


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        result = _dispatch(args)
    except (GridSeriesError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    summary = result.get("stages", result) if args.command == "run" else result
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
