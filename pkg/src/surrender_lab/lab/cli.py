"""Command line entry point: ``surrender-lab {simulate,train,evaluate,bias-study}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config
from .pipeline import COMMANDS, STAGES


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment YAML (defaults to the shipped config)")
    common.add_argument("--seed", type=int, help="master seed override")
    common.add_argument("--out", help="output directory override")
    common.add_argument("--models", help="comma-separated model roster override")
    common.add_argument("--resample", help="resampling scheme for training, or 'none'")
    common.add_argument("--jobs", type=int, help="worker threads (never changes results)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="surrender-lab",
                                     description="Surrender simulation and classifier study.")
    sub = parser.add_subparsers(dest="command", required=True)
    for stage in STAGES:
        sub.add_parser(stage, parents=[common])
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.seed is not None:
        out["seed"] = args.seed
    if args.out is not None:
        out["output_dir"] = args.out
    if args.jobs is not None:
        out["workers"] = args.jobs
    if args.models is not None:
        out["models"] = {"roster": [m.strip() for m in args.models.split(",") if m.strip()]}
    if args.resample is not None:
        out["resampling"] = None if args.resample == "none" else {"scheme": args.resample}
    return out


def _fail(kind: str, message: str, code: int, path: str | None = None) -> int:
    payload = {"error": kind, "message": message}
    if path:
        payload["path"] = path
    print(json.dumps(payload), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        config = load_config(args.config, _overrides(args))
    except ConfigError as exc:
        return _fail("ConfigError", exc.message, 2, exc.path)
    try:
        result = COMMANDS[args.command](config)
    except Exception as exc:
        return _fail(type(exc).__name__, str(exc), 1)
    print(json.dumps({"command": args.command, "output_dir": config.output_dir, **result},
                     default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
