"""Command-line entry point: ``qmlplateau run|validate|list-presets``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import config as cfgmod
from .runner import run_experiment
from .sim import SizeError

EXIT_OK = 0
EXIT_COMPUTE = 1
EXIT_CONFIG = 2
EXIT_SIZE = 3


def _error(kind: str, exc: BaseException, code: int) -> int:
    record = {"status": "error", "error": kind, "type": type(exc).__name__, "message": str(exc), "exit_code": code}
    print(json.dumps(record, sort_keys=True), file=sys.stderr)
    return code


def resolve(target: str) -> dict:
    """A config file path, or the name of a bundled preset."""
    path = Path(target)
    if path.suffix == ".json" or path.exists():
        return cfgmod.load(path)
    return cfgmod.preset(target)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qmlplateau", description="Barren-plateau experiments for quantum classifiers.")
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a config file or preset name")
    run.add_argument("config")
    run.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    run.add_argument("--out", default="runs", help="output root (default: ./runs)")
    run.add_argument("--seed", type=int, help="override the config seed")
    val = sub.add_parser("validate", help="check a config and print it with defaults filled in")
    val.add_argument("config")
    sub.add_parser("list-presets", help="list bundled presets")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    if args.command == "list-presets":
        for name in cfgmod.preset_names():
            print(name)
        return EXIT_OK
    try:
        doc = resolve(args.config)
        if args.command == "run":
            if args.threads is not None:
                doc["threads"] = args.threads
            if args.seed is not None:
                doc["seed"] = args.seed
        doc = cfgmod.with_defaults(doc)
    except cfgmod.ConfigError as exc:
        return _error("config", exc, EXIT_CONFIG)
    if args.command == "validate":
        print(json.dumps({"config": doc, "config_hash": cfgmod.config_hash(doc)}, indent=2, sort_keys=True))
        return EXIT_OK
    try:
        summary = run_experiment(doc, args.out)
    except SizeError as exc:
        return _error("size", exc, EXIT_SIZE)
    except (ValueError, ArithmeticError, OSError) as exc:
        return _error("compute", exc, EXIT_COMPUTE)
    print(json.dumps(summary, indent=2, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
