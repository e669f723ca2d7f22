"""Command line entry point: ``occ-locate run|sweep|validate --scenario FILE``.

Exit codes: 0 success, 1 invalid scenario, 2 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Any, Sequence

from . import harness
from .config import load_scenario
from .errors import ParseError, ValidationError

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 1, 2


def _parse_set(items: Sequence[str]) -> dict[str, Any]:
    """``path=value`` pairs; values are read as JSON, falling back to plain strings."""
    out = {}
    for item in items:
        path, sep, raw = item.partition("=")
        if not sep or not path:
            raise ValidationError(item, "expected PATH=VALUE")
        try:
            out[path] = json.loads(raw)
        except json.JSONDecodeError:
            out[path] = raw
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="occ-locate", description="OCC positioning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--scenario", required=True, help="scenario JSON file")
        p.add_argument("--set", action="append", default=[], metavar="PATH=VALUE", help="override a config field (repeatable)")

    p_run = sub.add_parser("run", help="run one scenario and write its CSV")
    common(p_run)
    p_run.add_argument("--seed", type=int, default=None, help="override run.seed")
    p_run.add_argument("--out", default="out", help="output directory (default: out)")

    p_sweep = sub.add_parser("sweep", help="run every value of the scenario's sweep block")
    common(p_sweep)
    p_sweep.add_argument("--seed", type=int, default=None, help="override run.seed")
    p_sweep.add_argument("--out", default="out", help="output directory (default: out)")

    p_val = sub.add_parser("validate", help="load and validate a scenario")
    common(p_val)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = _parse_set(args.set)
        if getattr(args, "seed", None) is not None:
            overrides["run.seed"] = args.seed
        cfg = load_scenario(args.scenario, overrides)
        if args.command == "validate":
            # building the simulation runs the load-time checks (e.g. fixture coverage)
            (harness.build_indoor if cfg.kind == "indoor" else harness.build_vehicle)(cfg, 0)
            print(f"{args.scenario}: ok ({cfg.kind})")
        elif args.command == "run":
            report = harness.run(cfg, out=args.out)
            print(json.dumps({"csv": str(report.csv_path), "summary": report.summary}, indent=2, sort_keys=True))
        else:
            rows = harness.sweep(cfg, out=args.out)
            print(harness.csv_text(harness.AGGREGATE_COLUMNS, rows), end="")
    except (ValidationError, ParseError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
