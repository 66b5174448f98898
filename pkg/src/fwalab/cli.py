"""Command-line entry point.

Subcommands: gen-data, train, stability, convergence, bounds. Each takes a
TOML config (--config) and optional overrides (--out, --seeds, --workers).
Exit code is 0 unless the config enables hard assertions and one fails.
"""

from __future__ import annotations

import argparse
import sys

from .config import load_config
from .errors import ConfigError
from .experiments import (
    run_bounds_audit,
    run_convergence_cmd,
    run_gen_data,
    run_stability_cmd,
    run_train,
)

_COMMANDS = {
    "gen-data": run_gen_data,
    "train": run_train,
    "stability": run_stability_cmd,
    "convergence": run_convergence_cmd,
    "bounds": run_bounds_audit,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fwalab",
        description="SGD with finite weight averaging: experiments and bound audits",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in _COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__)
        p.add_argument("--config", required=True, help="TOML experiment config")
        p.add_argument("--out", default=None, help="output directory (overrides config)")
        p.add_argument("--seeds", default=None,
                       help="comma-separated seed list (overrides config)")
        p.add_argument("--workers", type=int, default=None,
                       help="parallel sweep cells (overrides config)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "out": args.out,
        "seeds": args.seeds.split(",") if args.seeds else None,
        "workers": args.workers,
    }
    try:
        cfg = load_config(args.config, overrides)
        result = _COMMANDS[args.command](cfg)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    for path in result.files:
        print(f"wrote {path}")
    for name, outcome in result.checks.items():
        status = "PASS" if outcome["passed"] else "FAIL"
        print(f"[check] {name}: {status} "
              f"({outcome['seeds_satisfied']}/{outcome['seeds_total']} seeds)")
    return 0 if result.ok else 1


if __name__ == "__main__":
    sys.exit(main())
