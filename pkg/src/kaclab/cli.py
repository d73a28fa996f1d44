"""Command-line entry point.

Usage::

    kaclab <simulate|solve|contraction|chaos-scan|decoupling|moments>
        --config FILE [--seed U64] [--threads N] [--out DIR] [--check]
        [--no-plot]

Each subcommand writes one or more CSV files (header row, %.12g numbers, LF
line endings, trailing metadata comment block) plus PNG figures into the
output directory.  Exit codes: 0 success, 1 config error, 2 numerical abort,
3 acceptance-gate failure under ``--check``.
"""

from __future__ import annotations

import argparse
import os
import subprocess
import sys

from .config import ConfigError, config_hash, load_config
from .experiments import DRIVERS
from .kinetic import SolverAbort

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_GATE = 3


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _fmt(value) -> str:
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, (int,)):
        return str(value)
    return f"{float(value):.12g}"


def write_csv(path: str, header, rows, meta: dict) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
        trailer = ", ".join(f"{k}={v}" for k, v in meta.items())
        fh.write(f"# {trailer}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kaclab",
        description="Thermostated Kac particle system and kinetic-limit "
                    "experiments",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in DRIVERS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", required=True, help="TOML or JSON config file")
        p.add_argument("--seed", type=int, default=None,
                       help="override the config seed (unsigned 64-bit)")
        p.add_argument("--threads", type=int, default=1,
                       help="replica worker processes")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--check", action="store_true",
                       help="exit 3 if any acceptance gate fails")
        p.add_argument("--no-plot", action="store_true",
                       help="skip figure rendering")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("config error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG

    driver = DRIVERS[args.command]
    try:
        result = driver(cfg, threads=args.threads)
    except (SolverAbort, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    os.makedirs(args.out, exist_ok=True)
    meta = {
        "seed": cfg.seed,
        "git-describe": _git_describe(),
        "config-hash": config_hash(cfg),
    }
    for table in result.tables:
        path = os.path.join(args.out, f"{table.name}.csv")
        write_csv(path, table.header, table.rows, meta)
        print(f"wrote {path}")
    if not args.no_plot:
        from . import plots

        for path in plots.render(args.command, result, args.out):
            print(f"wrote {path}")

    for gate in result.gates:
        status = "PASS" if gate.passed else "FAIL"
        print(f"[{status}] {gate.name}: {gate.detail}")
    if args.check and not result.all_passed:
        return EXIT_GATE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
