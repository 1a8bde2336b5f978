"""Command-line entry point."""

from __future__ import annotations

import argparse
import logging
import sys

from .config import EXPERIMENTS, ConfigError, RunConfig, load
from .runner import run


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bclab", description="Numerical experiments on the coupled standard-map skew product.")
    parser.add_argument("command", choices=EXPERIMENTS + ("all",), help="experiment to run")
    parser.add_argument("--config", help="TOML configuration file")
    parser.add_argument("--out", help="output directory for run folders")
    parser.add_argument("--seed", type=int, help="master RNG seed (unsigned 64-bit)")
    parser.add_argument("--threads", type=int, help="worker threads")
    parser.add_argument("--n", dest="N", type=int, help="map parameter N")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load(args.config) if args.config else RunConfig()
        cfg = cfg.with_overrides(seed=args.seed, threads=args.threads, out=args.out, N=args.N,
                                 experiments=[args.command])
    except ConfigError as exc:
        for e in exc.errors:
            print(f"config error: {e}", file=sys.stderr)
        return 2
    try:
        manifest = run(cfg)
    except Exception as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    for name, res in manifest.experiments.items():
        failed = [k for k, v in res.checks.items() if not v]
        line = f"{name}: {res.status}"
        if failed:
            line += " (" + ", ".join(failed) + ")"
        if res.error:
            line += f" [{res.error}]"
        print(line)
    print(manifest.run_dir)
    return manifest.exit_code


if __name__ == "__main__":
    sys.exit(main())
