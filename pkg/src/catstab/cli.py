"""Command line: ``catstab <experiment> --config <path> [--out <dir>] [--threads N] [--full-model]``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 capacity error.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .errors import CapacityError, CatstabError, ConfigError, DimensionError
from .harness import EXPERIMENTS, ExperimentConfig, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_CAPACITY = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="catstab", description="Cat-state stabilization experiments")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, help="JSON experiment configuration")
    parser.add_argument("--out", help="output directory (overrides the config)")
    parser.add_argument("--threads", type=int, help="worker count for sweeps and Wigner grids")
    parser.add_argument("--full-model", action="store_true",
                        help="sweep with the three-mode model instead of the effective mapping")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be at least 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        config = ExperimentConfig.load(args.config)
        if config.experiment != args.experiment:
            raise config.error(
                f"config is for experiment {config.experiment!r}, command line asked for "
                f"{args.experiment!r}", "experiment")
        result = run(config, out_dir=args.out, threads=args.threads, full_model=args.full_model)
    except (ConfigError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CapacityError as exc:
        print(f"capacity error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (CatstabError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    for key, value in result.summary.items():
        print(f"{key}: {value}")
    print(f"wrote {len(result.artifacts)} artifacts to {result.out_dir}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
