"""Command-line entry point.

Usage::

    bigmodel parcels|density|identify|calibrate|simulate|exposure|all
             --config FILE [--seed N] [--jobs N] [--scenario bau|uao|ntu]
             [--out DIR]

Exit codes: 0 success, 2 input error, 3 missing dependency artifact.
Logs go to standard error; artifacts land in the output directory.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config
from .expansion_sim import SCENARIOS
from .geoio import GeoIOError
from .pipeline import STAGES, DependencyError, run_pipeline

EXIT_OK = 0
EXIT_INPUT_ERROR = 2
EXIT_DEPENDENCY_ERROR = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bigmodel",
        description="Parcel delineation, urban identification, expansion "
                    "scenarios, and PM2.5 exposure estimation.")
    sub = parser.add_subparsers(dest="stage", required=True)
    for stage in STAGES + ("all",):
        p = sub.add_parser(stage, help=f"run the {stage} stage")
        p.add_argument("--config", required=True, help="pipeline config YAML")
        p.add_argument("--seed", type=int, default=None, help="override the RNG seed")
        p.add_argument("--jobs", type=int, default=None, help="worker pool size")
        p.add_argument("--scenario", choices=SCENARIOS, default=None,
                       help="expansion scenario")
        p.add_argument("--out", default=None, help="output directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(stream=sys.stderr, level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.jobs is not None:
            cfg.jobs = args.jobs
        if args.scenario is not None:
            cfg.scenario = args.scenario
        if args.out is not None:
            cfg.out_dir = Path(args.out)
        run_pipeline(cfg, args.stage)
    except DependencyError as err:
        logging.error("%s", err)
        return EXIT_DEPENDENCY_ERROR
    except (ConfigError, GeoIOError, ValueError, OSError) as err:
        logging.error("%s", err)
        return EXIT_INPUT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
