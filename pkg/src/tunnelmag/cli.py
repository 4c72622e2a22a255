"""Command-line entry point: ``tunnelmag <stage> --config FILE [--output DIR] [--threads N]``.

Exit codes: 0 success, 1 validation error, 2 runtime stage failure.
Logging verbosity comes from ``TUNNELMAG_LOG`` (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .config import load_config
from .errors import ValidationError
from .pipeline import STAGES, StageFailure, run_full, run_stage

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tunnelmag", description="Deformation-mode magnification and convergence monitoring")
    sub = parser.add_subparsers(dest="stage", required=True, metavar="stage")
    helps = {
        "full": "run ingest, magnify, flow and analyze",
        "ingest": "load, downsample and illumination-correct the input frames",
        "magnify": "magnify the deformation band of the ingested frames",
        "flow": "dense flow from the reference frame to every magnified frame",
        "analyze": "median smoothing, convergence and ring shapes from flow dumps",
        "synth": "render a synthetic scene (--config is a scene spec)",
    }
    for name in ("full",) + STAGES:
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--config", required=True, help="pipeline config (YAML/JSON); scene spec for synth")
        p.add_argument("--output", help="output directory (overrides output.dir)")
        p.add_argument("--threads", type=int, default=1, help="worker threads, 0 = one per CPU")
    return parser


def _setup_logging() -> None:
    level = os.environ.get("TUNNELMAG_LOG", "warn").lower()
    logging.basicConfig(level=LOG_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _setup_logging()
    log = logging.getLogger("tunnelmag")
    if args.threads < 0:
        log.error("--threads must be >= 0")
        return EXIT_VALIDATION
    threads = args.threads or (os.cpu_count() or 1)
    try:
        if args.stage == "synth":
            report = run_stage("synth", scene_path=args.config, output=args.output or "scene", threads=threads)
        else:
            cfg = load_config(args.config)
            if args.output:
                cfg = cfg.with_output(args.output)
            if args.stage == "full":
                report = run_full(cfg, threads=threads)
            else:
                report = run_stage(args.stage, cfg, threads=threads)
    except StageFailure as exc:
        cause = exc.__cause__
        log.error("%s", exc)
        return EXIT_VALIDATION if isinstance(cause, ValidationError) else EXIT_RUNTIME
    except ValidationError as exc:
        log.error("%s", exc)
        return EXIT_VALIDATION
    except Exception as exc:  # lock contention and other failures outside a stage
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_RUNTIME
    for w in report.warnings:
        log.warning("%s", w)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
