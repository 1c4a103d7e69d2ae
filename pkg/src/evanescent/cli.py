"""Command line entry point: ``evanescent <stage> [--config PATH] [--out DIR]
[--workers N] [--mesh-scale F]``.

Exit codes: 0 success, 2 configuration error, 3 solver or calibration
failure, 4 missing artifact from an earlier stage.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .pipeline import STAGES, ConfigError, MissingArtifact, PipelineConfig

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_MISSING = 0, 2, 3, 4


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evanescent", description=__doc__.split("\n\n")[0])
    ap.add_argument("stage", choices=list(STAGES), help="pipeline stage to run")
    ap.add_argument("--config", metavar="PATH", help="JSON config (missing keys take defaults)")
    ap.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    ap.add_argument("--workers", type=int, metavar="N", help="worker threads for tables and pulses")
    ap.add_argument("--mesh-scale", type=float, metavar="F",
                    help="coarsen h_x and h_y by this factor (smoke tests)")
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    return ap


def resolve_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    data = cfg.to_dict()
    if args.out is not None:
        data["output_dir"] = args.out
    if args.workers is not None:
        data["workers"] = args.workers
    if args.mesh_scale is not None:
        data["mesh_scale"] = args.mesh_scale
    return PipelineConfig.from_dict(data)


def main(argv=None) -> int:
    from .potential import CalibrationError
    from .spectral import SolverError

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        STAGES[args.stage](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifact as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
