"""Command-line entrypoint connecting the service wiring."""
from __future__ import annotations

import argparse
import logging
from pathlib import Path

from .assembly import LoadCompatibilityError
from .config import DEFAULT_SETTINGS_PATH, ConfigRejection, build_run_config, load_app_config
from .experiments import EXPERIMENTS
from .manufactured import UnknownLoadError
from .models import NcfemError
from .service import NcfemService
from .smoothing import FAULTS

_LOGGER = logging.getLogger(__name__)

EXIT_REJECTED = 2
EXIT_NUMERICAL = 3

TOLERANCE_FLAGS = {
    "tol_identity": "identity",
    "tol_projection": "projection",
    "tol_right_inverse": "right_inverse",
    "tol_c1": "c1_sampling",
    "tol_rank": "rank",
}


def build_default_app(settings_path: Path | None = None) -> NcfemService:
    """Construct the service using the project settings."""
    return NcfemService(config=load_app_config(settings_path or DEFAULT_SETTINGS_PATH))


def _common_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--method", default="cr", help="cr, gl:<p> or morley")
    common.add_argument("--p", type=int, help="Polynomial order for the gl method")
    common.add_argument("--variant", default="smoothed", choices=["classical", "smoothed"])
    common.add_argument("--mesh", default="gen:square:4", help="gen:<square|crisscross|lshape>:<n> or a mesh file")
    common.add_argument("--load", help="manufactured:<name>, checkerboard or constant")
    common.add_argument("--levels", type=int, default=4, help="Number of meshes in a convergence study")
    common.add_argument("--out", type=Path, help="Output directory (defaults to output.directory)")
    common.add_argument("--fault", choices=FAULTS, help="Deliberately break the smoother (test hook)")
    for flag in TOLERANCE_FLAGS:
        common.add_argument("--" + flag.replace("_", "-"), dest=flag, type=float)
    common.add_argument(
        "--settings",
        type=Path,
        help="Path to settings TOML (defaults to config/settings.toml)",
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"],
        help="Logging verbosity",
    )
    return common


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    common = _common_parser()
    parser = argparse.ArgumentParser(description="Nonconforming finite elements with right-inverse smoothing")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("solve", parents=[common], help="Solve once and write samples and a manifest")
    commands.add_parser("convergence", parents=[common], help="Error, best error and rates over refinements")
    commands.add_parser("verify", parents=[common], help="Run the verification suite")
    experiment = commands.add_parser("experiment", parents=[common], help="Run a named counterexperiment")
    experiment.add_argument("name", choices=sorted(EXPERIMENTS))
    return parser.parse_args(argv)


def main(argv: list[str] | None = None) -> int:
    """CLI entrypoint; returns the process exit code."""
    args = _parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format="%(asctime)s %(levelname)s %(message)s",
    )

    app = build_default_app(args.settings)
    overrides = {name: getattr(args, flag) for flag, name in TOLERANCE_FLAGS.items() if getattr(args, flag) is not None}
    try:
        run = build_run_config(
            args.command,
            method=args.method,
            p=args.p,
            variant=args.variant,
            mesh=args.mesh,
            load=args.load,
            levels=args.levels,
            out=args.out,
            tolerance_overrides=overrides,
            fault=args.fault,
            experiment=getattr(args, "name", None),
            app_config=app.config,
        )
        return app.run(run)
    except (ConfigRejection, UnknownLoadError, LoadCompatibilityError) as exc:
        _LOGGER.error("Rejected: %s", exc)
        return EXIT_REJECTED
    except NcfemError as exc:
        _LOGGER.exception("Numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    raise SystemExit(main())
