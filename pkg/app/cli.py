"""
Command-line entry point.

    python -m app.cli solve --case u1 --uniform 32
    python -m app.cli adapt --case u1 --method residual-element --tol 0.125 --max-iters 40
    python -m app.cli study --config study.env --parallel
    python -m app.cli estimate --case u2 --alpha 1000 --uniform 20

A config file holds `key=value` lines (dotted and dashed keys allowed, e.g.
`metric.intersection = average`); command-line flags override it. Exit codes:
0 ok, 1 configuration error, 2 runtime error.
"""

import argparse
import logging
import os
import platform
import sys
import time
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
import scipy
from dotenv import dotenv_values
from pydantic import ValidationError

from . import __version__
from .config import settings
from .errors import ConfigError
from .estimators import (
    effectivity_fraction,
    hierarchical_reconstruct,
    l2_h1_ratio,
    local_effectivity,
    write_estimates_csv,
)
from .models import RunConfig, RunManifest
from .study import SolveState, initial_mesh, run_adaptation, run_study, solve_state, write_snapshot

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

LIST_FIELDS = {"methods", "levels", "snapshot_iters"}


def library_versions() -> Dict[str, str]:
    return {
        "app": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "pandas": pd.__version__,
    }


# ----------------------------------------------------------------------
# Configuration
# ----------------------------------------------------------------------

def normalise_key(key: str) -> str:
    return key.strip().replace(".", "_").replace("-", "_").lower()


def load_config_file(path: str) -> Dict[str, Any]:
    """Read a key=value config file into RunConfig keyword arguments."""
    if not os.path.isfile(path):
        raise ConfigError(f"Config file not found: {path}")
    values: Dict[str, Any] = {}
    for key, value in dotenv_values(path).items():
        if value is None:
            raise ConfigError(f"Config key without value: {key}")
        key = normalise_key(key)
        if key in LIST_FIELDS:
            values[key] = [item.strip() for item in value.replace(",", " ").split() if item.strip()]
        else:
            values[key] = value.strip()
    return values


def build_config(file_values: Dict[str, Any], overrides: Dict[str, Any]) -> RunConfig:
    """
    Merge config-file values with flag overrides and validate.

    Raises:
        ConfigError: Unknown key or invalid value
    """
    merged = {**file_values, **{normalise_key(k): v for k, v in overrides.items()}}
    try:
        return RunConfig(**merged)
    except ValidationError as e:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}" for err in e.errors()
        )
        raise ConfigError(f"Invalid configuration: {details}") from e


def output_dir_for(config: RunConfig, command: str) -> str:
    path = config.output_dir or os.path.join(settings.OUTPUT_DIR, command)
    os.makedirs(path, exist_ok=True)
    return path


# ----------------------------------------------------------------------
# Commands
# ----------------------------------------------------------------------

CommandResult = Tuple[Dict[str, Any], List[str], Dict[str, float]]
Progress = Optional[Callable[[int, str], None]]


def _solve(config: RunConfig, out_dir: str) -> Tuple[SolveState, CommandResult]:
    t0 = time.process_time()
    mesh = initial_mesh(config)
    state = solve_state(mesh, config)
    elapsed = time.process_time() - t0
    artifacts = write_snapshot(state, out_dir, "solution")
    summary = {
        "case": config.case,
        "vertices": mesh.num_vertices,
        "triangles": mesh.num_triangles,
        "energy_error": state.errors.energy,
        "h1_error": state.errors.h1_semi,
        "l2_error": state.errors.l2,
        "estimated_error": state.estimates.global_eta,
        "global_ei": state.global_ei,
        "solver_iterations": state.u.iterations,
    }
    logger.info(f"Solved {config.case} on {mesh.num_vertices} vertices: "
                f"energy error {state.errors.energy:.4e}, L2 error {state.errors.l2:.4e}")
    return state, (summary, artifacts, {"solve": elapsed})


def cmd_solve(config: RunConfig, out_dir: str, progress: Progress = None) -> CommandResult:
    """Solve on the initial mesh and report exact errors."""
    return _solve(config, out_dir)[1]


def cmd_estimate(config: RunConfig, out_dir: str, progress: Progress = None) -> CommandResult:
    """Solve, estimate and dump the per-element estimate table."""
    state, (summary, artifacts, timings) = _solve(config, out_dir)
    t0 = time.process_time()
    path = os.path.join(out_dir, "estimates.csv")
    write_estimates_csv(path, state.estimates, state.errors)
    timings["estimate"] = time.process_time() - t0

    local_h1 = local_effectivity(state.estimates.eta, state.errors.element_h1)
    local_l2 = local_effectivity(state.estimates.eta_scaled, state.errors.element_l2)
    hierarchical = state.hierarchical
    if hierarchical is None:
        hierarchical = hierarchical_reconstruct(state.mesh, state.u, state.recovered)
    ratio = l2_h1_ratio(state.mesh, hierarchical)
    summary.update({
        "estimated_error_scaled": state.estimates.global_eta_scaled,
        "local_ei_h1_in_range": effectivity_fraction(local_h1),
        "local_ei_l2_in_range": effectivity_fraction(local_l2),
        "hierarchical_l2_h1_ratio_min": float(np.nanmin(ratio)),
        "hierarchical_l2_h1_ratio_max": float(np.nanmax(ratio)),
        **state.estimates.level_usage(),
    })
    return summary, artifacts + [path], timings


def cmd_adapt(config: RunConfig, out_dir: str, progress: Progress = None) -> CommandResult:
    """Run the adaptation loop of the configured method."""
    result = run_adaptation(config, out_dir, progress)
    final = result.final
    summary = {
        "case": config.case,
        "method": config.method,
        "iterations": result.iterations,
        "converged": result.converged,
        "vertices": final.mesh.num_vertices,
        "triangles": final.mesh.num_triangles,
        "energy_error": final.errors.energy,
        "l2_error": final.errors.l2,
        "energy_error_min": result.energy_envelope[0],
        "energy_error_max": result.energy_envelope[1],
        "estimated_error": result.rows[-1].estimated_error,
    }
    return summary, result.artifacts, result.timings


def cmd_study(config: RunConfig, out_dir: str, progress: Progress = None) -> CommandResult:
    """Run the convergence study over methods and error levels."""
    result = run_study(config, out_dir, progress)
    summary = {
        "case": config.case,
        "runs": len(result.rows),
        "failed": sum(1 for row in result.rows if row.failed),
        "not_converged": sum(1 for row in result.rows if not row.converged),
    }
    return summary, result.artifacts, result.timings


COMMANDS: Dict[str, Callable[..., CommandResult]] = {
    "solve": cmd_solve,
    "adapt": cmd_adapt,
    "study": cmd_study,
    "estimate": cmd_estimate,
}


def write_manifest(manifest: RunManifest, out_dir: str) -> str:
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as f:
        f.write(manifest.model_dump_json(indent=2))
    return path


def run_command(command: str, config: RunConfig, progress: Progress = None) -> RunManifest:
    """
    Run a command and write its manifest; a failed run still gets a manifest
    listing the artifacts written before the failure.

    Raises:
        Exception: Re-raised after the failure manifest is written
    """
    out_dir = output_dir_for(config, command)
    manifest = RunManifest(
        command=command,
        status="running",
        config=config.model_dump(),
        versions=library_versions(),
        started_at=datetime.utcnow(),
    )
    try:
        summary, artifacts, timings = COMMANDS[command](config, out_dir, progress)
    except Exception as e:
        manifest.status = "failed"
        manifest.error = f"{type(e).__name__}: {e}"
        manifest.artifacts = sorted(
            os.path.join(root, name) for root, _, names in os.walk(out_dir) for name in names
            if name != "manifest.json"
        )
        manifest.finished_at = datetime.utcnow()
        write_manifest(manifest, out_dir)
        raise
    manifest.status = "completed"
    manifest.summary = summary
    manifest.artifacts = artifacts
    manifest.timings = timings
    manifest.finished_at = datetime.utcnow()
    write_manifest(manifest, out_dir)
    return manifest


# ----------------------------------------------------------------------
# Argument parsing
# ----------------------------------------------------------------------

def _common_arguments() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--case", choices=["u1", "u2"])
    p.add_argument("--alpha", type=float, help="wave-front steepness of u2")
    p.add_argument("--method",
                   choices=["residual-element", "residual-metric", "hessian-metric", "hierarchical"])
    p.add_argument("--estimator", choices=["h1", "l2-hybrid"])
    p.add_argument("--tol", type=float, help="energy-norm TOL")
    p.add_argument("--l2-tol", type=float, help="L2 target")
    p.add_argument("--e-d", type=float, help="Hessian-metric interpolation error level")
    p.add_argument("--recovery", choices=["zhang-naga", "zz"])
    p.add_argument("--max-iters", type=int)
    p.add_argument("--epsilon", type=float, help="subdivided quadrature threshold")
    p.add_argument("--output-dir")
    p.add_argument("--mesh", help="initial mesh file")
    p.add_argument("--uniform", type=int, help="cells per side of the generated mesh")
    p.add_argument("--pattern", choices=["parallel", "chevron"])
    p.add_argument("--seed", type=int)
    p.add_argument("--refine-factor", type=float)
    p.add_argument("--sub-loop-repetitions", type=int)
    p.add_argument("--adapt-repetitions", type=int)
    p.add_argument("--metric-intersection", choices=["intersect", "average"])
    p.add_argument("--metric-drop-residual-term", action="store_true")
    p.add_argument("--envelope-iters", type=int)
    p.add_argument("--snapshot-iters", type=int, nargs="+")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="python -m app.cli",
        description="Anisotropic adaptive P1 finite elements on the unit square",
    )
    parser.add_argument("--log-level", default=settings.LOG_LEVEL)
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common_arguments()
    sub.add_parser("solve", parents=[common], help="solve and report exact errors")
    sub.add_parser("adapt", parents=[common], help="run the adaptation loop")
    sub.add_parser("estimate", parents=[common], help="dump per-element estimates")
    study = sub.add_parser("study", parents=[common], help="convergence study over methods and levels")
    study.add_argument("--methods", nargs="+")
    study.add_argument("--levels", type=float, nargs="+")
    study.add_argument("--ladder-size", type=int)
    study.add_argument("--parallel", action="store_true")
    study.add_argument("--plot", action="store_true")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_CONFIG

    logging.basicConfig(level=args.log_level.upper(),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    overrides = vars(args).copy()
    command = overrides.pop("command")
    overrides.pop("log_level")
    config_path = overrides.pop("config", None)

    try:
        file_values = load_config_file(config_path) if config_path else {}
        config = build_config(file_values, overrides)
    except ConfigError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        manifest = run_command(command, config)
    except Exception as e:
        logger.error(f"{command} failed: {e}", exc_info=True)
        print(f"Run failed: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    print(f"{command} completed; manifest in {output_dir_for(config, command)}")
    for key, value in (manifest.summary or {}).items():
        print(f"  {key}: {value}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
