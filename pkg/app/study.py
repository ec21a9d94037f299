"""
Solution-adaptation loop and convergence-study harness.

One adaptation run repeats solve -> recover -> estimate -> adapt on a single
mesh until the local operations die out, then keeps iterating for a few more
steps to record the error envelope. A study runs every requested method over
a geometric ladder of error levels, optionally in a process pool.
"""

import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from .adapt_local import ElementAdapter
from .cases import TestCase, get_case
from .config import settings
from .errors import AdaptError
from .estimators import (
    ElementEstimates,
    HierarchicalField,
    LocalEstimator,
    compute_estimates,
    global_effectivity,
    hierarchical_reconstruct,
    log_error_std,
    write_estimates_csv,
)
from .fem import ExactErrors, ScalarField, assemble_and_solve, exact_errors
from .mesh import Mesh, read_ascii, write_ascii, write_vtk
from .metric import MetricAdapter, MetricField, attach_metric, hessian_metric, residual_metric
from .models import AdaptReportRow, RunConfig, StudyRow
from .recovery import ls_hessian, recover_gradient

logger = logging.getLogger(__name__)

ProgressCallback = Callable[[int, str], None]

LADDER_FACTOR = 2.0


def _no_progress(percent: int, message: str) -> None:
    pass


# ----------------------------------------------------------------------
# Single solve
# ----------------------------------------------------------------------

def initial_mesh(config: RunConfig) -> Mesh:
    """Mesh from the configured file, or the generated uniform n x n mesh."""
    if config.mesh:
        mesh, _ = read_ascii(config.mesh)
        return mesh
    return Mesh.uniform(config.uniform, config.pattern)


@dataclass
class SolveState:
    """Everything computed on one mesh generation."""
    mesh: Mesh
    case: TestCase
    u: ScalarField
    recovered: np.ndarray
    estimates: ElementEstimates
    errors: ExactErrors
    hierarchical: Optional[HierarchicalField] = None

    @property
    def global_ei(self) -> float:
        return global_effectivity(self.estimates, self.errors)


def solve_state(mesh: Mesh, config: RunConfig, case: Optional[TestCase] = None) -> SolveState:
    """
    Solve, recover the gradient and evaluate estimates and exact errors.

    Args:
        mesh: Compact mesh
        config: Run configuration
        case: Test case (built from the configuration when omitted)

    Returns:
        SolveState on the current mesh generation
    """
    case = case or get_case(config.case, config.alpha)
    problem = case.problem()
    u = assemble_and_solve(mesh, problem, config.solver_tol, config.solver_maxiter_factor)
    recovered = recover_gradient(mesh, u.values, config.recovery)
    estimates = compute_estimates(mesh, u, recovered, problem, config.epsilon)
    errors = exact_errors(mesh, u.values, case.exact, case.gradient, problem.diffusion)
    hierarchical = None
    if config.method == "hierarchical":
        hierarchical = hierarchical_reconstruct(mesh, u, recovered)
    return SolveState(mesh, case, u, recovered, estimates, errors, hierarchical)


def estimated_error(state: SolveState, config: RunConfig) -> float:
    """Global estimate in the norm the method adapts for."""
    if state.hierarchical is not None:
        return float(np.sqrt(np.sum(state.hierarchical.l2 ** 2)))
    if config.method == "residual-element" and config.estimator == "l2-hybrid":
        return state.estimates.global_eta_scaled
    return state.estimates.global_eta


def equidistribution_std(state: SolveState, config: RunConfig) -> Optional[float]:
    """Spread of the log-error distribution of the equidistributed quantity."""
    if config.method == "hessian-metric":
        return None
    if state.hierarchical is not None:
        return log_error_std(state.hierarchical.l2, config.l2_tol)
    if config.method == "residual-element" and config.estimator == "l2-hybrid":
        return log_error_std(state.estimates.eta_scaled, config.l2_tol)
    return log_error_std(state.estimates.eta, config.tol)


def write_snapshot(state: SolveState, out_dir: str, tag: str,
                   metric: Optional[np.ndarray] = None) -> List[str]:
    """Write the ASCII mesh and a VTK file with solution and estimate data."""
    mesh = state.mesh
    xy = mesh.coords()
    mesh_path = os.path.join(out_dir, f"mesh_{tag}.msh")
    vtk_path = os.path.join(out_dir, f"mesh_{tag}.vtk")
    write_ascii(mesh, mesh_path, metric)
    cell_data = {
        "eta": state.estimates.eta,
        "eta_scaled": state.estimates.eta_scaled,
        "exact_h1": state.errors.element_h1,
        "exact_l2": state.errors.element_l2,
    }
    if state.hierarchical is not None:
        cell_data["hierarchical_l2"] = state.hierarchical.l2
    write_vtk(
        mesh,
        vtk_path,
        point_data={"u_h": state.u.values, "u": state.case.exact(xy[:, 0], xy[:, 1])},
        cell_data=cell_data,
    )
    return [mesh_path, vtk_path]


# ----------------------------------------------------------------------
# Adaptation loop
# ----------------------------------------------------------------------

@dataclass
class AdaptationResult:
    """Outcome of one adaptation run."""
    method: str
    rows: List[AdaptReportRow]
    final: SolveState
    iterations: int
    converged: bool
    energy_envelope: Tuple[float, float]
    removed_positions: List[Tuple[float, float]] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)
    timings: Dict[str, float] = field(default_factory=dict)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows])


def _metric_for(state: SolveState, config: RunConfig) -> np.ndarray:
    mesh = state.mesh
    mc = config.metric_config()
    if config.method == "residual-metric":
        tau = config.tol / math.sqrt(mesh.num_triangles)
        return residual_metric(mesh, state.estimates, tau, mc).values
    hessian = ls_hessian(mesh, state.u.values)
    return hessian_metric(hessian, config.e_d, mc.min_eig, mc.max_eig, mesh.generation).values


def _adapt_element(state: SolveState, config: RunConfig, row: AdaptReportRow,
                   removed: List[Tuple[float, float]]) -> None:
    mesh = state.mesh
    adapt_config = config.adapt_config()
    mesh.attach_field("u", state.u.values)
    mesh.attach_field("px", state.recovered[:, 0])
    mesh.attach_field("py", state.recovered[:, 1])
    estimator = LocalEstimator(state.case.problem(), adapt_config.mode, config.epsilon)
    report = ElementAdapter(mesh, estimator, adapt_config).run()
    removed.extend(report.removed_positions)
    row.refinements = report.refinements
    row.derefinements = report.derefinements
    row.swaps_after_refinement = report.swaps_after_refinement
    row.swaps_after_derefinement = report.swaps_after_derefinement
    for key, value in report.percentages().items():
        setattr(row, key, value)
    row.move_max = report.move_max
    row.move_mean = report.move_mean


def _adapt_metric(state: SolveState, config: RunConfig, metric: np.ndarray,
                  row: AdaptReportRow) -> None:
    mesh = state.mesh
    attach_metric(mesh, MetricField(metric, mesh.generation))
    report = MetricAdapter(mesh, config.metric_config()).iterate()
    edges, vertices = max(report.edges, 1), max(report.vertices, 1)
    row.refinements = report.refinements
    row.refinements_pct = 100.0 * report.refinements / edges
    row.derefinements = report.removals
    row.derefinements_pct = 100.0 * report.removals / vertices
    row.swaps_after_refinement = report.swaps_after_refinement
    row.swaps_after_refinement_pct = 100.0 * report.swaps_after_refinement / edges
    row.swaps_after_derefinement = report.swaps_after_removal
    row.swaps_after_derefinement_pct = 100.0 * report.swaps_after_removal / edges
    row.move_max = report.move_max
    row.move_mean = report.move_mean


def run_adaptation(
    config: RunConfig,
    out_dir: Optional[str] = None,
    progress: Optional[ProgressCallback] = None,
    mesh: Optional[Mesh] = None,
) -> AdaptationResult:
    """
    Run the solution-adaptation loop of one method.

    The loop stops once the largest operation share of an iteration drops
    below `stabilize_fraction`, after `envelope_iters` further iterations
    recorded for the error envelope, or at `max_iters`.

    Args:
        config: Run configuration
        out_dir: Directory for snapshots and CSV reports (nothing written if None)
        progress: Callback receiving (percent, message)
        mesh: Initial mesh (built from the configuration when omitted)

    Returns:
        AdaptationResult with one report row per outer iteration
    """
    progress = progress or _no_progress
    if mesh is None:
        mesh = initial_mesh(config)
    if not mesh.is_compact():
        mesh.compact()
    case = get_case(config.case, config.alpha)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)

    rows: List[AdaptReportRow] = []
    removed: List[Tuple[float, float]] = []
    artifacts: List[str] = []
    envelope: List[float] = []
    timings = {"solve": 0.0, "adapt": 0.0}
    threshold = 100.0 * config.stabilize_fraction
    stable_at: Optional[int] = None
    converged = False
    iteration = 0

    while True:
        iteration += 1
        t0 = time.process_time()
        state = solve_state(mesh, config, case)
        timings["solve"] += time.process_time() - t0

        usage = state.estimates.level_usage()
        row = AdaptReportRow(
            iteration=iteration,
            vertices=mesh.num_vertices,
            triangles=mesh.num_triangles,
            estimated_error=estimated_error(state, config),
            energy_error=state.errors.energy,
            l2_error=state.errors.l2,
            log_error_std=equidistribution_std(state, config),
            subdivision_level2_pct=usage["level2_pct"],
            subdivision_level3_pct=usage["level3_pct"],
        )
        if stable_at is not None:
            envelope.append(state.errors.energy)

        done = iteration >= config.max_iters or (
            stable_at is not None and iteration - stable_at >= config.envelope_iters)
        metric = None
        if not done and config.method in ("residual-metric", "hessian-metric"):
            metric = _metric_for(state, config)
        if out_dir and (iteration in config.snapshot_iters or done):
            tag = "final" if done else f"iter{iteration:03d}"
            artifacts += write_snapshot(state, out_dir, tag, metric)
        if done:
            rows.append(row)
            break

        t0 = time.process_time()
        if metric is None:
            _adapt_element(state, config, row, removed)
        else:
            _adapt_metric(state, config, metric, row)
        mesh.compact()
        timings["adapt"] += time.process_time() - t0
        rows.append(row)

        logger.info(
            f"[{config.method}] iteration {iteration}: {row.vertices} vertices, "
            f"estimate {row.estimated_error:.4e}, energy error {row.energy_error:.4e}, "
            f"operations {row.operation_share:.2f}%"
        )
        progress(min(99, int(100 * iteration / config.max_iters)),
                 f"Iteration {iteration}: {row.vertices} vertices")

        if stable_at is None and row.operation_share < threshold:
            stable_at = iteration
            converged = True
            envelope.append(state.errors.energy)
            logger.info(f"[{config.method}] stabilised at iteration {iteration}")

    if not converged:
        logger.warning(f"[{config.method}] no stabilisation within {config.max_iters} iterations")
    if not envelope:
        envelope = [state.errors.energy]

    result = AdaptationResult(
        method=config.method,
        rows=rows,
        final=state,
        iterations=iteration,
        converged=converged,
        energy_envelope=(min(envelope), max(envelope)),
        removed_positions=removed,
        artifacts=artifacts,
        timings=timings,
    )
    if out_dir:
        report_path = os.path.join(out_dir, "adapt_report.csv")
        result.frame().to_csv(report_path, index=False, float_format="%.10e")
        estimates_path = os.path.join(out_dir, "estimates.csv")
        write_estimates_csv(estimates_path, state.estimates, state.errors)
        artifacts += [report_path, estimates_path]
    progress(100, f"Adaptation finished after {iteration} iterations")
    return result


# ----------------------------------------------------------------------
# Convergence study
# ----------------------------------------------------------------------

LEVEL_FIELD = {
    "residual-element": "tol",
    "residual-metric": "tol",
    "hessian-metric": "e_d",
    "hierarchical": "l2_tol",
}


def level_field(config: RunConfig, method: str) -> str:
    """Configuration key that sets the error level of a method."""
    if method == "residual-element" and config.estimator == "l2-hybrid":
        return "l2_tol"
    return LEVEL_FIELD[method]


def study_ladder(config: RunConfig, method: str) -> List[float]:
    """Error levels of a method, coarsest first."""
    if config.levels:
        return list(config.levels)
    start = getattr(config, level_field(config, method))
    return [start / LADDER_FACTOR ** k for k in range(config.ladder_size)]


@dataclass
class StudyResult:
    """Rows of a convergence study plus per-run CPU timings."""
    rows: List[StudyRow]
    timings: Dict[str, float] = field(default_factory=dict)
    artifacts: List[str] = field(default_factory=list)

    def frame(self) -> pd.DataFrame:
        return pd.DataFrame([row.model_dump() for row in self.rows])


def study_row(result: AdaptationResult, level: float) -> StudyRow:
    state = result.final
    errors = state.errors
    ei = state.global_ei
    return StudyRow(
        method=result.method,
        level=level,
        vertices=state.mesh.num_vertices,
        triangles=state.mesh.num_triangles,
        energy_error=errors.energy,
        l2_error=errors.l2,
        global_ei=None if math.isnan(ei) else ei,
        mean_element_h1=float(np.mean(errors.element_h1)),
        std_element_h1=float(np.std(errors.element_h1)),
        mean_element_l2=float(np.mean(errors.element_l2)),
        std_element_l2=float(np.std(errors.element_l2)),
        energy_error_min=result.energy_envelope[0],
        energy_error_max=result.energy_envelope[1],
        iterations=result.iterations,
        converged=result.converged,
    )


def run_study_task(payload: Dict) -> Tuple[Dict, float]:
    """
    Run one (method, level) adaptation.

    Module-level so it can be shipped to a process pool.

    Returns:
        Tuple of (StudyRow as dict, CPU seconds)
    """
    config = RunConfig(**payload["config"])
    method, level = payload["method"], payload["level"]
    t0 = time.process_time()
    try:
        result = run_adaptation(config, payload.get("out_dir"))
        row = study_row(result, level)
        if not row.converged:
            row.message = f"no stabilisation within {config.max_iters} iterations"
    except (AdaptError, ValueError, np.linalg.LinAlgError) as e:
        logger.warning(f"Study run {method} at level {level} failed: {e}")
        nan = float("nan")
        row = StudyRow(
            method=method, level=level, vertices=0, triangles=0,
            energy_error=nan, l2_error=nan,
            mean_element_h1=nan, std_element_h1=nan,
            mean_element_l2=nan, std_element_l2=nan,
            energy_error_min=nan, energy_error_max=nan,
            iterations=0, converged=False, failed=True, message=str(e),
        )
    row.cpu_seconds = time.process_time() - t0
    return row.model_dump(), row.cpu_seconds


def study_tasks(config: RunConfig, out_dir: Optional[str] = None) -> List[Dict]:
    tasks = []
    for method in config.methods:
        key = level_field(config, method)
        for k, level in enumerate(study_ladder(config, method)):
            run_config = config.model_copy(update={"method": method, key: level})
            run_dir = os.path.join(out_dir, method, f"level{k}") if out_dir else None
            tasks.append({
                "method": method,
                "level": level,
                "config": run_config.model_dump(),
                "out_dir": run_dir,
            })
    return tasks


def _check_monotone(rows: List[StudyRow]) -> None:
    by_method: Dict[str, List[StudyRow]] = {}
    for row in rows:
        if not row.failed:
            by_method.setdefault(row.method, []).append(row)
    for method, group in by_method.items():
        group.sort(key=lambda r: -r.level)
        counts = [r.vertices for r in group]
        if any(b < a for a, b in zip(counts, counts[1:])):
            logger.warning(f"Vertex counts of {method} not monotone in the error level: {counts}")


def run_study(
    config: RunConfig,
    out_dir: Optional[str] = None,
    progress: Optional[ProgressCallback] = None,
) -> StudyResult:
    """
    Run every configured method over its error-level ladder.

    Failed runs are recorded as flagged rows and the study continues. With
    `config.parallel` the runs execute in a process pool of
    `settings.MAX_WORKERS` workers; rows keep the task order either way.

    Args:
        config: Study configuration (case, methods, levels or ladder size)
        out_dir: Directory for study.csv, per-run artifacts and the plot
        progress: Callback receiving (percent, message)

    Returns:
        StudyResult
    """
    progress = progress or _no_progress
    tasks = study_tasks(config, out_dir)
    logger.info(f"Study of {len(tasks)} runs on case {config.case} "
                f"({'parallel' if config.parallel else 'sequential'})")

    outputs: List[Tuple[Dict, float]] = []
    if config.parallel and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=settings.MAX_WORKERS) as executor:
            for k, output in enumerate(executor.map(run_study_task, tasks)):
                outputs.append(output)
                progress(int(100 * (k + 1) / len(tasks)), f"Finished run {k + 1}/{len(tasks)}")
    else:
        for k, task in enumerate(tasks):
            outputs.append(run_study_task(task))
            progress(int(100 * (k + 1) / len(tasks)), f"Finished run {k + 1}/{len(tasks)}")

    rows = [StudyRow(**row) for row, _ in outputs]
    timings = {f"{t['method']}@{t['level']:g}": cpu for t, (_, cpu) in zip(tasks, outputs)}
    for row in rows:
        logger.info(f"{row.method} level {row.level:g}: {row.vertices} vertices, "
                    f"energy {row.energy_error:.4e}, L2 {row.l2_error:.4e}")
    _check_monotone(rows)

    result = StudyResult(rows, timings)
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "study.csv")
        result.frame().to_csv(csv_path, index=False, float_format="%.10e")
        result.artifacts.append(csv_path)
        if config.plot:
            from .plotting import plot_convergence

            plot_path = os.path.join(out_dir, "convergence.png")
            plot_convergence(result.frame(), plot_path, title=f"Case {config.case}")
            result.artifacts.append(plot_path)
    return result


def convergence_slope(vertices, errors) -> float:
    """Least-squares slope of log(error) against log(vertices)."""
    x = np.log(np.asarray(vertices, dtype=float))
    y = np.log(np.asarray(errors, dtype=float))
    return float(np.polyfit(x, y, 1)[0])
