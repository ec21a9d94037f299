"""
Element-based anisotropic adaptation by local mesh modification.

One adaptation step runs, with the element count N_T frozen at its start:

    (a) edge refinement sweep
    (b) swap pass + node movement, repeated
    (c) node removal sweep
    (d) swap pass + node movement, repeated

Every operation is applied tentatively and undone when the acceptance test
fails. The mesh carries the P1 fields the estimator reads, so accepted and
rejected operations keep the continuous data consistent.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Protocol, Tuple

import numpy as np

from .config import settings
from .errors import AdaptError
from .mesh import Edge, Mesh, MeshChange, edge_key
from .models import AdaptConfig

logger = logging.getLogger(__name__)

# Relative margin a swap must gain on the extended patch
SWAP_MARGIN = 1e-12
# Finite-difference step and first trial displacement, relative to the shortest incident edge
FD_STEP = 0.01
MOVE_STEP = 0.2
# Debug checks: tolerance of the tracked smoothing sum and the share of
# accepted swaps verified against a full recomputation
RUNNING_TOTAL_RTOL = 1e-8
SWAP_CHECK_FRACTION = 0.1


class ElementQuantities(Protocol):
    """Source of (refinement quantity, smoothing quantity) per element."""

    def quantities(self, mesh: Mesh, tid: int) -> Tuple[float, float]:
        ...


@dataclass
class StepReport:
    """Operation counts of one adaptation step."""
    edges: int = 0
    vertices: int = 0
    refinements: int = 0
    derefinements: int = 0
    swaps_after_refinement: int = 0
    swaps_after_derefinement: int = 0
    displacements: List[float] = field(default_factory=list)
    removed_positions: List[Tuple[float, float]] = field(default_factory=list)

    @property
    def move_max(self) -> float:
        return max(self.displacements, default=0.0)

    @property
    def move_mean(self) -> float:
        if not self.displacements:
            return 0.0
        return sum(self.displacements) / len(self.displacements)

    def merge(self, other: "StepReport") -> None:
        self.refinements += other.refinements
        self.derefinements += other.derefinements
        self.swaps_after_refinement += other.swaps_after_refinement
        self.swaps_after_derefinement += other.swaps_after_derefinement
        self.displacements.extend(other.displacements)
        self.removed_positions.extend(other.removed_positions)

    def percentages(self) -> Dict[str, float]:
        edges = max(self.edges, 1)
        vertices = max(self.vertices, 1)
        return {
            "refinements_pct": 100.0 * self.refinements / edges,
            "derefinements_pct": 100.0 * self.derefinements / vertices,
            "swaps_after_refinement_pct": 100.0 * self.swaps_after_refinement / edges,
            "swaps_after_derefinement_pct": 100.0 * self.swaps_after_derefinement / edges,
        }


class ElementAdapter:
    """
    Local-operation driver over a mutable mesh.

    Element quantities are cached by triangle id; every applied or undone
    operation invalidates the elements whose value it can change.

    With debug checks on, the adapter also keeps a running total of the
    smoothing quantity, updated from the extended patch of every accepted
    operation. It is compared with a full recomputation after every sweep
    and after a random sample of swaps, and mesh invariants are asserted
    after every accepted operation.
    """

    def __init__(self, mesh: Mesh, estimator: ElementQuantities, config: AdaptConfig,
                 debug_checks: Optional[bool] = None, seed: int = 0):
        self.mesh = mesh
        self.estimator = estimator
        self.config = config
        self.debug_checks = settings.DEBUG_CHECKS if debug_checks is None else debug_checks
        self._cache: Dict[int, Tuple[float, float]] = {}
        self._reference_area = mesh.total_area() if self.debug_checks else None
        self._rng = np.random.default_rng(seed)
        self._running: Optional[float] = self.fresh_total() if self.debug_checks else None

    # ------------------------------------------------------------------
    # Cached element quantities
    # ------------------------------------------------------------------

    def _values(self, tid: int) -> Tuple[float, float]:
        hit = self._cache.get(tid)
        if hit is None:
            hit = self.estimator.quantities(self.mesh, tid)
            self._cache[tid] = hit
        return hit

    def _prefetch(self, tids: Iterable[int]) -> None:
        prefetch = getattr(self.estimator, "prefetch", None)
        if prefetch is not None:
            prefetch(self.mesh, [t for t in tids if t not in self._cache])

    def refine_value(self, tid: int) -> float:
        return self._values(tid)[0]

    def smooth_value(self, tid: int) -> float:
        return self._values(tid)[1]

    def patch_sum(self, tids: Iterable[int], smooth: bool = False) -> float:
        tids = list(tids)
        self._prefetch(tids)
        k = 1 if smooth else 0
        return math.fsum(self._values(t)[k] for t in tids)

    def global_sum(self, smooth: bool = True) -> float:
        return self.patch_sum(self.mesh.triangles, smooth)

    @property
    def cache_size(self) -> int:
        return len(self._cache)

    def _invalidate(self, tids: Iterable[int]) -> None:
        for tid in self.mesh.extended_set(t for t in tids if t in self.mesh.triangles):
            self._cache.pop(tid, None)

    def _forget(self, tids: Iterable[int]) -> None:
        for tid in tids:
            self._cache.pop(tid, None)

    def _apply(self, change: MeshChange) -> None:
        if change.kind == "move":
            self._invalidate(self.mesh.vertex_triangles[change.moved_vertex])
        else:
            self._forget(change.removed)
            self._invalidate(change.added)

    def _undo(self, change: MeshChange) -> None:
        self.mesh.undo(change)
        if change.kind == "move":
            self._invalidate(self.mesh.vertex_triangles[change.moved_vertex])
        else:
            self._forget(change.added)
            self._invalidate(change.removed)

    def _changed_triangles(self, change: MeshChange) -> Iterable[int]:
        if change.kind == "move":
            return self.mesh.vertex_triangles[change.moved_vertex]
        return change.added

    def _commit(self, change: MeshChange, region_before: Optional[float]) -> None:
        if region_before is not None:
            self._running += self._region_sum(self._changed_triangles(change)) - region_before
        if self.debug_checks:
            self.mesh.assert_valid(self._reference_area)

    # ------------------------------------------------------------------
    # Tracked smoothing total
    # ------------------------------------------------------------------

    @property
    def running_total(self) -> Optional[float]:
        """Incrementally tracked sum of the smoothing quantity (debug checks only)."""
        return self._running

    def _region_sum(self, tids: Iterable[int]) -> Optional[float]:
        """Smoothing sum over the triangles an operation on tids can change."""
        if self._running is None:
            return None
        return self.patch_sum(self.mesh.extended_set(tids), smooth=True)

    def fresh_total(self) -> float:
        """Sum of the smoothing quantity over the mesh, bypassing the cache."""
        mesh = self.mesh
        prefetch = getattr(self.estimator, "prefetch", None)
        if prefetch is not None:
            prefetch(mesh, list(mesh.triangles))
        return math.fsum(self.estimator.quantities(mesh, t)[1] for t in mesh.triangles)

    def check_running_total(self, where: str) -> None:
        """
        Compare the tracked total with a full recomputation.

        Raises:
            AdaptError: If they differ by more than RUNNING_TOTAL_RTOL
        """
        if self._running is None:
            return
        fresh = self.fresh_total()
        if abs(fresh - self._running) > RUNNING_TOTAL_RTOL * max(abs(fresh), abs(self._running)):
            raise AdaptError(
                f"Tracked smoothing sum {self._running!r} differs from recomputed {fresh!r} after {where}"
            )
        self._running = fresh

    def _finish_sweep(self, where: str) -> None:
        trim = getattr(self.estimator, "trim_cache", None)
        if trim is not None:
            trim(self.mesh)
        self.check_running_total(where)

    # ------------------------------------------------------------------
    # Refinement
    # ------------------------------------------------------------------

    def try_refine_edge(self, edge: Edge, target: float) -> bool:
        """Split an edge if the patch-mean error moves closer to the target."""
        mesh = self.mesh
        if edge not in mesh.edges:
            return False
        before_tris = list(mesh.edges[edge])
        before = self.patch_sum(before_tris) / len(before_tris)
        region = self._region_sum(before_tris)
        change = mesh.split_edge(edge)
        if change is None:
            return False
        self._apply(change)
        after = self.patch_sum(change.added) / len(change.added)
        if abs(after - target) < abs(before - target):
            self._commit(change, region)
            return True
        self._undo(change)
        return False

    def refine_sweep(self, target: float) -> int:
        mesh = self.mesh
        threshold = self.config.refine_factor * target
        self._prefetch(mesh.triangles)
        candidates: Dict[Edge, float] = {}
        for tid in list(mesh.triangles):
            value = self.refine_value(tid)
            if value > threshold:
                for key in mesh.triangle_edges(tid):
                    candidates[key] = max(candidates.get(key, 0.0), value)
        order = sorted(candidates, key=lambda k: (-candidates[k], k))
        count = 0
        for key in order:
            if self.try_refine_edge(key, target):
                count += 1
        logger.debug(f"Refinement sweep: {count}/{len(order)} candidate edges split")
        self._finish_sweep("refinement sweep")
        return count

    # ------------------------------------------------------------------
    # Swapping
    # ------------------------------------------------------------------

    def try_swap_edge(self, edge: Edge) -> Optional[Edge]:
        """Swap an interior edge if the smoothing quantity drops on the extended patch."""
        mesh = self.mesh
        if edge not in mesh.edges or edge in mesh.boundary or len(mesh.edges[edge]) != 2:
            return None
        patch = mesh.edge_patch(edge)
        before = self.patch_sum(patch.incident + patch.extended, smooth=True)
        change = mesh.swap_edge(edge)
        if change is None:
            return None
        self._apply(change)
        after = self.patch_sum(change.added + patch.extended, smooth=True)
        if after < before - SWAP_MARGIN * abs(before):
            self._commit(change, before if self._running is not None else None)
            if self._running is not None and self._rng.random() < SWAP_CHECK_FRACTION:
                self.check_running_total("swap")
            return change.new_edge
        self._undo(change)
        return None

    def swap_pass(self) -> int:
        """
        Loop over the edge list trying every interior edge; swapped edges go
        to the end of the list. Full passes repeat until one makes no swap.

        Returns:
            Number of accepted swaps
        """
        total = 0
        for _ in range(self.config.swap_pass_cap):
            work = [k for k, tris in self.mesh.edges.items() if len(tris) == 2]
            swaps = 0
            i = 0
            while i < len(work):
                new_edge = self.try_swap_edge(work[i])
                i += 1
                if new_edge is not None:
                    swaps += 1
                    work.append(new_edge)
            total += swaps
            if swaps == 0:
                break
        else:
            logger.warning(f"Swap loop stopped after {self.config.swap_pass_cap} passes")
        self._finish_sweep("swap pass")
        return total

    # ------------------------------------------------------------------
    # Node removal
    # ------------------------------------------------------------------

    def try_remove_vertex(self, v: int, target: float) -> bool:
        """Remove an interior vertex if the patch-mean error moves closer to the target."""
        mesh = self.mesh
        if not mesh.alive[v] or mesh.is_boundary_vertex(v):
            return False
        before_tris = list(mesh.vertex_triangles[v])
        before = self.patch_sum(before_tris) / len(before_tris)
        region = self._region_sum(before_tris)
        change = mesh.remove_vertex(v)
        if change is None:
            return False
        self._apply(change)
        after = self.patch_sum(change.added) / len(change.added)
        if abs(after - target) < abs(before - target):
            self._commit(change, region)
            return True
        self._undo(change)
        return False

    def remove_sweep(self, target: float, positions: Optional[List] = None) -> int:
        mesh = self.mesh
        self._prefetch(mesh.triangles)
        candidates = []
        for v in mesh.vertex_ids():
            if mesh.is_boundary_vertex(v):
                continue
            tris = mesh.vertex_triangles[v]
            mean = self.patch_sum(tris) / len(tris)
            if mean < target:
                candidates.append((mean, v))
        candidates.sort()
        count = 0
        for _, v in candidates:
            point = mesh.points[v]
            if self.try_remove_vertex(v, target):
                count += 1
                if positions is not None:
                    positions.append(point)
        logger.debug(f"Removal sweep: {count}/{len(candidates)} vertices removed")
        self._finish_sweep("removal sweep")
        return count

    # ------------------------------------------------------------------
    # Node movement
    # ------------------------------------------------------------------

    def patch_variance(self, v: int) -> float:
        values = [self.smooth_value(t) for t in self._sorted_patch(v)]
        mean = sum(values) / len(values)
        return sum((x - mean) ** 2 for x in values) / len(values)

    def _sorted_patch(self, v: int) -> List[int]:
        tids = sorted(self.mesh.vertex_triangles[v])
        self._prefetch(tids)
        return tids

    def _trial_variance(self, v: int, position: Tuple[float, float]) -> Optional[float]:
        change = self.mesh.move_vertex(v, position)
        if change is None:
            return None
        self._apply(change)
        value = self.patch_variance(v)
        self._undo(change)
        return value

    def move_vertex_step(self, v: int) -> float:
        """
        One finite-difference descent step on the variance of the smoothing
        quantity over the vertex patch.

        Returns:
            Displacement length (0 when no improving position was found)
        """
        mesh = self.mesh
        if not mesh.alive[v]:
            return 0.0
        if mesh.is_boundary_vertex(v):
            tangent = mesh.boundary_tangent(v)
            if tangent is None:
                return 0.0
            directions = [tangent]
        else:
            directions = [(1.0, 0.0), (0.0, 1.0)]

        p = mesh.points[v]
        h_min = min(mesh.edge_length(edge_key(v, w)) for w in mesh.vertex_neighbours(v))
        delta = FD_STEP * h_min
        current = self.patch_variance(v)
        if current <= 0.0:
            return 0.0

        gradient = []
        for dx, dy in directions:
            plus = self._trial_variance(v, (p[0] + delta * dx, p[1] + delta * dy))
            minus = self._trial_variance(v, (p[0] - delta * dx, p[1] - delta * dy))
            if plus is None or minus is None:
                return 0.0
            gradient.append((plus - minus) / (2 * delta))

        gx = sum(g * d[0] for g, d in zip(gradient, directions))
        gy = sum(g * d[1] for g, d in zip(gradient, directions))
        norm = math.hypot(gx, gy)
        if norm == 0.0:
            return 0.0

        region = self._region_sum(mesh.vertex_triangles[v])
        step = MOVE_STEP * h_min
        for _ in range(self.config.move_halvings + 1):
            target = (p[0] - step * gx / norm, p[1] - step * gy / norm)
            change = mesh.move_vertex(v, target)
            if change is not None:
                self._apply(change)
                if self.patch_variance(v) < current:
                    self._commit(change, region)
                    return step
                self._undo(change)
            step *= 0.5
        return 0.0

    def move_sweep(self) -> List[float]:
        displacements = [self.move_vertex_step(v) for v in self.mesh.vertex_ids()]
        self._finish_sweep("node movement sweep")
        return displacements

    def smoothing_loop(self) -> Tuple[int, List[float]]:
        """Swap pass followed by a node-movement sweep, repeated."""
        swaps = 0
        displacements: List[float] = []
        for _ in range(self.config.sub_loop_repetitions):
            swaps += self.swap_pass()
            displacements.extend(self.move_sweep())
        return swaps, displacements

    # ------------------------------------------------------------------
    # Adaptation step
    # ------------------------------------------------------------------

    def target(self) -> float:
        """TOL^2 / N_T on the current mesh."""
        return self.config.tol ** 2 / self.mesh.num_triangles

    def step(self) -> StepReport:
        """Run refinement, smoothing, removal, smoothing once."""
        mesh = self.mesh
        report = StepReport(edges=mesh.num_edges, vertices=mesh.num_vertices)
        target = self.target()

        report.refinements = self.refine_sweep(target)
        swaps, moves = self.smoothing_loop()
        report.swaps_after_refinement = swaps
        report.displacements.extend(moves)

        report.derefinements = self.remove_sweep(target, report.removed_positions)
        swaps, moves = self.smoothing_loop()
        report.swaps_after_derefinement = swaps
        report.displacements.extend(moves)

        logger.info(
            f"Adaptation step: {report.refinements} refinements, {report.derefinements} removals, "
            f"{report.swaps_after_refinement}+{report.swaps_after_derefinement} swaps, "
            f"max move {report.move_max:.3e}"
        )
        return report

    def run(self) -> StepReport:
        """Run the configured number of adaptation steps before the next solve."""
        total = StepReport(edges=self.mesh.num_edges, vertices=self.mesh.num_vertices)
        for _ in range(self.config.adapt_repetitions):
            total.merge(self.step())
        return total
