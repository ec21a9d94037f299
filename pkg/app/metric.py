"""
Riemannian metric fields and metric-driven local remeshing.

Metrics are stored per vertex as (m11, m12, m22). While the mesh is being
modified the metric travels with it as three attached fields holding the
matrix logarithm, so new vertices receive a P1 interpolation of the
log-metric.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import eigh

from .config import settings
from .estimators import ElementEstimates, element_svd_batch
from .mesh import Mesh, edge_key
from .models import MetricConfig

logger = logging.getLogger(__name__)

LOG_FIELDS = ("lm11", "lm12", "lm22")
# Minimum-angle gain a metric swap must achieve
ANGLE_MARGIN = 1e-9


# ----------------------------------------------------------------------
# 2x2 symmetric matrix helpers
# ----------------------------------------------------------------------

def from_matrix(M: np.ndarray) -> np.ndarray:
    return np.array([M[0, 0], 0.5 * (M[0, 1] + M[1, 0]), M[1, 1]])


def sym_eig(m11: float, m12: float, m22: float) -> Tuple[float, float, float, float]:
    """Eigenvalues (largest first) and the unit eigenvector (c, s) of the first one."""
    mean = 0.5 * (m11 + m22)
    radius = math.hypot(0.5 * (m11 - m22), m12)
    theta = 0.5 * math.atan2(2.0 * m12, m11 - m22)
    return mean + radius, mean - radius, math.cos(theta), math.sin(theta)


def sym_apply(m: Sequence[float], fn) -> Tuple[float, float, float]:
    """Apply a scalar function to the eigenvalues of a symmetric 2x2 matrix."""
    l1, l2, c, s = sym_eig(m[0], m[1], m[2])
    f1, f2 = fn(l1), fn(l2)
    return (f1 * c * c + f2 * s * s, (f1 - f2) * c * s, f1 * s * s + f2 * c * c)


def clamp_metric(m: Sequence[float], min_eig: float = 1e-6,
                 max_eig: float = 1e12) -> Tuple[float, float, float]:
    return sym_apply(m, lambda x: min(max(x, min_eig), max_eig))


def metric_log(m: Sequence[float]) -> Tuple[float, float, float]:
    return sym_apply(m, math.log)


def metric_exp(m: Sequence[float]) -> Tuple[float, float, float]:
    return sym_apply(m, math.exp)


@dataclass
class MetricField:
    """Per-vertex SPD tensors (m11, m12, m22)."""
    values: np.ndarray
    generation: int


# ----------------------------------------------------------------------
# Lengths and metric algebra
# ----------------------------------------------------------------------

def metric_edge_length(m_p: Sequence[float], m_q: Sequence[float],
                       p: Sequence[float], q: Sequence[float],
                       min_eig: float = 1e-6, max_eig: float = 1e12) -> float:
    """
    Riemannian length of segment PQ by the trapezoid rule on the end-point metrics.

    Non-SPD end-point tensors are clamped.
    """
    ex, ey = q[0] - p[0], q[1] - p[1]
    total = 0.0
    for m in (m_p, m_q):
        l1, l2, _, _ = sym_eig(*m)
        if l2 < min_eig or l1 > max_eig:
            logger.debug("Clamping non-SPD metric in edge length")
            m = clamp_metric(m, min_eig, max_eig)
        total += math.sqrt(max(m[0] * ex * ex + 2 * m[1] * ex * ey + m[2] * ey * ey, 0.0))
    return 0.5 * total


def metric_intersect(Ma: np.ndarray, Mb: np.ndarray) -> np.ndarray:
    """
    Intersection by simultaneous reduction: the largest ellipse inside both unit balls.
    """
    Ma, Mb = np.asarray(Ma, dtype=float), np.asarray(Mb, dtype=float)
    lam, V = eigh(Mb, Ma)
    Vinv = np.linalg.inv(V)
    M = Vinv.T @ np.diag(np.maximum(lam, 1.0)) @ Vinv
    return 0.5 * (M + M.T)


def metric_average(matrices: Sequence[np.ndarray]) -> np.ndarray:
    return np.mean(np.asarray(matrices, dtype=float), axis=0)


def combine_metrics(matrices: Sequence[np.ndarray], mode: str = "intersect") -> np.ndarray:
    if mode == "average":
        return metric_average(matrices)
    if mode != "intersect":
        raise ValueError(f"Unknown metric combination: {mode}")
    result = np.asarray(matrices[0], dtype=float)
    for M in matrices[1:]:
        result = metric_intersect(result, M)
    return result


# ----------------------------------------------------------------------
# Metric construction
# ----------------------------------------------------------------------

def positive_root(a: float, b: float, tau: float) -> float:
    """Positive root of a t^2 + b t - tau^2 = 0 (a, b >= 0, not both zero)."""
    return 2.0 * tau * tau / (b + math.sqrt(b * b + 4.0 * a * tau * tau))


def element_metric(
    G: np.ndarray,
    area: float,
    lambda1: float,
    lambda2: float,
    h: float,
    resid: float,
    jump: float,
    tau: float,
    drop_residual_term: bool = False,
) -> np.ndarray:
    """
    Optimal element metric from the error density G/|K|.

    The optimal element keeps the area of K, is stretched by sqrt(a1/a2)
    with its long axis along the second eigenvector of G and is scaled by the
    t solving eta(t) = tau under the model residual ~ t, jump ~ 1, omega ~ t.
    """
    fallback = np.eye(2) / (lambda1 * lambda2)
    if tau <= 0:
        return fallback
    alpha, vecs = np.linalg.eigh(np.asarray(G, dtype=float) / area)
    a2, a1 = alpha
    p2, p1 = vecs[:, 0], vecs[:, 1]
    if a2 <= 1e-14 * max(a1, 1e-300):
        return fallback
    s = math.sqrt(a1 / a2)
    base1 = math.sqrt(lambda1 * lambda2 * s)
    base2 = math.sqrt(lambda1 * lambda2 / s)
    omega_base = math.sqrt(base1 ** 2 * a2 * area + base2 ** 2 * a1 * area)
    c1 = 0.0 if drop_residual_term else resid
    c2 = math.sqrt(h / (lambda1 * lambda2)) * jump
    a, b = c1 * omega_base, c2 * omega_base
    if a <= 0 and b <= 0:
        return fallback
    t = positive_root(a, b, tau)
    l1, l2 = t * base1, t * base2
    return np.outer(p2, p2) / l1 ** 2 + np.outer(p1, p1) / l2 ** 2


def residual_metric(mesh: Mesh, estimates: ElementEstimates, tau: float,
                    config: Optional[MetricConfig] = None) -> MetricField:
    """
    Vertex metric from the per-element optimal shapes, combined over each vertex
    patch by intersection (or averaging).

    Args:
        mesh: Compact mesh the estimates were computed on
        estimates: Element estimates
        tau: Local tolerance, usually TOL / sqrt(N_T)
        config: Combination mode, residual-term switch and eigenvalue clamps
    """
    config = config or MetricConfig()
    nt = len(estimates.eta)
    elem = [
        element_metric(estimates.G[k], estimates.area[k], estimates.lambda1[k],
                       estimates.lambda2[k], estimates.h[k], estimates.resid[k],
                       estimates.jump[k], tau, config.drop_residual_term)
        for k in range(nt)
    ]
    tris = mesh.tri_array()
    values = np.zeros((len(mesh.points), 3))
    incident: List[List[int]] = [[] for _ in mesh.points]
    for k, tri in enumerate(tris.tolist()):
        for v in tri:
            incident[v].append(k)
    for v, ks in enumerate(incident):
        M = combine_metrics([elem[k] for k in ks], config.intersection)
        values[v] = clamp_metric(from_matrix(M), config.min_eig, config.max_eig)
    return MetricField(values, mesh.generation)


def hessian_metric(hessian: np.ndarray, e_d: float, min_eig: float = 1e-6,
                   max_eig: float = 1e12, generation: int = 0) -> MetricField:
    """M = |H| / (8 e_D) per vertex, eigenvalues clamped."""
    if e_d <= 0:
        raise ValueError("e_D must be positive")
    hessian = np.asarray(hessian, dtype=float).reshape(-1, 3)
    values = np.empty_like(hessian)
    for i, m in enumerate(hessian):
        values[i] = sym_apply(m, lambda x: min(max(abs(x) / (8.0 * e_d), min_eig), max_eig))
    return MetricField(values, generation)


def interpolation_error_estimate(H_i: Sequence[float], H_j: Sequence[float],
                                 p: Sequence[float], q: Sequence[float]) -> float:
    """End-point estimate of the P1 interpolation error on edge PQ."""
    ex, ey = q[0] - p[0], q[1] - p[1]
    total = 0.0
    for H in (H_i, H_j):
        a = sym_apply(H, abs)
        total += a[0] * ex * ex + 2 * a[1] * ex * ey + a[2] * ey * ey
    return total / 16.0


def attach_metric(mesh: Mesh, metric: MetricField) -> None:
    """Attach the log-metric fields used during remeshing."""
    logs = np.array([metric_log(m) for m in metric.values]).reshape(-1, 3)
    for k, name in enumerate(LOG_FIELDS):
        mesh.attach_field(name, logs[:, k])


def mesh_metric(mesh: Mesh) -> np.ndarray:
    """Per-vertex metric values recovered from the attached log-metric."""
    logs = np.column_stack([mesh.fields[name] for name in LOG_FIELDS])
    return np.array([metric_exp(m) for m in logs]).reshape(-1, 3)


# ----------------------------------------------------------------------
# Unit-mesh remeshing
# ----------------------------------------------------------------------

@dataclass
class MetricReport:
    edges: int = 0
    vertices: int = 0
    refinements: int = 0
    removals: int = 0
    swaps_after_refinement: int = 0
    swaps_after_removal: int = 0
    displacements: List[float] = field(default_factory=list)
    unit_fraction: float = 0.0

    @property
    def moves(self) -> int:
        return len(self.displacements)

    @property
    def move_max(self) -> float:
        return max(self.displacements, default=0.0)

    @property
    def move_mean(self) -> float:
        return sum(self.displacements) / len(self.displacements) if self.displacements else 0.0

    @property
    def swaps(self) -> int:
        return self.swaps_after_refinement + self.swaps_after_removal


class MetricAdapter:
    """
    Drive a mesh toward unit edge lengths in the attached metric.

    With debug_checks on, mesh validity and total area are asserted after
    every accepted operation.
    """

    def __init__(self, mesh: Mesh, config: Optional[MetricConfig] = None,
                 debug_checks: Optional[bool] = None):
        self.mesh = mesh
        self.config = config or MetricConfig()
        missing = [name for name in LOG_FIELDS if name not in mesh.fields]
        if missing:
            raise ValueError(f"Mesh has no attached metric fields: {missing}")
        self.debug_checks = settings.DEBUG_CHECKS if debug_checks is None else debug_checks
        self._reference_area = mesh.total_area() if self.debug_checks else None

    def _accepted(self) -> None:
        if self.debug_checks:
            self.mesh.assert_valid(self._reference_area)

    def vertex_metric(self, v: int) -> Tuple[float, float, float]:
        f = self.mesh.fields
        return metric_exp((f["lm11"][v], f["lm12"][v], f["lm22"][v]))

    def edge_length(self, edge: Tuple[int, int]) -> float:
        a, b = edge
        pts = self.mesh.points
        return metric_edge_length(self.vertex_metric(a), self.vertex_metric(b), pts[a], pts[b],
                                  self.config.min_eig, self.config.max_eig)

    def edge_lengths(self) -> np.ndarray:
        return np.array([self.edge_length(e) for e in self.mesh.edges])

    def unit_fraction(self) -> float:
        """Share of edges with metric length in [coarsen_length, refine_length]."""
        lengths = self.edge_lengths()
        ok = (lengths >= self.config.coarsen_length) & (lengths <= self.config.refine_length)
        return float(np.mean(ok))

    def min_metric_angle(self, tri: Tuple[int, int, int]) -> float:
        pts = self.mesh.points
        ms = [self.vertex_metric(v) for v in tri]
        m = [sum(x[k] for x in ms) / 3.0 for k in range(3)]

        def dot(u, w):
            return m[0] * u[0] * w[0] + m[1] * (u[0] * w[1] + u[1] * w[0]) + m[2] * u[1] * w[1]

        angles = []
        for i in range(3):
            o, a, b = pts[tri[i]], pts[tri[(i + 1) % 3]], pts[tri[(i + 2) % 3]]
            u, w = (a[0] - o[0], a[1] - o[1]), (b[0] - o[0], b[1] - o[1])
            cosine = dot(u, w) / math.sqrt(dot(u, u) * dot(w, w))
            angles.append(math.acos(max(-1.0, min(1.0, cosine))))
        return min(angles)

    def refine(self) -> int:
        """Split edges longer than the refinement length, longest first, until none remain."""
        count = 0
        for _ in range(self.config.max_sweeps):
            lengths = {e: self.edge_length(e) for e in self.mesh.edges}
            long_edges = sorted((e for e, L in lengths.items() if L > self.config.refine_length),
                                key=lambda e: (-lengths[e], e))
            done = 0
            for e in long_edges:
                if e in self.mesh.edges and self.mesh.split_edge(e) is not None:
                    self._accepted()
                    done += 1
            count += done
            if done == 0:
                break
        return count

    def try_swap(self, edge: Tuple[int, int]) -> bool:
        mesh = self.mesh
        tris = mesh.edges.get(edge)
        if tris is None or len(tris) != 2 or edge in mesh.boundary:
            return False
        before = min(self.min_metric_angle(mesh.triangles[t]) for t in tris)
        change = mesh.swap_edge(edge)
        if change is None:
            return False
        after = min(self.min_metric_angle(mesh.triangles[t]) for t in change.added)
        if after > before + ANGLE_MARGIN:
            self._accepted()
            return True
        mesh.undo(change)
        return False

    def swap(self, max_passes: int = 20) -> int:
        count = 0
        for _ in range(max_passes):
            done = sum(1 for e in list(self.mesh.edges) if self.try_swap(e))
            count += done
            if done == 0:
                break
        return count

    def coarsen(self) -> int:
        """Remove interior vertices whose incident edges are all short."""
        mesh = self.mesh
        count = 0
        for v in mesh.vertex_ids():
            if not mesh.alive[v] or mesh.is_boundary_vertex(v):
                continue
            nbrs = mesh.vertex_neighbours(v)
            if any(self.edge_length(edge_key(v, w)) >= self.config.coarsen_length for w in nbrs):
                continue
            change = mesh.remove_vertex(v)
            if change is None:
                continue
            new_edges = {e for t in change.added for e in mesh.triangle_edges(t)}
            if any(self.edge_length(e) > self.config.refine_length for e in new_edges):
                mesh.undo(change)
                continue
            self._accepted()
            count += 1
        return count

    def smooth(self, halvings: int = 5) -> List[float]:
        """
        One Gauss-Seidel spring sweep: interior vertices move toward the
        average of their neighbours weighted by metric edge length.
        """
        mesh = self.mesh
        moves: List[float] = []
        for v in mesh.vertex_ids():
            if mesh.is_boundary_vertex(v):
                continue
            nbrs = mesh.vertex_neighbours(v)
            weights = [self.edge_length(edge_key(v, w)) for w in nbrs]
            total = sum(weights)
            if total <= 0:
                continue
            p = mesh.points[v]
            tx = sum(wt * mesh.points[w][0] for wt, w in zip(weights, nbrs)) / total
            ty = sum(wt * mesh.points[w][1] for wt, w in zip(weights, nbrs)) / total
            dx, dy = tx - p[0], ty - p[1]
            if math.hypot(dx, dy) <= 1e-12 * max(math.sqrt(total), 1.0):
                continue
            step = 1.0
            for _ in range(halvings + 1):
                if mesh.move_vertex(v, (p[0] + step * dx, p[1] + step * dy)) is not None:
                    self._accepted()
                    moves.append(step * math.hypot(dx, dy))
                    break
                step *= 0.5
        return moves

    def iterate(self) -> MetricReport:
        """Refine, swap, coarsen, swap, smooth."""
        report = MetricReport(edges=self.mesh.num_edges, vertices=self.mesh.num_vertices)
        report.refinements = self.refine()
        report.swaps_after_refinement = self.swap()
        report.removals = self.coarsen()
        report.swaps_after_removal = self.swap()
        report.displacements = self.smooth()
        report.unit_fraction = self.unit_fraction()
        logger.info(
            f"Metric iteration: {report.refinements} splits, {report.removals} removals, "
            f"{report.swaps} swaps, {report.moves} moves, "
            f"{100 * report.unit_fraction:.1f}% unit edges"
        )
        return report


def metric_adapt_iteration(mesh: Mesh, metric: MetricField,
                           config: Optional[MetricConfig] = None) -> MetricReport:
    """Attach a vertex metric to a compact mesh and run one remeshing iteration."""
    attach_metric(mesh, metric)
    return MetricAdapter(mesh, config).iterate()


def aspect_ratios(mesh: Mesh) -> np.ndarray:
    """lambda1/lambda2 of every element."""
    geom = element_svd_batch(mesh.coords()[mesh.tri_array()])
    return geom["lambda1"] / geom["lambda2"]


def orientation_of_long_axis(mesh: Mesh) -> np.ndarray:
    """Angle in [0, pi) of the first singular direction of every element."""
    r1 = element_svd_batch(mesh.coords()[mesh.tri_array()])["r1"]
    return np.mod(np.arctan2(r1[:, 1], r1[:, 0]), math.pi)
