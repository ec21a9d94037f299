"""
Per-element error quantities.

- Geometry of the affine map from the reference equilateral triangle (2x2 SVD)
- Residual and normal-flux jump terms, G_K, omega_K and the anisotropic
  estimator eta_K with its lambda_2-scaled L2 variant
- Hierarchical quadratic reconstruction and its per-element error norms
- Effectivity indices and equidistribution statistics

Batch functions work on compact meshes. `LocalEstimator` evaluates a single
element of a mesh under modification from the fields attached to it.
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import MeshError
from .fem import (
    DEGREE2,
    DEGREE4,
    ExactErrors,
    ProblemSpec,
    ScalarField,
    element_areas,
    integrate_element,
    integrate_elements,
    shape_gradients,
)
from .mesh import Mesh, edge_key

logger = logging.getLogger(__name__)

SQRT3 = math.sqrt(3.0)
REFERENCE_AREA = 3.0 * SQRT3 / 4.0

# Barycentric index pairs of the hierarchical edge functions
EDGE_PAIRS = ((0, 1), (0, 2), (1, 2))


# ----------------------------------------------------------------------
# Element geometry
# ----------------------------------------------------------------------

@dataclass
class ElementGeometry:
    """Singular values and left singular directions of the reference map."""
    lambda1: float
    lambda2: float
    r1: Tuple[float, float]
    r2: Tuple[float, float]
    h: float
    area: float


def _svd_from_jacobian(a, b, c, d):
    # Closed-form SVD of [[a, b], [c, d]] by two plane rotations
    E, F = (a + d) / 2, (a - d) / 2
    G, H = (c + b) / 2, (c - b) / 2
    Q, R = np.hypot(E, H), np.hypot(F, G)
    phi = (np.arctan2(H, E) + np.arctan2(G, F)) / 2
    return Q + R, Q - R, phi


def _jacobian(p0, p1, p2):
    P11, P12 = p1[..., 0] - p0[..., 0], p2[..., 0] - p0[..., 0]
    P21, P22 = p1[..., 1] - p0[..., 1], p2[..., 1] - p0[..., 1]
    return ((P12 - P11) / SQRT3, -(P11 + P12) / 3,
            (P22 - P21) / SQRT3, -(P21 + P22) / 3)


def element_svd(triangle: Sequence[Sequence[float]]) -> ElementGeometry:
    """
    SVD of the affine map from the reference equilateral triangle to K.

    Args:
        triangle: Three vertex coordinates, counterclockwise

    Returns:
        ElementGeometry with lambda1 >= lambda2 > 0

    Raises:
        MeshError: The triangle is degenerate or clockwise
    """
    p = np.asarray(triangle, dtype=float)
    area = 0.5 * ((p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1])
                  - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0]))
    if not area > 0:
        raise MeshError("element_svd needs a counterclockwise triangle of positive area")
    s1, s2, phi = _svd_from_jacobian(*_jacobian(p[0], p[1], p[2]))
    c, s = math.cos(phi), math.sin(phi)
    h = max(math.dist(p[0], p[1]), math.dist(p[1], p[2]), math.dist(p[2], p[0]))
    return ElementGeometry(float(s1), float(s2), (c, s), (-s, c), h, area)


def element_svd_batch(coords: np.ndarray) -> Dict[str, np.ndarray]:
    """Vectorised `element_svd` over coordinates of shape (NT, 3, 2)."""
    p0, p1, p2 = coords[:, 0], coords[:, 1], coords[:, 2]
    s1, s2, phi = _svd_from_jacobian(*_jacobian(p0, p1, p2))
    c, s = np.cos(phi), np.sin(phi)
    h = np.max(np.stack([np.linalg.norm(p1 - p0, axis=1),
                         np.linalg.norm(p2 - p1, axis=1),
                         np.linalg.norm(p0 - p2, axis=1)]), axis=0)
    return {
        "lambda1": s1,
        "lambda2": s2,
        "r1": np.column_stack([c, s]),
        "r2": np.column_stack([-s, c]),
        "h": h,
        "area": element_areas(coords),
    }


def omega(lambda1, lambda2, r1, r2, G):
    """(lambda1^2 r1'G r1 + lambda2^2 r2'G r2)^(1/2), batched over the leading axis."""
    q1 = np.einsum("...i,...ij,...j->...", r1, G, r1)
    q2 = np.einsum("...i,...ij,...j->...", r2, G, r2)
    return np.sqrt(np.maximum(lambda1 ** 2 * q1 + lambda2 ** 2 * q2, 0.0))


def g_matrix(area: np.ndarray, diffs: np.ndarray) -> np.ndarray:
    """
    Exact integral over K of d d^T for a linear vector field d.

    Args:
        area: Element areas, shape (NT,)
        diffs: Values of d at the three vertices, shape (NT, 3, 2)
    """
    S = diffs.sum(axis=1)
    outer = np.einsum("tvi,tvj->tij", diffs, diffs) + np.einsum("ti,tj->tij", S, S)
    return outer * (area / 12.0)[:, None, None]


# ----------------------------------------------------------------------
# Batch estimates
# ----------------------------------------------------------------------

@dataclass
class ElementEstimates:
    """Per-element estimator data on a compact mesh."""
    area: np.ndarray
    lambda1: np.ndarray
    lambda2: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    h: np.ndarray
    resid: np.ndarray
    jump: np.ndarray
    G: np.ndarray
    omega: np.ndarray
    eta: np.ndarray
    eta_scaled: np.ndarray
    levels: np.ndarray
    generation: int

    @property
    def global_eta(self) -> float:
        return float(np.sqrt(np.sum(self.eta ** 2)))

    @property
    def global_eta_scaled(self) -> float:
        return float(np.sqrt(np.sum(self.eta_scaled ** 2)))

    def level_usage(self) -> Dict[str, float]:
        """Percentage of elements whose residual quadrature used 2 and 3 subdivisions."""
        n = max(len(self.levels), 1)
        return {
            "level2_pct": 100.0 * float(np.sum(self.levels == 2)) / n,
            "level3_pct": 100.0 * float(np.sum(self.levels == 3)) / n,
        }


def triangle_neighbours(mesh: Mesh) -> np.ndarray:
    """Neighbour across local edge (v_i, v_i+1) of every triangle, -1 on the boundary."""
    mesh.require_compact()
    tris = mesh.tri_array()
    result = np.full(tris.shape, -1, dtype=np.int64)
    for t, tri in enumerate(tris.tolist()):
        for i in range(3):
            for other in mesh.edges[edge_key(tri[i], tri[(i + 1) % 3])]:
                if other != t:
                    result[t, i] = other
    return result


def jump_norms(coords: np.ndarray, grads: np.ndarray, neighbours: np.ndarray,
               diffusion: np.ndarray) -> np.ndarray:
    """L2(dK) norm of the normal-flux jumps, zero on boundary edges."""
    flux = grads @ diffusion.T
    total = np.zeros(len(coords))
    for i in range(3):
        a, b = coords[:, i], coords[:, (i + 1) % 3]
        dx, dy = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
        length = np.hypot(dx, dy)
        normal = np.column_stack([dy, -dx]) / length[:, None]
        nb = neighbours[:, i]
        inside = nb >= 0
        jump = np.zeros(len(coords))
        diff = flux[inside] - flux[nb[inside]]
        jump[inside] = np.einsum("td,td->t", diff, normal[inside])
        total += jump ** 2 * length
    return np.sqrt(total)


def element_residual_terms(
    mesh: Mesh,
    u: ScalarField,
    problem: ProblemSpec,
    epsilon: float = 0.05,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Residual and jump norms of every element.

    For P1 u_h and constant A the element residual is f, integrated with the
    subdivided quadrature.

    Returns:
        Tuple of (residual norms, jump norms, quadrature levels)
    """
    values = u.check(mesh)
    tris = mesh.tri_array()
    coords = mesh.coords()[tris]
    grads, _ = shape_gradients(coords)
    grad_h = np.einsum("ti,tid->td", values[tris], grads)

    def f_squared(x, y):
        return problem.source(x, y) ** 2

    resid_sq, levels = integrate_elements(f_squared, coords, epsilon)
    jump = jump_norms(coords, grad_h, triangle_neighbours(mesh), problem.diffusion)
    return np.sqrt(resid_sq), jump, levels


def compute_estimates(
    mesh: Mesh,
    u: ScalarField,
    recovered: np.ndarray,
    problem: ProblemSpec,
    epsilon: float = 0.05,
) -> ElementEstimates:
    """
    Anisotropic residual estimator on every element.

    Args:
        mesh: Compact mesh
        u: Discrete solution on the current mesh generation
        recovered: Recovered gradient at the vertices, shape (NV, 2)
        problem: Problem data
        epsilon: Subdivided quadrature threshold

    Returns:
        ElementEstimates stamped with the mesh generation
    """
    values = u.check(mesh)
    tris = mesh.tri_array()
    coords = mesh.coords()[tris]
    geom = element_svd_batch(coords)
    grads, _ = shape_gradients(coords)
    grad_h = np.einsum("ti,tid->td", values[tris], grads)

    diffs = grad_h[:, None, :] - np.asarray(recovered)[tris]
    G = g_matrix(geom["area"], diffs)
    om = omega(geom["lambda1"], geom["lambda2"], geom["r1"], geom["r2"], G)

    resid, jump, levels = element_residual_terms(mesh, u, problem, epsilon)
    weight = np.sqrt(geom["h"] / (geom["lambda1"] * geom["lambda2"]))
    eta = np.sqrt((resid + weight * jump) * om)
    return ElementEstimates(
        area=geom["area"],
        lambda1=geom["lambda1"],
        lambda2=geom["lambda2"],
        r1=geom["r1"],
        r2=geom["r2"],
        h=geom["h"],
        resid=resid,
        jump=jump,
        G=G,
        omega=om,
        eta=eta,
        eta_scaled=geom["lambda2"] * eta,
        levels=levels,
        generation=mesh.generation,
    )


# ----------------------------------------------------------------------
# Hierarchical reconstruction
# ----------------------------------------------------------------------

@dataclass
class HierarchicalField:
    """Mid-edge coefficients of the hierarchical quadratic and the error norms."""
    edges: np.ndarray
    edge_coefficients: np.ndarray
    element_coefficients: np.ndarray
    l2: np.ndarray
    h1: np.ndarray


def _edge_basis_hessians(grads: np.ndarray) -> np.ndarray:
    """Hessian (H11, H12, H22) of 4 lambda_a lambda_b for each edge pair, (NT, 3, 3)."""
    out = np.empty((grads.shape[0], 3, 3))
    for k, (a, b) in enumerate(EDGE_PAIRS):
        ga, gb = grads[:, a], grads[:, b]
        out[:, 0, k] = 8 * ga[:, 0] * gb[:, 0]
        out[:, 1, k] = 4 * (ga[:, 0] * gb[:, 1] + ga[:, 1] * gb[:, 0])
        out[:, 2, k] = 8 * ga[:, 1] * gb[:, 1]
    return out


def local_edge_coefficients(grads: np.ndarray, rec_nodal: np.ndarray) -> np.ndarray:
    """
    Element-local mid-edge coefficients matching the Hessian of the
    quadratic to the derivatives of the recovered gradient.

    Args:
        grads: Barycentric gradients, shape (NT, 3, 2)
        rec_nodal: Recovered gradient at the element vertices, shape (NT, 3, 2)

    Returns:
        Coefficients for the edge pairs (0,1), (0,2), (1,2), shape (NT, 3)
    """
    d_rec = np.einsum("tvc,tvd->tcd", rec_nodal, grads)
    target = np.column_stack([d_rec[:, 0, 0],
                              0.5 * (d_rec[:, 0, 1] + d_rec[:, 1, 0]),
                              d_rec[:, 1, 1]])
    system = _edge_basis_hessians(grads)
    det = np.linalg.det(system)
    scale = np.max(np.abs(system), axis=(1, 2)) ** 3
    ok = np.abs(det) > 1e-12 * np.maximum(scale, 1e-300)
    coeffs = np.zeros((len(grads), 3))
    if ok.any():
        coeffs[ok] = np.linalg.solve(system[ok], target[ok][..., None])[..., 0]
    if not ok.all():
        logger.warning(f"Singular hierarchical system on {int((~ok).sum())} elements; coefficients set to 0")
    return coeffs


def hierarchical_norms(grads: np.ndarray, areas: np.ndarray,
                       coeffs: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """L2 norm and H1 seminorm of 4 sum e_ab lambda_a lambda_b on each element."""
    lam4 = DEGREE4.points
    w_vals = np.zeros((len(areas), DEGREE4.size))
    for k, (a, b) in enumerate(EDGE_PAIRS):
        w_vals += 4 * coeffs[:, k:k + 1] * (lam4[:, a] * lam4[:, b])[None, :]
    l2 = np.sqrt(areas * ((w_vals ** 2) @ DEGREE4.weights))

    lam2 = DEGREE2.points
    grad_w = np.zeros((len(areas), DEGREE2.size, 2))
    for k, (a, b) in enumerate(EDGE_PAIRS):
        term = (lam2[None, :, a, None] * grads[:, None, b, :]
                + lam2[None, :, b, None] * grads[:, None, a, :])
        grad_w += 4 * coeffs[:, k, None, None] * term
    h1 = np.sqrt(areas * (np.sum(grad_w ** 2, axis=2) @ DEGREE2.weights))
    return l2, h1


def hierarchical_reconstruct(mesh: Mesh, u: ScalarField,
                             recovered: np.ndarray) -> HierarchicalField:
    """
    Hierarchical quadratic reconstruction of a P1 solution.

    Mid-edge coefficients solved per element are averaged over the elements
    sharing the edge.
    """
    u.check(mesh)
    tris = mesh.tri_array()
    coords = mesh.coords()[tris]
    grads, areas = shape_gradients(coords)
    local = local_edge_coefficients(grads, np.asarray(recovered)[tris])

    keys = np.sort(np.stack([tris[:, [a, b]] for a, b in EDGE_PAIRS], axis=1), axis=2)
    edges, inverse = np.unique(keys.reshape(-1, 2), axis=0, return_inverse=True)
    inverse = inverse.ravel()
    sums = np.bincount(inverse, weights=local.ravel(), minlength=len(edges))
    counts = np.bincount(inverse, minlength=len(edges))
    edge_coeffs = sums / counts
    averaged = edge_coeffs[inverse].reshape(local.shape)

    l2, h1 = hierarchical_norms(grads, areas, averaged)
    return HierarchicalField(edges, edge_coeffs, averaged, l2, h1)


def l2_h1_ratio(mesh: Mesh, hierarchical: HierarchicalField) -> np.ndarray:
    """
    Per-element ratio ||w||_0,K / (lambda2 |w|_1,K) of the hierarchical error.

    Elements with a vanishing seminorm are reported as NaN.
    """
    lam2 = element_svd_batch(mesh.coords()[mesh.tri_array()])["lambda2"]
    denom = lam2 * hierarchical.h1
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(denom > 0, hierarchical.l2 / denom, np.nan)


# ----------------------------------------------------------------------
# Effectivity and equidistribution
# ----------------------------------------------------------------------

def global_effectivity(estimates: ElementEstimates, errors: ExactErrors) -> float:
    """ei = eta / |||e_h|||."""
    if errors.energy == 0:
        return float("nan")
    return estimates.global_eta / errors.energy


def local_effectivity(estimate: np.ndarray, exact: np.ndarray) -> np.ndarray:
    """Element ratios estimate/exact, excluding elements with zero exact error."""
    estimate, exact = np.asarray(estimate), np.asarray(exact)
    keep = exact > 0
    return estimate[keep] / exact[keep]


def effectivity_fraction(ratios: np.ndarray, low: float = 0.1, high: float = 10.0) -> float:
    """Share of local effectivity indices inside [low, high]."""
    if len(ratios) == 0:
        return float("nan")
    return float(np.mean((ratios >= low) & (ratios <= high)))


def log_error_distribution(eta: np.ndarray, tol: float) -> np.ndarray:
    """e_K = log10(eta_K / (TOL / sqrt(N_T)))."""
    eta = np.asarray(eta)
    target = tol / math.sqrt(len(eta))
    positive = eta > 0
    return np.log10(eta[positive] / target)


def log_error_std(eta: np.ndarray, tol: float) -> float:
    """Standard deviation of the normalised log-error distribution."""
    return float(np.std(log_error_distribution(eta, tol)))


def log_spread(values: np.ndarray, low: float = 1.0, high: float = 99.0) -> float:
    """Orders of magnitude between the given percentiles of positive values."""
    values = np.asarray(values)
    logs = np.log10(values[values > 0])
    return float(np.percentile(logs, high) - np.percentile(logs, low))


def estimates_frame(estimates: ElementEstimates,
                    errors: Optional[ExactErrors] = None) -> pd.DataFrame:
    """Per-element estimate table."""
    nt = len(estimates.eta)
    return pd.DataFrame({
        "K": np.arange(nt),
        "area": estimates.area,
        "lambda1": estimates.lambda1,
        "lambda2": estimates.lambda2,
        "resid": estimates.resid,
        "jump": estimates.jump,
        "omega": estimates.omega,
        "eta": estimates.eta,
        "eta_scaled": estimates.eta_scaled,
        "exact_h1": errors.element_h1 if errors is not None else np.full(nt, np.nan),
        "exact_l2": errors.element_l2 if errors is not None else np.full(nt, np.nan),
    })


def write_estimates_csv(path: str, estimates: ElementEstimates,
                        errors: Optional[ExactErrors] = None) -> None:
    estimates_frame(estimates, errors).to_csv(path, index=False, float_format="%.10e")


# ----------------------------------------------------------------------
# Local evaluation on a mesh under modification
# ----------------------------------------------------------------------

@dataclass
class ElementValues:
    """Squared error quantities of one element."""
    eta_sq: float = 0.0
    eta_scaled_sq: float = 0.0
    hier_l2_sq: float = 0.0
    hier_h1_sq: float = 0.0
    level: int = 0


def _p1_gradient(p0, p1, p2, v0, v1, v2) -> Tuple[float, float]:
    det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p1[1] - p0[1]) * (p2[0] - p0[0])
    gx = (v0 * (p1[1] - p2[1]) + v1 * (p2[1] - p0[1]) + v2 * (p0[1] - p1[1])) / det
    gy = (v0 * (p2[0] - p1[0]) + v1 * (p0[0] - p2[0]) + v2 * (p1[0] - p0[0])) / det
    return gx, gy


class LocalEstimator:
    """
    Evaluate the error quantities of single elements from the P1 fields
    attached to a mesh ("u" for the solution, "px"/"py" for the recovered
    gradient).

    The residual integral depends only on the element geometry and is cached
    by vertex coordinates; trim_cache drops the entries of elements that left
    the mesh.
    """

    REQUIRED_FIELDS = ("u", "px", "py")

    def __init__(self, problem: ProblemSpec, mode: str = "residual-h1", epsilon: float = 0.05):
        if mode not in ("residual-h1", "residual-l2-hybrid", "hierarchical-hybrid"):
            raise ValueError(f"Unknown estimator mode: {mode}")
        self.problem = problem
        self.mode = mode
        self.epsilon = epsilon
        self._A = problem.diffusion
        self._resid_cache: Dict[tuple, Tuple[float, int]] = {}

    def _f_squared(self, x, y):
        return self.problem.source(x, y) ** 2

    def _residual(self, coords: tuple) -> Tuple[float, int]:
        hit = self._resid_cache.get(coords)
        if hit is None:
            value, level = integrate_element(self._f_squared, np.array(coords), self.epsilon)
            hit = (math.sqrt(value), level)
            self._resid_cache[coords] = hit
        return hit

    def prefetch(self, mesh: Mesh, tids) -> None:
        """Compute the residual integrals of uncached elements in one batch."""
        if self.mode == "hierarchical-hybrid":
            return
        missing = []
        for tid in tids:
            key = tuple(mesh.points[v] for v in mesh.triangles[tid])
            if key not in self._resid_cache:
                missing.append(key)
        if not missing:
            return
        values, levels = integrate_elements(self._f_squared, np.array(missing), self.epsilon)
        for key, value, level in zip(missing, values.tolist(), levels.tolist()):
            self._resid_cache[key] = (math.sqrt(value), int(level))

    @property
    def cache_size(self) -> int:
        return len(self._resid_cache)

    def trim_cache(self, mesh: Mesh) -> int:
        """Drop the residual integrals of elements no longer in the mesh; returns how many."""
        live = {tuple(mesh.points[v] for v in tri) for tri in mesh.triangles.values()}
        stale = [key for key in self._resid_cache if key not in live]
        for key in stale:
            del self._resid_cache[key]
        return len(stale)

    def _gradient(self, mesh: Mesh, tid: int, name: str) -> Tuple[float, float]:
        a, b, c = mesh.triangles[tid]
        pts, vals = mesh.points, mesh.fields[name]
        return _p1_gradient(pts[a], pts[b], pts[c], vals[a], vals[b], vals[c])

    def _neighbour(self, mesh: Mesh, tid: int, a: int, b: int) -> Optional[int]:
        for other in mesh.edges[edge_key(a, b)]:
            if other != tid:
                return other
        return None

    def _local_coefficients(self, mesh: Mesh, tid: int) -> Dict[tuple, float]:
        tri = mesh.triangles[tid]
        coords = np.array([mesh.points[v] for v in tri]).reshape(1, 3, 2)
        grads, _ = shape_gradients(coords)
        px, py = mesh.fields["px"], mesh.fields["py"]
        rec = np.array([[[px[v], py[v]] for v in tri]])
        coeffs = local_edge_coefficients(grads, rec)[0]
        return {edge_key(tri[a], tri[b]): float(coeffs[k]) for k, (a, b) in enumerate(EDGE_PAIRS)}

    def _hierarchical(self, mesh: Mesh, tid: int) -> Tuple[float, float]:
        tri = mesh.triangles[tid]
        own = self._local_coefficients(mesh, tid)
        averaged = []
        for a, b in EDGE_PAIRS:
            key = edge_key(tri[a], tri[b])
            nb = self._neighbour(mesh, tid, tri[a], tri[b])
            if nb is None:
                averaged.append(own[key])
            else:
                averaged.append(0.5 * (own[key] + self._local_coefficients(mesh, nb)[key]))
        coords = np.array([mesh.points[v] for v in tri]).reshape(1, 3, 2)
        grads, areas = shape_gradients(coords)
        l2, h1 = hierarchical_norms(grads, areas, np.array([averaged]))
        return float(l2[0]) ** 2, float(h1[0]) ** 2

    def element(self, mesh: Mesh, tid: int) -> ElementValues:
        if self.mode == "hierarchical-hybrid":
            l2_sq, h1_sq = self._hierarchical(mesh, tid)
            return ElementValues(hier_l2_sq=l2_sq, hier_h1_sq=h1_sq)

        tri = mesh.triangles[tid]
        p = [mesh.points[v] for v in tri]
        u = mesh.fields["u"]
        px, py = mesh.fields["px"], mesh.fields["py"]
        gx, gy = _p1_gradient(p[0], p[1], p[2], u[tri[0]], u[tri[1]], u[tri[2]])
        A = self._A

        # jump term
        fx, fy = A[0, 0] * gx + A[0, 1] * gy, A[1, 0] * gx + A[1, 1] * gy
        jump_sq = 0.0
        for i in range(3):
            a, b = tri[i], tri[(i + 1) % 3]
            nb = self._neighbour(mesh, tid, a, b)
            if nb is None:
                continue
            hx, hy = self._gradient(mesh, nb, "u")
            dx, dy = p[(i + 1) % 3][0] - p[i][0], p[(i + 1) % 3][1] - p[i][1]
            length = math.hypot(dx, dy)
            jump = ((fx - (A[0, 0] * hx + A[0, 1] * hy)) * dy
                    - (fy - (A[1, 0] * hx + A[1, 1] * hy)) * dx) / length
            jump_sq += jump * jump * length

        # G_K and omega_K
        geom = element_svd(p)
        d = [(gx - px[v], gy - py[v]) for v in tri]
        sx, sy = d[0][0] + d[1][0] + d[2][0], d[0][1] + d[1][1] + d[2][1]
        g11 = (sum(x * x for x, _ in d) + sx * sx) * geom.area / 12
        g12 = (sum(x * y for x, y in d) + sx * sy) * geom.area / 12
        g22 = (sum(y * y for _, y in d) + sy * sy) * geom.area / 12
        (c1, s1), (c2, s2) = geom.r1, geom.r2
        q1 = c1 * c1 * g11 + 2 * c1 * s1 * g12 + s1 * s1 * g22
        q2 = c2 * c2 * g11 + 2 * c2 * s2 * g12 + s2 * s2 * g22
        om = math.sqrt(max(geom.lambda1 ** 2 * q1 + geom.lambda2 ** 2 * q2, 0.0))

        resid, level = self._residual(tuple(p))
        weight = math.sqrt(geom.h / (geom.lambda1 * geom.lambda2))
        eta_sq = (resid + weight * math.sqrt(jump_sq)) * om
        return ElementValues(eta_sq=eta_sq, eta_scaled_sq=geom.lambda2 ** 2 * eta_sq, level=level)

    def quantities(self, mesh: Mesh, tid: int) -> Tuple[float, float]:
        """
        (refinement quantity, smoothing quantity) of an element.

        Refinement and node removal equidistribute the first against
        TOL^2/N_T; swaps and node moves minimise the second.
        """
        values = self.element(mesh, tid)
        if self.mode == "residual-h1":
            return values.eta_sq, values.eta_sq
        if self.mode == "residual-l2-hybrid":
            return values.eta_scaled_sq, values.eta_sq
        return values.hier_l2_sq, values.hier_h1_sq
