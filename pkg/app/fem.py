"""
P1 finite element discretization of -div(A grad u) = f with Dirichlet data,
plus the quadrature services used by the estimators.

Everything here works on compact meshes through the (NV, 2) coordinate and
(NT, 3) triangle arrays. Callables take numpy arrays x, y of equal shape and
return arrays of that shape (gradients return a pair).
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy.sparse import coo_matrix, csr_matrix
from scipy.sparse.linalg import LinearOperator, cg

from .config import settings
from .errors import SolverError, StaleFieldError
from .mesh import Mesh

logger = logging.getLogger(__name__)

Func = Callable[[np.ndarray, np.ndarray], np.ndarray]
GradFunc = Callable[[np.ndarray, np.ndarray], Tuple[np.ndarray, np.ndarray]]

MAX_SUBDIVISION = 3


@dataclass
class ProblemSpec:
    """Model problem -div(A grad u) = f on the mesh domain, u = g on the boundary."""
    source: Func
    dirichlet: Func
    diffusion: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        A = np.asarray(self.diffusion, dtype=float)
        if A.shape != (2, 2) or not np.allclose(A, A.T, rtol=0, atol=1e-14):
            raise ValueError("Diffusion matrix must be a symmetric 2x2 matrix")
        if np.linalg.eigvalsh(A).min() <= 0:
            raise ValueError("Diffusion matrix must be positive definite")
        self.diffusion = A


@dataclass
class ScalarField:
    """P1 nodal values tied to the mesh generation they were computed on."""
    values: np.ndarray
    generation: int
    iterations: int = 0

    def check(self, mesh: Mesh) -> np.ndarray:
        if self.generation != mesh.generation:
            raise StaleFieldError(
                f"Field from mesh generation {self.generation} used on generation {mesh.generation}"
            )
        if len(self.values) != len(mesh.points):
            raise StaleFieldError("Field length does not match the vertex count")
        return self.values


@dataclass
class QuadratureRule:
    """Barycentric points and weights (summing to 1) on a triangle."""
    points: np.ndarray
    weights: np.ndarray
    degree: int
    level: int = 0

    @property
    def size(self) -> int:
        return len(self.weights)

    def subdivide(self, levels: int = 1) -> "QuadratureRule":
        """Copy of the rule on each of the 4^levels congruent sub-triangles."""
        points, weights = self.points, self.weights
        for _ in range(levels):
            new_points, new_weights = [], []
            for child in _CHILDREN:
                new_points.append(points @ child)
                new_weights.append(weights / 4.0)
            points = np.vstack(new_points)
            weights = np.concatenate(new_weights)
        return QuadratureRule(points, weights, self.degree, self.level + levels)


def _bary(a: float, b: float) -> list:
    return [[a, a, b], [a, b, a], [b, a, a]]


# Children of the red subdivision in barycentric coordinates: rows are the
# child vertices expressed in the parent's barycentric coordinates.
_E0, _E1, _E2 = np.eye(3)
_M01, _M12, _M20 = (_E0 + _E1) / 2, (_E1 + _E2) / 2, (_E2 + _E0) / 2
_CHILDREN = [
    np.array([_E0, _M01, _M20]),
    np.array([_M01, _E1, _M12]),
    np.array([_M20, _M12, _E2]),
    np.array([_M12, _M20, _M01]),
]

BARYCENTER = QuadratureRule(np.array([[1 / 3, 1 / 3, 1 / 3]]), np.array([1.0]), degree=1)
DEGREE2 = QuadratureRule(
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
    degree=2,
)
DEGREE4 = QuadratureRule(
    np.array(_bary(0.445948490915965, 0.108103018168070)
             + _bary(0.091576213509771, 0.816847572980459)),
    np.array([0.223381589678011] * 3 + [0.109951743655322] * 3),
    degree=4,
)
DEGREE5 = QuadratureRule(
    np.array([[1 / 3, 1 / 3, 1 / 3]]
             + _bary(0.470142064105115, 0.059715871789770)
             + _bary(0.101286507323456, 0.797426985353087)),
    np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3),
    degree=5,
)

_SUBDIVIDED = [BARYCENTER.subdivide(level) for level in range(MAX_SUBDIVISION + 1)]


# ----------------------------------------------------------------------
# Element geometry
# ----------------------------------------------------------------------

def element_coords(mesh: Mesh) -> np.ndarray:
    """Vertex coordinates of every triangle, shape (NT, 3, 2)."""
    return mesh.coords()[mesh.tri_array()]


def element_areas(coords: np.ndarray) -> np.ndarray:
    p0, p1, p2 = coords[:, 0], coords[:, 1], coords[:, 2]
    return 0.5 * ((p1[:, 0] - p0[:, 0]) * (p2[:, 1] - p0[:, 1])
                  - (p1[:, 1] - p0[:, 1]) * (p2[:, 0] - p0[:, 0]))


def shape_gradients(coords: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Gradients of the three barycentric functions on each triangle.

    Returns:
        Tuple of (gradients with shape (NT, 3, 2), areas with shape (NT,))
    """
    areas = element_areas(coords)
    x, y = coords[..., 0], coords[..., 1]
    grads = np.empty(coords.shape)
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        grads[:, i, 0] = y[:, j] - y[:, k]
        grads[:, i, 1] = x[:, k] - x[:, j]
    grads /= (2.0 * areas)[:, None, None]
    return grads, areas


def element_gradients(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Constant gradient of a P1 field on every triangle, shape (NT, 2)."""
    grads, _ = shape_gradients(element_coords(mesh))
    nodal = np.asarray(values)[mesh.tri_array()]
    return np.einsum("ti,tid->td", nodal, grads)


def interpolate(mesh: Mesh, func: Func) -> np.ndarray:
    """Nodal P1 interpolant of func."""
    xy = mesh.coords()
    return np.asarray(func(xy[:, 0], xy[:, 1]), dtype=float)


def quadrature_points(coords: np.ndarray, rule: QuadratureRule) -> np.ndarray:
    """Physical quadrature points, shape (NT, npts, 2)."""
    return np.einsum("qi,tid->tqd", rule.points, coords)


def integrate_elements_with_rule(func: Func, coords: np.ndarray,
                                 rule: QuadratureRule) -> np.ndarray:
    """Per-element integrals of func with a fixed rule."""
    pts = quadrature_points(coords, rule)
    vals = np.asarray(func(pts[..., 0], pts[..., 1]), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("Integrand produced non-finite values")
    return element_areas(coords) * (vals @ rule.weights)


# ----------------------------------------------------------------------
# Subdivided residual quadrature
# ----------------------------------------------------------------------

def integrate_elements(
    func: Func,
    coords: np.ndarray,
    epsilon: float = 0.05,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Integrate func on every element with the recursively subdivided barycenter rule.

    Every element is subdivided at least once. Subdivision stops at the
    first level whose value changed by at most epsilon (relative) from the
    previous level, and never goes beyond three levels.

    Args:
        func: Integrand (usually f squared)
        coords: Element coordinates, shape (NT, 3, 2)
        epsilon: Relative stopping threshold

    Returns:
        Tuple of (values, levels used)
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    coords = np.asarray(coords, dtype=float).reshape(-1, 3, 2)
    nt = coords.shape[0]
    values = np.zeros(nt)
    levels = np.full(nt, MAX_SUBDIVISION, dtype=np.int64)
    pending = np.arange(nt)

    previous = integrate_elements_with_rule(func, coords, _SUBDIVIDED[0])
    for level in range(1, MAX_SUBDIVISION + 1):
        current = integrate_elements_with_rule(func, coords[pending], _SUBDIVIDED[level])
        if level == MAX_SUBDIVISION:
            values[pending] = current
            break
        done = np.abs(current - previous) <= epsilon * np.abs(current)
        values[pending[done]] = current[done]
        levels[pending[done]] = level
        pending = pending[~done]
        previous = current[~done]
        if pending.size == 0:
            break
    return values, levels


def integrate_element(
    func: Func,
    triangle: np.ndarray,
    epsilon: float = 0.05,
) -> Tuple[float, int]:
    """Subdivided quadrature of func on a single triangle (3x2 coordinates)."""
    values, levels = integrate_elements(func, np.asarray(triangle).reshape(1, 3, 2), epsilon)
    return float(values[0]), int(levels[0])


def integrate_reference(func: Func, triangle: np.ndarray, tol: float = 1e-8,
                        max_depth: int = 10) -> float:
    """
    Adaptive reference integral of func on a triangle.

    A triangle is accepted when the degree-5 rule and its four-child
    refinement agree to tol (relative to the running magnitude); otherwise
    each child is integrated recursively.
    """
    tri = np.asarray(triangle, dtype=float).reshape(1, 3, 2)
    children_rule = DEGREE5.subdivide(1)
    scale = abs(float(integrate_elements_with_rule(func, tri, children_rule)[0]))

    def recurse(t: np.ndarray, depth: int) -> float:
        coarse = float(integrate_elements_with_rule(func, t, DEGREE5)[0])
        fine = float(integrate_elements_with_rule(func, t, children_rule)[0])
        if depth >= max_depth or abs(fine - coarse) <= tol * max(scale, abs(fine), 1e-300):
            return fine
        total = 0.0
        for child in _CHILDREN:
            total += recurse(np.einsum("ci,tid->tcd", child, t), depth + 1)
        return total

    return recurse(tri, 0)


# ----------------------------------------------------------------------
# Assembly and solve
# ----------------------------------------------------------------------

def assemble_system(mesh: Mesh, problem: ProblemSpec) -> Tuple[csr_matrix, np.ndarray]:
    """
    Assemble the P1 stiffness matrix and load vector over all vertices.

    Returns:
        Tuple of (stiffness matrix, load vector)
    """
    tris = mesh.tri_array()
    coords = mesh.coords()[tris]
    grads, areas = shape_gradients(coords)
    A = problem.diffusion

    local = np.einsum("tid,de,tje->tij", grads, A, grads) * areas[:, None, None]
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    nv = len(mesh.points)
    K = coo_matrix((local.ravel(), (rows, cols)), shape=(nv, nv)).tocsr()

    pts = quadrature_points(coords, DEGREE5)
    fvals = np.asarray(problem.source(pts[..., 0], pts[..., 1]), dtype=float)
    if not np.all(np.isfinite(fvals)):
        raise ValueError("Source term produced non-finite values")
    # (NT, q) x (q, 3) -> (NT, 3)
    local_load = (fvals * DEGREE5.weights) @ DEGREE5.points * areas[:, None]
    F = np.bincount(tris.ravel(), weights=local_load.ravel(), minlength=nv)
    return K, F


def assemble_and_solve(
    mesh: Mesh,
    problem: ProblemSpec,
    tol: Optional[float] = None,
    maxiter_factor: Optional[int] = None,
) -> ScalarField:
    """
    Solve the discrete variational problem on a compact mesh.

    Boundary vertices take the exact Dirichlet value; the interior block is
    solved by Jacobi-preconditioned conjugate gradients.

    Args:
        mesh: Compact conforming mesh
        problem: Problem data
        tol: Relative residual tolerance (defaults to settings.SOLVER_TOL)
        maxiter_factor: Iteration cap per vertex (defaults to settings.SOLVER_MAXITER_FACTOR)

    Returns:
        Nodal solution stamped with the mesh generation

    Raises:
        SolverError: No boundary vertex, or CG did not converge
    """
    tol = settings.SOLVER_TOL if tol is None else tol
    maxiter_factor = settings.SOLVER_MAXITER_FACTOR if maxiter_factor is None else maxiter_factor

    boundary = mesh.boundary_mask()
    if not boundary.any():
        raise SolverError("Singular system: mesh has no Dirichlet vertices")

    K, F = assemble_system(mesh, problem)
    xy = mesh.coords()
    u = np.zeros(len(xy))
    u[boundary] = problem.dirichlet(xy[boundary, 0], xy[boundary, 1])

    interior = np.flatnonzero(~boundary)
    if interior.size == 0:
        return ScalarField(u, mesh.generation)

    K_ii = K[interior][:, interior]
    rhs = F[interior] - K[interior][:, boundary] @ u[boundary]
    diag = K_ii.diagonal()
    if np.any(diag <= 0):
        raise SolverError("Stiffness matrix has a non-positive diagonal entry")
    jacobi = LinearOperator(K_ii.shape, matvec=lambda r: r / diag)

    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    maxiter = maxiter_factor * len(xy)
    x, info = cg(K_ii, rhs, rtol=tol, atol=0.0, maxiter=maxiter, M=jacobi, callback=count)
    if info != 0:
        raise SolverError(f"Conjugate gradient did not converge after {iterations} iterations",
                          iterations=iterations)
    u[interior] = x
    logger.debug(f"CG converged in {iterations} iterations ({interior.size} unknowns)")
    return ScalarField(u, mesh.generation, iterations=iterations)


# ----------------------------------------------------------------------
# Norms and exact errors
# ----------------------------------------------------------------------

def energy_norm(mesh: Mesh, values: np.ndarray, diffusion: Optional[np.ndarray] = None) -> float:
    """|||v||| = B(v, v)^(1/2) of a P1 field."""
    A = np.eye(2) if diffusion is None else np.asarray(diffusion)
    grads = element_gradients(mesh, values)
    areas = element_areas(element_coords(mesh))
    return float(np.sqrt(np.sum(areas * np.einsum("td,de,te->t", grads, A, grads))))


@dataclass
class ExactErrors:
    """Global and per-element errors of a P1 solution against the exact one."""
    energy: float
    h1_semi: float
    l2: float
    element_h1: np.ndarray
    element_l2: np.ndarray
    element_energy: np.ndarray


EXACT_RULE = DEGREE5.subdivide(1)


def exact_errors(
    mesh: Mesh,
    values: np.ndarray,
    exact: Func,
    exact_grad: GradFunc,
    diffusion: Optional[np.ndarray] = None,
) -> ExactErrors:
    """
    Energy, H1-seminorm and L2 errors of a P1 field.

    Element integrals use the degree-5 rule subdivided once.
    """
    A = np.eye(2) if diffusion is None else np.asarray(diffusion)
    tris = mesh.tri_array()
    coords = mesh.coords()[tris]
    grads, areas = shape_gradients(coords)
    nodal = np.asarray(values)[tris]
    grad_h = np.einsum("ti,tid->td", nodal, grads)

    pts = quadrature_points(coords, EXACT_RULE)
    u_ex = exact(pts[..., 0], pts[..., 1])
    gx, gy = exact_grad(pts[..., 0], pts[..., 1])
    u_h = nodal @ EXACT_RULE.points.T
    ex = gx - grad_h[:, 0:1]
    ey = gy - grad_h[:, 1:2]

    w = EXACT_RULE.weights
    l2_sq = areas * (((u_ex - u_h) ** 2) @ w)
    h1_sq = areas * ((ex ** 2 + ey ** 2) @ w)
    en_sq = areas * ((A[0, 0] * ex ** 2 + 2 * A[0, 1] * ex * ey + A[1, 1] * ey ** 2) @ w)
    return ExactErrors(
        energy=float(np.sqrt(en_sq.sum())),
        h1_semi=float(np.sqrt(h1_sq.sum())),
        l2=float(np.sqrt(l2_sq.sum())),
        element_h1=np.sqrt(h1_sq),
        element_l2=np.sqrt(l2_sq),
        element_energy=np.sqrt(en_sq),
    )
