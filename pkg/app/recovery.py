"""
Recovered derivatives of P1 fields.

- Zhang-Naga polynomial preserving recovery of the gradient (default)
- Simplified Zienkiewicz-Zhu recovery (area-weighted average)
- Least-squares Hessian recovery from the same local quadratic fits
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .fem import element_coords, shape_gradients
from .mesh import Mesh

logger = logging.getLogger(__name__)

RECOVERY_METHODS = ("zhang-naga", "zz")

# Ring expansions tried after the first ring before falling back to ZZ
MAX_RING_EXPANSIONS = 3
# Smallest accepted ratio of singular values of the scaled fitting matrix
RANK_TOL = 1e-8


@dataclass
class QuadraticFits:
    """Per-vertex gradient and Hessian of the local least-squares quadratic."""
    gradient: np.ndarray
    hessian: np.ndarray
    fallback: np.ndarray
    rings: np.ndarray


def vertex_adjacency(mesh: Mesh) -> List[np.ndarray]:
    """Sorted neighbour lists of a compact mesh."""
    mesh.require_compact()
    nv = len(mesh.points)
    edges = np.array(list(mesh.edges), dtype=np.int64).reshape(-1, 2)
    both = np.vstack([edges, edges[:, ::-1]])
    order = np.lexsort((both[:, 1], both[:, 0]))
    both = both[order]
    splits = np.searchsorted(both[:, 0], np.arange(1, nv))
    return np.split(both[:, 1], splits)


def _ring_patch(adjacency: List[np.ndarray], v: int, rings: int) -> np.ndarray:
    patch = {v}
    frontier = {v}
    for _ in range(rings):
        nxt = set()
        for w in frontier:
            nxt.update(adjacency[w].tolist())
        nxt -= patch
        patch |= nxt
        frontier = nxt
    return np.array(sorted(patch), dtype=np.int64)


def _fit_vertex(xy: np.ndarray, values: np.ndarray, v: int,
                patch: np.ndarray) -> Tuple[Optional[np.ndarray], Optional[np.ndarray], bool]:
    if patch.size < 6:
        return None, None, False
    local = xy[patch] - xy[v]
    radius = np.max(np.hypot(local[:, 0], local[:, 1]))
    s, t = local[:, 0] / radius, local[:, 1] / radius
    V = np.column_stack([np.ones_like(s), s, t, s * s, s * t, t * t])
    sv = np.linalg.svd(V, compute_uv=False)
    if sv[-1] <= RANK_TOL * sv[0]:
        return None, None, False
    coef, *_ = np.linalg.lstsq(V, values[patch], rcond=None)
    gradient = np.array([coef[1], coef[2]]) / radius
    hessian = np.array([2 * coef[3], coef[4], 2 * coef[5]]) / radius ** 2
    return gradient, hessian, True


def fit_quadratics(mesh: Mesh, values: np.ndarray) -> QuadraticFits:
    """
    Fit a quadratic to the field values on a ring patch around every vertex.

    The patch starts with the first ring and grows until the six-monomial
    least-squares system has full column rank. Vertices still rank-deficient
    after the allowed expansions fall back to ZZ values.
    """
    values = np.asarray(values, dtype=float)
    xy = mesh.coords()
    adjacency = vertex_adjacency(mesh)
    nv = len(xy)
    gradient = np.zeros((nv, 2))
    hessian = np.zeros((nv, 3))
    fallback = np.zeros(nv, dtype=bool)
    rings = np.zeros(nv, dtype=np.int64)

    for v in range(nv):
        for k in range(1, MAX_RING_EXPANSIONS + 2):
            g, h, ok = _fit_vertex(xy, values, v, _ring_patch(adjacency, v, k))
            if ok:
                gradient[v], hessian[v], rings[v] = g, h, k
                break
        else:
            fallback[v] = True

    if fallback.any():
        logger.warning(f"Quadratic fit rank-deficient at {int(fallback.sum())} vertices; using ZZ values")
        zz = zz_gradient(mesh, values)
        gradient[fallback] = zz[fallback]
        hzz = _zz_hessian(mesh, zz)
        hessian[fallback] = hzz[fallback]
    return QuadraticFits(gradient, hessian, fallback, rings)


def zz_gradient(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Area-weighted average of the incident element gradients at every vertex."""
    tris = mesh.tri_array()
    grads, areas = shape_gradients(element_coords(mesh))
    elem = np.einsum("ti,tid->td", np.asarray(values, dtype=float)[tris], grads)
    nv = len(mesh.points)
    weight = np.bincount(tris.ravel(), weights=np.repeat(areas, 3), minlength=nv)
    result = np.empty((nv, 2))
    for d in range(2):
        result[:, d] = np.bincount(tris.ravel(), weights=np.repeat(areas * elem[:, d], 3),
                                   minlength=nv) / weight
    return result


def _zz_hessian(mesh: Mesh, gradient: np.ndarray) -> np.ndarray:
    gx = zz_gradient(mesh, gradient[:, 0])
    gy = zz_gradient(mesh, gradient[:, 1])
    return np.column_stack([gx[:, 0], 0.5 * (gx[:, 1] + gy[:, 0]), gy[:, 1]])


def zhang_naga_gradient(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Gradient of the local best-fit quadratic at every vertex, shape (NV, 2)."""
    return fit_quadratics(mesh, values).gradient


def ls_hessian(mesh: Mesh, values: np.ndarray) -> np.ndarray:
    """Hessian (H11, H12, H22) of the local best-fit quadratic, shape (NV, 3)."""
    return fit_quadratics(mesh, values).hessian


def recover_gradient(mesh: Mesh, values: np.ndarray, method: str = "zhang-naga") -> np.ndarray:
    """Recovered gradient by the named method."""
    if method == "zhang-naga":
        return zhang_naga_gradient(mesh, values)
    if method == "zz":
        return zz_gradient(mesh, values)
    raise ValueError(f"Unknown recovery method: {method}")
