"""
Conforming 2D triangle mesh with patch queries and local modifications.

The mesh is mutable: edge splitting, edge swapping, interior node removal and
node displacement are applied in place and return a `MeshChange` record that
`Mesh.undo` can roll back. Named per-vertex P1 fields can be attached to the
mesh; every operation interpolates them and every undo restores them, so the
solution and recovered gradient follow the mesh through local modifications.

Triangles are stored counterclockwise under stable integer ids. Removed
vertices stay in the arrays as dead entries until `Mesh.compact` renumbers.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import GeometryRejected, MeshError

logger = logging.getLogger(__name__)

# Relative area below which a produced triangle counts as degenerate
AREA_EPS = 1e-10

Edge = Tuple[int, int]
Triangle = Tuple[int, int, int]
Point = Tuple[float, float]

# Boundary markers of the generated unit-square meshes
BOTTOM, RIGHT, TOP, LEFT = 1, 2, 3, 4


def edge_key(a: int, b: int) -> Edge:
    """Canonical (sorted) key of the edge between two vertices."""
    return (a, b) if a < b else (b, a)


def signed_area(p: Sequence[float], q: Sequence[float], r: Sequence[float]) -> float:
    """Signed area of triangle pqr, positive when counterclockwise."""
    return 0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))


def rotate_to(tri: Triangle, v: int) -> Triangle:
    """Cyclic rotation of a triangle so that it starts at vertex v."""
    a, b, c = tri
    if a == v:
        return (a, b, c)
    if b == v:
        return (b, c, a)
    if c == v:
        return (c, a, b)
    raise MeshError(f"Vertex {v} is not a vertex of triangle {tri}")


def barycentric(p: Sequence[float], a: Sequence[float], b: Sequence[float],
                c: Sequence[float]) -> Tuple[float, float, float]:
    """Barycentric coordinates of p with respect to triangle abc."""
    area = signed_area(a, b, c)
    return (signed_area(p, b, c) / area,
            signed_area(a, p, c) / area,
            signed_area(a, b, p) / area)


@dataclass
class EdgePatch:
    """Triangles incident to an edge plus their edge-neighbours."""
    edge: Edge
    incident: List[int]
    extended: List[int]


@dataclass
class VertexPatch:
    """Fan of triangles around a vertex, ordered counterclockwise."""
    vertex: int
    triangles: List[int]
    polygon: List[int]
    closed: bool


@dataclass
class MeshChange:
    """Undo record of one accepted local operation."""
    kind: str
    removed: Dict[int, Triangle] = field(default_factory=dict)
    added: List[int] = field(default_factory=list)
    new_vertex: Optional[int] = None
    removed_vertex: Optional[int] = None
    moved_vertex: Optional[int] = None
    old_position: Optional[Point] = None
    old_values: Dict[str, float] = field(default_factory=dict)
    boundary_removed: Dict[Edge, int] = field(default_factory=dict)
    boundary_added: List[Edge] = field(default_factory=list)
    new_edge: Optional[Edge] = None


class Mesh:
    """Conforming triangulation of a planar domain."""

    def __init__(
        self,
        points: Iterable[Sequence[float]],
        triangles: Iterable[Sequence[int]],
        boundary_edges: Optional[Iterable[Sequence[int]]] = None,
        vertex_markers: Optional[Sequence[int]] = None,
    ):
        self.points: List[Point] = [(float(p[0]), float(p[1])) for p in points]
        nv = len(self.points)
        self.alive: List[bool] = [True] * nv
        self.vertex_triangles: List[set] = [set() for _ in range(nv)]
        self.triangles: Dict[int, Triangle] = {}
        self.edges: Dict[Edge, List[int]] = {}
        self.boundary: Dict[Edge, int] = {}
        self.fields: Dict[str, List[float]] = {}
        self.generation = 0
        self._next_tri = 0

        for tri in triangles:
            a, b, c = (int(tri[0]), int(tri[1]), int(tri[2]))
            area = signed_area(self.points[a], self.points[b], self.points[c])
            if area == 0.0:
                raise MeshError(f"Degenerate triangle ({a}, {b}, {c})")
            if area < 0:
                b, c = c, b
            self._add_triangle((a, b, c))

        if boundary_edges is not None:
            for be in boundary_edges:
                a, b = int(be[0]), int(be[1])
                marker = int(be[2]) if len(be) > 2 else 1
                key = edge_key(a, b)
                if key not in self.edges:
                    raise MeshError(f"Boundary edge {key} is not a mesh edge")
                self.boundary[key] = marker
        # Edges with a single incident triangle are boundary edges even if unlisted
        for key, tris in self.edges.items():
            if len(tris) == 1 and key not in self.boundary:
                self.boundary[key] = 1

        if vertex_markers is not None:
            self.vertex_marker: List[int] = [int(m) for m in vertex_markers]
        else:
            self.vertex_marker = [0] * nv
            for (a, b), marker in self.boundary.items():
                for v in (a, b):
                    if self.vertex_marker[v] == 0:
                        self.vertex_marker[v] = marker
        # A vertex on a boundary edge is a boundary vertex whatever the file says
        for (a, b), marker in self.boundary.items():
            for v in (a, b):
                if self.vertex_marker[v] == 0:
                    self.vertex_marker[v] = marker

    # ------------------------------------------------------------------
    # Construction helpers
    # ------------------------------------------------------------------

    @classmethod
    def uniform(cls, n: int, pattern: str = "parallel") -> "Mesh":
        """
        Uniform n x n mesh of the unit square, each cell split by a diagonal.

        Args:
            n: Number of cells per side
            pattern: "parallel" (all diagonals SW-NE) or "chevron"
                (diagonal direction alternates between columns)

        Returns:
            Mesh with (n+1)^2 vertices and 2n^2 triangles
        """
        if n < 1:
            raise MeshError("Uniform mesh needs at least one cell per side")
        if pattern not in ("parallel", "chevron"):
            raise MeshError(f"Unknown mesh pattern: {pattern}")

        def vid(i: int, j: int) -> int:
            return i + j * (n + 1)

        points = [(i / n, j / n) for j in range(n + 1) for i in range(n + 1)]
        triangles = []
        for j in range(n):
            for i in range(n):
                v00, v10 = vid(i, j), vid(i + 1, j)
                v01, v11 = vid(i, j + 1), vid(i + 1, j + 1)
                if pattern == "chevron" and i % 2 == 1:
                    triangles.append((v00, v10, v01))
                    triangles.append((v10, v11, v01))
                else:
                    triangles.append((v00, v10, v11))
                    triangles.append((v00, v11, v01))

        boundary = []
        for i in range(n):
            boundary.append((vid(i, 0), vid(i + 1, 0), BOTTOM))
            boundary.append((vid(n, i), vid(n, i + 1), RIGHT))
            boundary.append((vid(i + 1, n), vid(i, n), TOP))
            boundary.append((vid(0, i + 1), vid(0, i), LEFT))
        return cls(points, triangles, boundary)

    # ------------------------------------------------------------------
    # Basic queries
    # ------------------------------------------------------------------

    @property
    def num_vertices(self) -> int:
        return sum(self.alive)

    @property
    def num_triangles(self) -> int:
        return len(self.triangles)

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def __repr__(self) -> str:
        return (f"Mesh(vertices={self.num_vertices}, triangles={self.num_triangles}, "
                f"generation={self.generation})")

    def is_compact(self) -> bool:
        return all(self.alive) and set(self.triangles) == set(range(len(self.triangles)))

    def is_boundary_vertex(self, v: int) -> bool:
        return self.vertex_marker[v] != 0

    def vertex_ids(self) -> List[int]:
        return [v for v, alive in enumerate(self.alive) if alive]

    def tri_coords(self, tid: int) -> Tuple[Point, Point, Point]:
        a, b, c = self.triangles[tid]
        return self.points[a], self.points[b], self.points[c]

    def area(self, tid: int) -> float:
        return signed_area(*self.tri_coords(tid))

    def total_area(self) -> float:
        return math.fsum(self.area(t) for t in self.triangles)

    def edge_length(self, edge: Edge) -> float:
        p, q = self.points[edge[0]], self.points[edge[1]]
        return math.hypot(q[0] - p[0], q[1] - p[1])

    def triangle_edges(self, tid: int) -> List[Edge]:
        a, b, c = self.triangles[tid]
        return [edge_key(a, b), edge_key(b, c), edge_key(c, a)]

    def neighbours(self, tid: int) -> List[int]:
        """Triangles sharing an edge with triangle tid."""
        result = []
        for key in self.triangle_edges(tid):
            for other in self.edges[key]:
                if other != tid:
                    result.append(other)
        return result

    def vertex_neighbours(self, v: int) -> List[int]:
        """Vertices connected to v by an edge, sorted."""
        nbrs = set()
        for tid in self.vertex_triangles[v]:
            nbrs.update(self.triangles[tid])
        nbrs.discard(v)
        return sorted(nbrs)

    def coords(self) -> np.ndarray:
        """Vertex coordinates as an (NV, 2) array (compact meshes only)."""
        self.require_compact()
        return np.array(self.points, dtype=float).reshape(-1, 2)

    def tri_array(self) -> np.ndarray:
        """Triangles as an (NT, 3) array ordered by id (compact meshes only)."""
        self.require_compact()
        return np.array([self.triangles[t] for t in range(len(self.triangles))],
                        dtype=np.int64).reshape(-1, 3)

    def boundary_mask(self) -> np.ndarray:
        self.require_compact()
        return np.array(self.vertex_marker, dtype=int) != 0

    def require_compact(self) -> None:
        if not self.is_compact():
            raise MeshError("Operation requires a compact mesh; call compact() first")

    # ------------------------------------------------------------------
    # Attached vertex fields
    # ------------------------------------------------------------------

    def attach_field(self, name: str, values: Sequence[float]) -> None:
        """Attach a P1 field carried through local operations."""
        if len(values) != len(self.points):
            raise MeshError(
                f"Field {name} has {len(values)} values for {len(self.points)} vertices"
            )
        self.fields[name] = [float(x) for x in values]

    # ------------------------------------------------------------------
    # Patches
    # ------------------------------------------------------------------

    def edge_patch(self, edge: Sequence[int]) -> EdgePatch:
        key = edge_key(int(edge[0]), int(edge[1]))
        if key not in self.edges:
            raise MeshError(f"Unknown edge {key}")
        incident = list(self.edges[key])
        extended = []
        for tid in incident:
            for other in self.neighbours(tid):
                if other not in incident and other not in extended:
                    extended.append(other)
        return EdgePatch(edge=key, incident=incident, extended=extended)

    def vertex_patch(self, v: int) -> VertexPatch:
        if not (0 <= v < len(self.points)) or not self.alive[v]:
            raise MeshError(f"Unknown vertex {v}")
        succ: Dict[int, Tuple[int, int]] = {}
        for tid in self.vertex_triangles[v]:
            _, a, b = rotate_to(self.triangles[tid], v)
            succ[a] = (b, tid)
        targets = {b for b, _ in succ.values()}
        starts = sorted(a for a in succ if a not in targets)
        closed = not starts
        start = min(succ) if closed else starts[0]

        ring = [start]
        ordered: List[int] = []
        a = start
        while a in succ and len(ordered) < len(succ):
            b, tid = succ[a]
            ordered.append(tid)
            if closed and b == start:
                break
            ring.append(b)
            a = b
        polygon = ring if closed else ring + [v]
        return VertexPatch(vertex=v, triangles=ordered, polygon=polygon, closed=closed)

    def extended_set(self, tids: Iterable[int]) -> List[int]:
        """Given triangles plus their edge-neighbours, in first-seen order."""
        seen: Dict[int, None] = {}
        for tid in tids:
            seen.setdefault(tid, None)
        for tid in list(seen):
            for other in self.neighbours(tid):
                seen.setdefault(other, None)
        return list(seen)

    def boundary_chain(self, v: int) -> List[int]:
        """Vertices joined to boundary vertex v by boundary edges."""
        chain = []
        for u in self.vertex_neighbours(v):
            if edge_key(u, v) in self.boundary:
                chain.append(u)
        return chain

    def boundary_tangent(self, v: int) -> Optional[Tuple[float, float]]:
        """
        Unit tangent of the straight boundary segment through v.

        Returns None for corners and for vertices whose two boundary edges
        carry different markers; such vertices never move.
        """
        chain = self.boundary_chain(v)
        if len(chain) != 2:
            return None
        m0 = self.boundary[edge_key(v, chain[0])]
        m1 = self.boundary[edge_key(v, chain[1])]
        if m0 != m1:
            return None
        p, a, b = self.points[v], self.points[chain[0]], self.points[chain[1]]
        dx, dy = b[0] - a[0], b[1] - a[1]
        length = math.hypot(dx, dy)
        cross = (p[0] - a[0]) * dy - (p[1] - a[1]) * dx
        if abs(cross) > 1e-12 * length * length:
            return None
        return dx / length, dy / length

    # ------------------------------------------------------------------
    # Internal bookkeeping
    # ------------------------------------------------------------------

    def _add_triangle(self, tri: Triangle, tid: Optional[int] = None) -> int:
        if tid is None:
            tid = self._next_tri
            self._next_tri += 1
        else:
            self._next_tri = max(self._next_tri, tid + 1)
        self.triangles[tid] = tri
        a, b, c = tri
        for v in tri:
            self.vertex_triangles[v].add(tid)
        for key in (edge_key(a, b), edge_key(b, c), edge_key(c, a)):
            self.edges.setdefault(key, []).append(tid)
        return tid

    def _remove_triangle(self, tid: int) -> Triangle:
        tri = self.triangles.pop(tid)
        a, b, c = tri
        for v in tri:
            self.vertex_triangles[v].discard(tid)
        for key in (edge_key(a, b), edge_key(b, c), edge_key(c, a)):
            tris = self.edges[key]
            tris.remove(tid)
            if not tris:
                del self.edges[key]
        return tri

    def _append_vertex(self, point: Point, marker: int, values: Dict[str, float]) -> int:
        v = len(self.points)
        self.points.append(point)
        self.alive.append(True)
        self.vertex_triangles.append(set())
        self.vertex_marker.append(marker)
        for name, vals in self.fields.items():
            vals.append(values[name])
        return v

    def _pop_vertex(self, v: int) -> None:
        if v != len(self.points) - 1:
            raise MeshError("Only the most recently created vertex can be dropped")
        self.points.pop()
        self.alive.pop()
        self.vertex_triangles.pop()
        self.vertex_marker.pop()
        for vals in self.fields.values():
            vals.pop()

    def _interpolate_fields(self, p: Point, tids: Iterable[int]) -> Dict[str, float]:
        """P1 values of the attached fields at p, located among triangles tids."""
        if not self.fields:
            return {}
        best, best_tri = None, None
        for tid in tids:
            a, b, c = self.triangles[tid]
            lam = barycentric(p, self.points[a], self.points[b], self.points[c])
            score = min(lam)
            if best is None or score > best[0]:
                best, best_tri = (score, lam), (a, b, c)
        if best is None:
            return {}
        lam = best[1]
        a, b, c = best_tri
        return {
            name: lam[0] * vals[a] + lam[1] * vals[b] + lam[2] * vals[c]
            for name, vals in self.fields.items()
        }

    def _touch(self) -> None:
        self.generation += 1

    # ------------------------------------------------------------------
    # Local operations
    # ------------------------------------------------------------------

    def split_edge(self, edge: Sequence[int], t: float = 0.5) -> Optional[MeshChange]:
        """
        Split an edge at the point a + t (b - a), a and b given in call order.

        Each incident triangle is replaced by two. A new vertex on a boundary
        edge inherits the edge marker and both halves keep it.

        Returns:
            The change record, or None if a child would be degenerate
        """
        a, b = int(edge[0]), int(edge[1])
        key = edge_key(a, b)
        if key not in self.edges:
            raise MeshError(f"Unknown edge {key}")
        if not 0.0 < t < 1.0:
            raise ValueError("Split position must lie strictly inside the edge")

        pa, pb = self.points[a], self.points[b]
        m = (pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1]))

        plans = []
        for tid in self.edges[key]:
            tri = self.triangles[tid]
            # rotate so the split edge is the first (CCW) edge p -> q
            p, q, o = rotate_to(tri, a)
            if q != b:
                p, q, o = rotate_to(tri, b)
            parent = signed_area(self.points[p], self.points[q], self.points[o])
            child1 = signed_area(self.points[p], m, self.points[o])
            child2 = signed_area(m, self.points[q], self.points[o])
            if child1 <= AREA_EPS * parent or child2 <= AREA_EPS * parent:
                logger.debug(f"Split of edge {key} rejected: degenerate child")
                return None
            plans.append((tid, p, q, o))

        values = {name: (1.0 - t) * vals[a] + t * vals[b] for name, vals in self.fields.items()}
        marker = self.boundary.get(key, 0)
        new_v = self._append_vertex(m, marker, values)

        change = MeshChange(kind="split", new_vertex=new_v)
        for tid, p, q, o in plans:
            change.removed[tid] = self._remove_triangle(tid)
            change.added.append(self._add_triangle((p, new_v, o)))
            change.added.append(self._add_triangle((new_v, q, o)))
        if key in self.boundary:
            change.boundary_removed[key] = self.boundary.pop(key)
            for half in (edge_key(a, new_v), edge_key(new_v, b)):
                self.boundary[half] = marker
                change.boundary_added.append(half)
        self._touch()
        return change

    def swap_edge(self, edge: Sequence[int]) -> Optional[MeshChange]:
        """
        Reconnect the two triangles of an interior edge along the other diagonal.

        Returns:
            The change record, or None for boundary edges and for
            non-convex or degenerate quadrilaterals
        """
        key = edge_key(int(edge[0]), int(edge[1]))
        if key not in self.edges:
            raise MeshError(f"Unknown edge {key}")
        tris = self.edges[key]
        if len(tris) != 2 or key in self.boundary:
            return None
        t1, t2 = tris
        p, q, a = rotate_to(self.triangles[t1], key[0])
        if q != key[1]:
            p, q, a = rotate_to(self.triangles[t1], key[1])
        _, _, b = rotate_to(self.triangles[t2], q)
        if edge_key(a, b) in self.edges:
            return None

        pp, pq, pa, pb = self.points[p], self.points[q], self.points[a], self.points[b]
        total = signed_area(pp, pq, pa) + signed_area(pq, pp, pb)
        if (signed_area(pp, pb, pa) <= AREA_EPS * total
                or signed_area(pb, pq, pa) <= AREA_EPS * total):
            return None

        change = MeshChange(kind="swap")
        change.removed[t1] = self._remove_triangle(t1)
        change.removed[t2] = self._remove_triangle(t2)
        change.added.append(self._add_triangle((p, b, a)))
        change.added.append(self._add_triangle((b, q, a)))
        change.new_edge = edge_key(a, b)
        self._touch()
        return change

    def remove_vertex(self, v: int) -> Optional[MeshChange]:
        """
        Remove an interior vertex and retriangulate the hole by ear clipping.

        Returns:
            The change record, or None for boundary vertices and when no
            valid retriangulation exists
        """
        if not self.alive[v]:
            raise MeshError(f"Unknown vertex {v}")
        if self.is_boundary_vertex(v):
            return None
        patch = self.vertex_patch(v)
        if not patch.closed:
            return None
        try:
            new_tris = self._ear_clip(patch.polygon)
        except GeometryRejected as e:
            logger.debug(f"Removal of vertex {v} rejected: {e}")
            return None

        change = MeshChange(kind="remove", removed_vertex=v)
        for tid in patch.triangles:
            change.removed[tid] = self._remove_triangle(tid)
        for tri in new_tris:
            change.added.append(self._add_triangle(tri))
        self.alive[v] = False
        self._touch()
        return change

    def _ear_clip(self, polygon: List[int]) -> List[Triangle]:
        poly = list(polygon)
        pts = self.points
        total = 0.0
        for i in range(len(poly)):
            p, q = pts[poly[i - 1]], pts[poly[i]]
            total += 0.5 * (p[0] * q[1] - q[0] * p[1])
        if total <= 0:
            raise GeometryRejected("vertex patch is not counterclockwise")
        eps = AREA_EPS * total

        result: List[Triangle] = []
        while len(poly) > 3:
            n = len(poly)
            for i in range(n):
                a, b, c = poly[i - 1], poly[i], poly[(i + 1) % n]
                if signed_area(pts[a], pts[b], pts[c]) <= eps:
                    continue
                if edge_key(a, c) in self.edges:
                    continue
                blocked = False
                for w in poly:
                    if w in (a, b, c):
                        continue
                    lam = barycentric(pts[w], pts[a], pts[b], pts[c])
                    if min(lam) >= -1e-14:
                        blocked = True
                        break
                if blocked:
                    continue
                result.append((a, b, c))
                poly.pop(i)
                break
            else:
                raise GeometryRejected("no valid ear left")
        a, b, c = poly
        if signed_area(pts[a], pts[b], pts[c]) <= eps:
            raise GeometryRejected("last ear is degenerate")
        result.append((a, b, c))
        return result

    def move_vertex(self, v: int, position: Sequence[float]) -> Optional[MeshChange]:
        """
        Move a vertex; boundary vertices may only slide along their straight
        boundary segment between their two boundary neighbours.

        Returns:
            The change record, or None if any incident triangle would
            invert or degenerate
        """
        if not self.alive[v]:
            raise MeshError(f"Unknown vertex {v}")
        new = (float(position[0]), float(position[1]))
        old = self.points[v]

        if self.is_boundary_vertex(v) and new != old:
            if self.boundary_tangent(v) is None:
                return None
            n0, n1 = self.boundary_chain(v)
            a, b = self.points[n0], self.points[n1]
            dx, dy = b[0] - a[0], b[1] - a[1]
            length2 = dx * dx + dy * dy
            s = ((new[0] - a[0]) * dx + (new[1] - a[1]) * dy) / length2
            cross = (new[0] - a[0]) * dy - (new[1] - a[1]) * dx
            if not 0.0 < s < 1.0 or abs(cross) > 1e-12 * length2:
                return None

        for tid in self.vertex_triangles[v]:
            _, b, c = rotate_to(self.triangles[tid], v)
            before = signed_area(old, self.points[b], self.points[c])
            after = signed_area(new, self.points[b], self.points[c])
            if after <= AREA_EPS * before:
                return None

        values = self._interpolate_fields(new, self.vertex_triangles[v])
        change = MeshChange(kind="move", moved_vertex=v, old_position=old)
        for name, vals in self.fields.items():
            change.old_values[name] = vals[v]
            if name in values:
                vals[v] = values[name]
        self.points[v] = new
        self._touch()
        return change

    def undo(self, change: MeshChange) -> None:
        """Roll back the most recent change."""
        if change.kind == "move":
            v = change.moved_vertex
            self.points[v] = change.old_position
            for name, value in change.old_values.items():
                self.fields[name][v] = value
            self._touch()
            return

        for tid in change.added:
            self._remove_triangle(tid)
        for edge in change.boundary_added:
            del self.boundary[edge]
        self.boundary.update(change.boundary_removed)
        if change.removed_vertex is not None:
            self.alive[change.removed_vertex] = True
        for tid, tri in change.removed.items():
            self._add_triangle(tri, tid)
        if change.new_vertex is not None:
            self._pop_vertex(change.new_vertex)
        self._touch()

    def refine_all_edges(self) -> int:
        """Split every current edge once at its midpoint (4x triangles)."""
        count = 0
        for key in list(self.edges):
            if key in self.edges and self.split_edge(key) is not None:
                count += 1
        return count

    # ------------------------------------------------------------------
    # Compaction and invariants
    # ------------------------------------------------------------------

    def compact(self) -> np.ndarray:
        """
        Renumber vertices and triangles contiguously, dropping dead vertices.

        Returns:
            Array mapping old vertex ids to new ids (-1 for removed vertices)
        """
        old_to_new = np.full(len(self.points), -1, dtype=np.int64)
        keep = [v for v, alive in enumerate(self.alive) if alive]
        old_to_new[keep] = np.arange(len(keep))
        remap = old_to_new.tolist()

        edges_order = list(self.edges)
        tris = [self.triangles[t] for t in sorted(self.triangles)]
        boundary = {edge_key(remap[a], remap[b]): m for (a, b), m in self.boundary.items()}

        self.points = [self.points[v] for v in keep]
        self.vertex_marker = [self.vertex_marker[v] for v in keep]
        self.fields = {name: [vals[v] for v in keep] for name, vals in self.fields.items()}
        self.alive = [True] * len(keep)
        self.vertex_triangles = [set() for _ in keep]
        self.triangles = {}
        self.edges = {key: [] for key in (edge_key(remap[a], remap[b]) for a, b in edges_order)}
        self._next_tri = 0
        for tri in tris:
            self._add_triangle((remap[tri[0]], remap[tri[1]], remap[tri[2]]))
        self.boundary = boundary
        self._touch()
        return old_to_new

    def check_invariants(self, reference_area: Optional[float] = None) -> List[str]:
        """
        Check conformity, orientation and boundary closure.

        Returns:
            List of problems found (empty when the mesh is valid)
        """
        problems = []
        for tid, tri in self.triangles.items():
            if any(not self.alive[v] for v in tri):
                problems.append(f"triangle {tid} uses a removed vertex")
            elif self.area(tid) <= 0:
                problems.append(f"triangle {tid} has non-positive area")
        degree: Dict[int, int] = {}
        for key, tris in self.edges.items():
            if len(tris) not in (1, 2):
                problems.append(f"edge {key} has {len(tris)} incident triangles")
            if len(tris) == 1 and key not in self.boundary:
                problems.append(f"edge {key} has one triangle but is not a boundary edge")
            if len(tris) == 2 and key in self.boundary:
                problems.append(f"boundary edge {key} has two triangles")
        for key in self.boundary:
            if key not in self.edges:
                problems.append(f"boundary edge {key} is not a mesh edge")
            for v in key:
                degree[v] = degree.get(v, 0) + 1
        for v, d in degree.items():
            if d != 2:
                problems.append(f"boundary vertex {v} has {d} boundary edges")
        if reference_area is not None:
            total = self.total_area()
            if abs(total - reference_area) > 1e-12 * reference_area:
                problems.append(f"total area {total!r} differs from {reference_area!r}")
        return problems

    def assert_valid(self, reference_area: Optional[float] = None) -> None:
        problems = self.check_invariants(reference_area)
        if problems:
            raise MeshError("; ".join(problems[:5]))


# ----------------------------------------------------------------------
# File formats
# ----------------------------------------------------------------------

def write_ascii(mesh: Mesh, path: str, metric: Optional[np.ndarray] = None) -> None:
    """
    Write the ASCII mesh format.

    Header `NV NT NBE`, then NV lines `x y marker`, NT lines `v0 v1 v2` and
    NBE lines `v0 v1 marker`. An optional per-vertex metric is appended as a
    `METRIC NV` line followed by NV lines `m11 m12 m22`.
    """
    mesh.require_compact()
    lines = [f"{mesh.num_vertices} {mesh.num_triangles} {len(mesh.boundary)}"]
    for (x, y), marker in zip(mesh.points, mesh.vertex_marker):
        lines.append(f"{x!r} {y!r} {marker}")
    for t in range(mesh.num_triangles):
        a, b, c = mesh.triangles[t]
        lines.append(f"{a} {b} {c}")
    for (a, b), marker in sorted(mesh.boundary.items()):
        lines.append(f"{a} {b} {marker}")
    if metric is not None:
        metric = np.asarray(metric, dtype=float).reshape(-1, 3)
        lines.append(f"METRIC {metric.shape[0]}")
        for m11, m12, m22 in metric:
            lines.append(f"{float(m11)!r} {float(m12)!r} {float(m22)!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_ascii(path: str) -> Tuple[Mesh, Optional[np.ndarray]]:
    """
    Read the ASCII mesh format written by `write_ascii`.

    Returns:
        Tuple of (mesh, metric or None)
    """
    try:
        with open(path) as f:
            rows = [line.split() for line in f if line.strip()]
        nv, nt, nbe = (int(x) for x in rows[0][:3])
        body = rows[1:]
        verts = body[:nv]
        tris = body[nv:nv + nt]
        bnd = body[nv + nt:nv + nt + nbe]
        if len(verts) != nv or len(tris) != nt or len(bnd) != nbe:
            raise MeshError(f"Truncated mesh file: {path}")
        points = [(float(r[0]), float(r[1])) for r in verts]
        markers = [int(r[2]) if len(r) > 2 else 0 for r in verts]
        triangles = [(int(r[0]), int(r[1]), int(r[2])) for r in tris]
        boundary = [(int(r[0]), int(r[1]), int(r[2]) if len(r) > 2 else 1) for r in bnd]
        metric = None
        rest = body[nv + nt + nbe:]
        if rest and rest[0][0] == "METRIC":
            count = int(rest[0][1])
            metric = np.array([[float(x) for x in r[:3]] for r in rest[1:1 + count]])
    except OSError as e:
        raise MeshError(f"Could not read mesh file {path}: {e}") from e
    except (IndexError, ValueError) as e:
        raise MeshError(f"Could not parse mesh file {path}: {e}") from e
    return Mesh(points, triangles, boundary, markers), metric


def write_vtk(
    mesh: Mesh,
    path: str,
    point_data: Optional[Dict[str, Sequence[float]]] = None,
    cell_data: Optional[Dict[str, Sequence[float]]] = None,
) -> None:
    """Write a legacy-VTK unstructured grid of the (compact) mesh."""
    mesh.require_compact()
    nv, nt = mesh.num_vertices, mesh.num_triangles
    lines = [
        "# vtk DataFile Version 3.0",
        "anisotropic adaptation mesh",
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {nv} double",
    ]
    lines += [f"{x!r} {y!r} 0.0" for x, y in mesh.points]
    lines.append(f"CELLS {nt} {4 * nt}")
    for t in range(nt):
        a, b, c = mesh.triangles[t]
        lines.append(f"3 {a} {b} {c}")
    lines.append(f"CELL_TYPES {nt}")
    lines += ["5"] * nt
    if point_data:
        lines.append(f"POINT_DATA {nv}")
        for name, values in point_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(x)) for x in values]
    if cell_data:
        lines.append(f"CELL_DATA {nt}")
        for name, values in cell_data.items():
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(x)) for x in values]
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
