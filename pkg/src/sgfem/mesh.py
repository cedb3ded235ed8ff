"""Triangulations, structured generators, splits and vertex-star geometry.

The singularity classifier works on the angles of the elements around a
vertex: a Type I vertex has all incident edges on at most two lines, a
Type II vertex on exactly three.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

EPS_SING = 1e-10

KINDS = (
    "Boundary",
    "Regular",
    "TypeI",
    "TypeII-nondegenerate",
    "TypeII-1",
    "TypeII-2",
    "TypeII-3",
)
_TYPE_II_BY_COUNT = {6: "TypeII-nondegenerate", 5: "TypeII-1", 4: "TypeII-2", 3: "TypeII-3"}


class MeshError(ValueError):
    """Raised for malformed or non-conforming meshes."""


def perp(v):
    """Rotate by -90 degrees: (a, b) -> (b, -a)."""
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 1], -v[..., 0]], axis=-1)


@dataclass(frozen=True, eq=False)
class Triangulation:
    """Conforming planar triangulation with counterclockwise triangles.

    Parameters
    ----------
    vertices : array_like, shape (nv, 2)
    triangles : array_like of int, shape (nt, 3)
    cells : array_like of int, shape (nt,), optional
        Index of the structured quadrilateral parent of each triangle.
        Only the grid generators set it; ``split(kind="fishbone")`` needs it.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    cells: np.ndarray | None = field(default=None)
    grid_shape: tuple[int, int] | None = field(default=None)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        t = np.ascontiguousarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if t.ndim != 2 or t.shape[1] != 3:
            raise MeshError("triangles must have shape (nt, 3)")
        if len(t) == 0:
            raise MeshError("mesh has no triangles")
        if t.min() < 0 or t.max() >= len(v):
            raise MeshError("triangle index out of range")
        v.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if self.cells is not None:
            c = np.asarray(self.cells, dtype=np.int64)
            c.setflags(write=False)
            object.__setattr__(self, "cells", c)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @cached_property
    def edges(self) -> np.ndarray:
        """Sorted vertex pairs, shape (ne, 2)."""
        return np.array(sorted(self._edge_map), dtype=np.int64).reshape(-1, 2)

    @cached_property
    def _edge_map(self) -> dict[tuple[int, int], list[int]]:
        emap: dict[tuple[int, int], list[int]] = {}
        for it, tri in enumerate(self.triangles.tolist()):
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                emap.setdefault((min(a, b), max(a, b)), []).append(it)
        return emap

    def edge_triangles(self, a: int, b: int) -> list[int]:
        return list(self._edge_map.get((min(a, b), max(a, b)), []))

    @cached_property
    def edge_index(self) -> dict[tuple[int, int], int]:
        return {tuple(e): i for i, e in enumerate(self.edges.tolist())}

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        b = [e for e, ts in self._edge_map.items() if len(ts) == 1]
        return np.array(sorted(b), dtype=np.int64).reshape(-1, 2)

    @cached_property
    def boundary_vertex_flags(self) -> np.ndarray:
        flags = np.zeros(self.n_vertices, dtype=bool)
        flags[self.boundary_edges.ravel()] = True
        return flags

    @cached_property
    def vertex_triangles(self) -> list[list[int]]:
        vt: list[list[int]] = [[] for _ in range(self.n_vertices)]
        for it, tri in enumerate(self.triangles.tolist()):
            for v in tri:
                vt[v].append(it)
        return vt

    def interior_vertices(self) -> np.ndarray:
        used = np.array([len(ts) > 0 for ts in self.vertex_triangles])
        return np.flatnonzero(used & ~self.boundary_vertex_flags)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """J of the affine maps x = p0 + J xi, shape (nt, 2, 2)."""
        p = self.vertices[self.triangles]
        J = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1)
        J.setflags(write=False)
        return J

    @cached_property
    def inverse_jacobians(self) -> np.ndarray:
        Jinv = np.linalg.inv(self.jacobians)
        Jinv.setflags(write=False)
        return Jinv

    @cached_property
    def det_jacobians(self) -> np.ndarray:
        d = np.linalg.det(self.jacobians)
        d.setflags(write=False)
        return d

    def map_points(self, xy_ref) -> np.ndarray:
        """Images of reference points in every element, shape (nt, npts, 2)."""
        xy_ref = np.atleast_2d(np.asarray(xy_ref, dtype=float))
        p0 = self.vertices[self.triangles[:, 0]]
        return p0[:, None, :] + np.einsum("eij,qj->eqi", self.jacobians, xy_ref)

    def validate(self) -> None:
        """Check orientation, conformity and edge-connectivity."""
        if np.any(self.signed_areas() <= 0):
            bad = int(np.flatnonzero(self.signed_areas() <= 0)[0])
            raise MeshError(f"triangle {bad} is not counterclockwise")
        for (a, b), ts in self._edge_map.items():
            if len(ts) > 2:
                raise MeshError(f"edge ({a}, {b}) is shared by {len(ts)} triangles")
        hanging = _find_hanging_node(self)
        if hanging is not None:
            (a, b), v = hanging
            raise MeshError(f"hanging node {v} on edge ({a}, {b})")
        if not self._is_edge_connected():
            raise MeshError("mesh is not edge-connected")

    def _is_edge_connected(self) -> bool:
        nt = self.n_triangles
        parent = list(range(nt))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        for ts in self._edge_map.values():
            if len(ts) == 2:
                ra, rb = find(ts[0]), find(ts[1])
                if ra != rb:
                    parent[ra] = rb
        return len({find(i) for i in range(nt)}) == 1

    def transformed(self, matrix=None, shift=(0.0, 0.0)) -> "Triangulation":
        """Apply x -> matrix @ x + shift (matrix must have positive determinant)."""
        m = np.eye(2) if matrix is None else np.asarray(matrix, dtype=float)
        if np.linalg.det(m) <= 0:
            raise MeshError("transformation must preserve orientation")
        v = self.vertices @ m.T + np.asarray(shift, dtype=float)
        return Triangulation(v, self.triangles, self.cells, self.grid_shape)

    def with_vertex_moved(self, v: int, new_xy) -> "Triangulation":
        verts = self.vertices.copy()
        verts[v] = new_xy
        return Triangulation(verts, self.triangles, self.cells, self.grid_shape)

    def euler_characteristic(self) -> int:
        used = sum(1 for ts in self.vertex_triangles if ts)
        return self.n_triangles - self.n_edges + used


def _find_hanging_node(mesh: Triangulation):
    bverts = np.flatnonzero(mesh.boundary_vertex_flags)
    if len(bverts) == 0:
        return None
    pts = mesh.vertices
    for a, b in mesh.boundary_edges.tolist():
        pa, pb = pts[a], pts[b]
        d = pb - pa
        L2 = d @ d
        for v in bverts:
            if v == a or v == b:
                continue
            w = pts[v] - pa
            s = (w @ d) / L2
            if 1e-12 < s < 1 - 1e-12 and abs(w[0] * d[1] - w[1] * d[0]) <= 1e-12 * L2:
                return (a, b), int(v)
    return None


# ----------------------------------------------------------------------------
# generators and splits
# ----------------------------------------------------------------------------


def generate_structured(kind: str, n: int) -> Triangulation:
    """Structured triangulation of the unit square.

    ``diagonal``: n x n squares each cut by the SW-NE diagonal (2n^2 triangles).
    ``crisscross``: each square cut by both diagonals (4n^2 triangles).
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ValueError("n must be a positive integer")
    xs = np.linspace(0.0, 1.0, n + 1)
    gx, gy = np.meshgrid(xs, xs, indexing="xy")
    verts = [np.column_stack([gx.ravel(), gy.ravel()])]

    def vid(i, j):
        return j * (n + 1) + i

    tris, cells = [], []
    if kind == "diagonal":
        for j in range(n):
            for i in range(n):
                a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
                tris += [(a, b, c), (a, c, d)]
                cells += [j * n + i] * 2
    elif kind == "crisscross":
        centers = []
        base = (n + 1) ** 2
        for j in range(n):
            for i in range(n):
                m = base + j * n + i
                centers.append(((xs[i] + xs[i + 1]) / 2, (xs[j] + xs[j + 1]) / 2))
                a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
                tris += [(a, b, m), (b, c, m), (c, d, m), (d, a, m)]
                cells += [j * n + i] * 4
        verts.append(np.array(centers))
    else:
        raise ValueError(f"unknown structured mesh kind {kind!r}")
    return Triangulation(np.vstack(verts), np.array(tris), np.array(cells), (n, n))


def split(mesh: Triangulation, kind: str, r: float = 0.25) -> Triangulation:
    """Refine every triangle (``morgan_scott``, ``hct``) or regrid (``fishbone``)."""
    mesh.validate()
    if kind in ("morgan_scott", "ms"):
        return _morgan_scott(mesh, r)
    if kind == "hct":
        return _hct(mesh)
    if kind == "fishbone":
        return _fishbone(mesh)
    raise ValueError(f"unknown split kind {kind!r}")


class _PointPool:
    """Vertex list that merges points created twice (e.g. on a shared edge)."""

    def __init__(self, base: np.ndarray):
        self.points = [tuple(p) for p in base.tolist()]
        self.keys: dict = {}

    def add(self, key, xy) -> int:
        if key in self.keys:
            return self.keys[key]
        self.points.append((float(xy[0]), float(xy[1])))
        self.keys[key] = len(self.points) - 1
        return self.keys[key]


def _morgan_scott(mesh: Triangulation, r: float) -> Triangulation:
    if not 0.0 < r < 1.0:
        raise ValueError("Morgan-Scott parameter r must lie in (0, 1)")
    pool = _PointPool(mesh.vertices)
    P = mesh.vertices
    tris, parent = [], []
    for it, (A, B, C) in enumerate(mesh.triangles.tolist()):
        pa = (1 - r) * (P[B] + P[C]) / 2 + r * P[A]
        pb = (1 - r) * (P[C] + P[A]) / 2 + r * P[B]
        pc = (1 - r) * (P[A] + P[B]) / 2 + r * P[C]
        a = pool.add(("ms", it, 0), pa)
        b = pool.add(("ms", it, 1), pb)
        c = pool.add(("ms", it, 2), pc)
        tris += [(a, b, c), (A, c, b), (B, a, c), (C, b, a), (A, B, c), (B, C, a), (C, A, b)]
        parent += [it] * 7
    return Triangulation(np.array(pool.points), np.array(tris), _child_cells(mesh, parent))


def _hct(mesh: Triangulation) -> Triangulation:
    pool = _PointPool(mesh.vertices)
    P = mesh.vertices
    tris, parent = [], []
    for it, (A, B, C) in enumerate(mesh.triangles.tolist()):
        g = pool.add(("hct", it), (P[A] + P[B] + P[C]) / 3)
        tris += [(A, B, g), (B, C, g), (C, A, g)]
        parent += [it] * 3
    return Triangulation(np.array(pool.points), np.array(tris), _child_cells(mesh, parent))


def _child_cells(mesh, parent):
    # children keep no quadrilateral structure
    return None


def _fishbone(mesh: Triangulation) -> Triangulation:
    if mesh.cells is None or mesh.grid_shape is None:
        raise MeshError("fishbone split needs a mesh from generate_structured")
    nx, ny = mesh.grid_shape
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    xs = lo[0] + (hi[0] - lo[0]) * xs
    ys = lo[1] + (hi[1] - lo[1]) * ys
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    verts = np.column_stack([gx.ravel(), gy.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris, cells = [], []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = vid(i, j), vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1)
            if i % 2 == 0:
                tris += [(a, b, c), (a, c, d)]
            else:
                tris += [(a, b, d), (b, c, d)]
            cells += [j * nx + i] * 2
    return Triangulation(verts, np.array(tris), np.array(cells), (nx, ny))


def single_triangle(kind: str = "equilateral") -> Triangulation:
    if kind == "equilateral":
        v = [(0.0, 0.0), (1.0, 0.0), (0.5, math.sqrt(3) / 2)]
    elif kind == "reference":
        v = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)]
    else:
        raise ValueError(kind)
    return Triangulation(np.array(v), np.array([(0, 1, 2)]))


def hexagon_patch(delta: float = 0.0, direction: float = 0.3) -> Triangulation:
    """Six equilateral triangles around a center vertex (three-line patch).

    The center is moved by ``delta`` (in units of the edge length) along the
    unit vector at angle ``direction``; ``delta=0`` gives the Type II star.
    """
    ang = np.arange(6) * np.pi / 3
    outer = np.column_stack([np.cos(ang), np.sin(ang)])
    center = delta * np.array([math.cos(direction), math.sin(direction)])
    verts = np.vstack([center, outer])
    tris = [(0, 1 + i, 1 + (i + 1) % 6) for i in range(6)]
    return Triangulation(verts, np.array(tris))


def patch(name: str) -> Triangulation:
    """Named single-vertex patches used by the rank table."""
    if name == "crisscross":
        return generate_structured("crisscross", 1)
    if name == "threeline":
        return hexagon_patch()
    if name == "hct":
        return split(single_triangle(), "hct")
    if name in ("ms", "morgan_scott"):
        return split(single_triangle(), "morgan_scott")
    raise ValueError(f"unknown patch {name!r}")


# ----------------------------------------------------------------------------
# vertex stars and classification
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class VertexStar:
    """Ordered geometry around a vertex.

    Element ``T[i]`` lies between the directed edges ``t[i]`` (clockwise side)
    and ``t[i + 1]`` (counterclockwise side, cyclic for interior vertices), and
    ``theta[i]`` is its angle at the center.  ``y[j]`` is the far end of edge
    ``t[j]``.  ``h_cw[j]`` is the height of ``y[j]`` in the element on the
    clockwise side of edge ``j`` and ``h_ccw[j]`` in the element on the
    counterclockwise side (``nan`` where no such element exists).
    """

    vertex: int
    center: np.ndarray
    elements: tuple[int, ...]
    neighbors: tuple[int, ...]
    theta: np.ndarray
    t: np.ndarray
    n: np.ndarray
    lengths: np.ndarray
    h_cw: np.ndarray
    h_ccw: np.ndarray
    is_interior: bool

    @property
    def m(self) -> int:
        return len(self.elements)

    def element_edges(self, i: int) -> tuple[int, int]:
        """Indices (minus, plus) of the two star edges bounding element i."""
        return i, (i + 1) % len(self.t)

    def element_frame(self, i: int):
        """(t_-, t_+, n_-, n_+, h_-, h_+, theta) for element i."""
        jm, jp = self.element_edges(i)
        h_minus = self.h_ccw[jm]
        h_plus = self.h_cw[jp]
        return self.t[jm], self.t[jp], self.n[jm], self.n[jp], h_minus, h_plus, self.theta[i]


def build_star(mesh: Triangulation, v: int) -> VertexStar:
    tris = mesh.vertex_triangles[v]
    if not tris:
        raise MeshError(f"vertex {v} has no incident triangle")
    z = mesh.vertices[v]
    # for each incident triangle: (cw neighbor, ccw neighbor) in CCW order
    pairs = {}
    for it in tris:
        tri = mesh.triangles[it].tolist()
        k = tri.index(v)
        pairs[it] = (tri[(k + 1) % 3], tri[(k + 2) % 3])
    by_cw = {}
    for it, (a, _) in pairs.items():
        by_cw.setdefault(a, []).append(it)
    interior = not mesh.boundary_vertex_flags[v]
    if interior:
        nbrs = {a for a, _ in pairs.values()}
        ang = {a: math.atan2(*(mesh.vertices[a] - z)[::-1]) % (2 * math.pi) for a in nbrs}
        start = min(nbrs, key=lambda a: (ang[a], a))
    else:
        ccw_ends = {b for _, b in pairs.values()}
        starts = [a for a, _ in pairs.values() if a not in ccw_ends]
        if len(starts) != 1:
            raise MeshError(f"vertex {v} has a non-manifold star")
        start = starts[0]
    order, nb = [], [start]
    cur = start
    while len(order) < len(tris):
        nxt = by_cw.get(cur)
        if not nxt or len(nxt) != 1:
            raise MeshError(f"vertex {v} has a non-manifold star")
        it = nxt[0]
        order.append(it)
        cur = pairs[it][1]
        if interior and cur == start:
            break
        nb.append(cur)
    if interior:
        if cur != start or len(order) != len(tris):
            raise MeshError(f"vertex {v} has a non-manifold star")
    elif len(order) != len(tris):
        raise MeshError(f"vertex {v} has a non-manifold star")
    d = mesh.vertices[nb] - z
    lengths = np.linalg.norm(d, axis=1)
    t = d / lengths[:, None]
    ne = len(t)
    m = len(order)
    theta = np.empty(m)
    for i in range(m):
        a, b = t[i], t[(i + 1) % ne]
        theta[i] = math.atan2(a[0] * b[1] - a[1] * b[0], a @ b)
    h_cw = np.full(ne, np.nan)
    h_ccw = np.full(ne, np.nan)
    for j in range(ne):
        if interior or j >= 1:
            h_cw[j] = lengths[j] * math.sin(theta[(j - 1) % m])
        if interior or j < m:
            h_ccw[j] = lengths[j] * math.sin(theta[j % m])
    return VertexStar(
        vertex=v,
        center=z.copy(),
        elements=tuple(order),
        neighbors=tuple(nb),
        theta=theta,
        t=t,
        n=perp(t),
        lengths=lengths,
        h_cw=h_cw,
        h_ccw=h_ccw,
        is_interior=interior,
    )


def _require_interior(star: VertexStar):
    if not star.is_interior:
        raise ValueError("singularity metrics are defined only for interior vertices")


def theta_I(star: VertexStar) -> float:
    _require_interior(star)
    th = star.theta
    return float(np.max(np.abs(np.sin(th + np.roll(th, -1)))))


def theta_II(star: VertexStar) -> float:
    _require_interior(star)
    th = star.theta
    a, b, c = th, np.roll(th, -1), np.roll(th, -2)
    vals = np.minimum.reduce([np.abs(np.sin(a + b + c)), np.abs(np.sin(a + b)), np.abs(np.sin(b + c))])
    return float(np.max(vals))


@dataclass(frozen=True)
class VertexClass:
    kind: str
    theta_I: float
    theta_II: float
    m: int

    @property
    def is_singular(self) -> bool:
        return self.kind.startswith("Type")

    @property
    def is_type_I(self) -> bool:
        return self.kind == "TypeI"

    @property
    def is_type_II(self) -> bool:
        return self.kind.startswith("TypeII")


def classify_vertex(star: VertexStar, eps_sing: float = EPS_SING) -> VertexClass:
    if not star.is_interior:
        return VertexClass("Boundary", float("nan"), float("nan"), star.m)
    tI, tII = theta_I(star), theta_II(star)
    if tI <= eps_sing:
        kind = "TypeI"
    elif tII <= eps_sing:
        kind = _TYPE_II_BY_COUNT.get(star.m)
        if kind is None:
            raise MeshError(f"vertex {star.vertex}: Type II star with {star.m} elements")
    else:
        kind = "Regular"
    return VertexClass(kind, tI, tII, star.m)


def classify_mesh(mesh: Triangulation, eps_sing: float = EPS_SING) -> list[VertexClass]:
    return [classify_vertex(build_star(mesh, v), eps_sing) for v in range(mesh.n_vertices)]


def singular_census(mesh: Triangulation, eps_sing: float = EPS_SING) -> dict[str, list[int]]:
    out: dict[str, list[int]] = {"TypeI": [], "TypeII": []}
    for v, c in enumerate(classify_mesh(mesh, eps_sing)):
        if c.is_type_I:
            out["TypeI"].append(v)
        elif c.is_type_II:
            out["TypeII"].append(v)
    return out


def classification_report(mesh: Triangulation, eps_sing: float = EPS_SING) -> list[dict]:
    rows = []
    for v, c in enumerate(classify_mesh(mesh, eps_sing)):
        rows.append(
            {
                "vertex": v,
                "kind": c.kind,
                "theta_I": None if math.isnan(c.theta_I) else c.theta_I,
                "theta_II": None if math.isnan(c.theta_II) else c.theta_II,
                "m": c.m,
            }
        )
    return rows


# ----------------------------------------------------------------------------
# file I/O
# ----------------------------------------------------------------------------


def save_mesh(mesh: Triangulation, path) -> None:
    doc = {"vertices": mesh.vertices.tolist(), "triangles": mesh.triangles.tolist()}
    # json writes floats with repr, which round-trips exactly
    Path(path).write_text(json.dumps(doc))


def load_mesh(path) -> Triangulation:
    try:
        doc = json.loads(Path(path).read_text())
        verts = np.array(doc["vertices"], dtype=float)
        tris = np.array(doc["triangles"], dtype=np.int64)
    except (OSError, KeyError, TypeError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    if verts.ndim != 2 or verts.shape[1:] != (2,) or tris.ndim != 2 or tris.shape[1:] != (3,):
        raise MeshError(f"malformed mesh file {path}: bad array shapes")
    mesh = Triangulation(verts, tris)
    areas = mesh.signed_areas()
    if np.any(areas == 0):
        raise MeshError(f"degenerate triangle {int(np.flatnonzero(areas == 0)[0])}")
    neg = np.flatnonzero(areas < 0)
    if len(neg):
        log.warning("reoriented %d clockwise triangle(s): %s", len(neg), neg.tolist())
        fixed = tris.copy()
        fixed[neg] = fixed[neg][:, [0, 2, 1]]
        mesh = Triangulation(verts, fixed)
    mesh.validate()
    return mesh


def mesh_io(path, direction: str, mesh: Triangulation | None = None):
    if direction == "load":
        return load_mesh(path)
    if direction == "save":
        if mesh is None:
            raise ValueError("save needs a mesh")
        save_mesh(mesh, path)
        return mesh
    raise ValueError(f"direction must be 'load' or 'save', got {direction!r}")
