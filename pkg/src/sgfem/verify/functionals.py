"""Closed-form functionals on displacement spaces that vanish on div of stresses.

Conventions: the star of z lists elements T_0..T_{m-1} counterclockwise,
T_i between the edge directions t_i and t_{i+1}; n = t rotated clockwise by
90 degrees; gradients of vector fields are (grad q)_{ab} = d_a q_b.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..mesh import EPS_SING, VertexStar, build_star, classify_vertex, perp
from ..spaces import FESpace, vertex_jets


@dataclass
class CokernelFunctional:
    vertex: int
    kind: str  # TypeI_value | TypeI_gradient | TypeII_alternating
    base: np.ndarray  # coefficients over base DOFs of the displacement space
    reduced: np.ndarray  # coefficients over reduced DOFs


def j_matrix(star: VertexStar, i: int) -> np.ndarray:
    """J_{z,T_i} = t_+ n_-^T + t_- n_+^T for element i of the star."""
    tm, tp, nm, np_, *_ = star.element_frame(i)
    return np.outer(tp, nm) + np.outer(tm, np_)


class _VertexEvaluator:
    """Base-coefficient rows for q_T(z) and grad q_T(z) of a displacement space."""

    def __init__(self, space: FESpace):
        if space.kind != "displacement":
            raise ValueError("functionals act on displacement spaces")
        self.space = space
        sc = space.scalar
        self.jets = vertex_jets(sc.mesh, sc.k, 1)
        self.tris = sc.mesh.triangles.tolist()

    def _row(self):
        return np.zeros(self.space.base_dim)

    def value(self, t: int, v: int, comp: int) -> np.ndarray:
        sc = self.space.scalar
        j = self.tris[t].index(v)
        row = self._row()
        np.add.at(row, comp * sc.n_base + sc.local_to_global[t], self.jets[0][t, :, 0, j])
        return row

    def gradient(self, t: int, v: int, a: int, comp: int) -> np.ndarray:
        """Row for d_a q_comp at vertex v in element t."""
        sc = self.space.scalar
        j = self.tris[t].index(v)
        row = self._row()
        np.add.at(row, comp * sc.n_base + sc.local_to_global[t], self.jets[1][t, :, a, j])
        return row


def type_i_functionals(ev: _VertexEvaluator, star: VertexStar) -> list[tuple[str, np.ndarray]]:
    v = star.vertex
    out = []
    for comp in range(2):
        row = sum((-1) ** i * ev.value(t, v, comp) for i, t in enumerate(star.elements))
        out.append(("TypeI_value", row))
    row = 0.0
    for i, t in enumerate(star.elements):
        J = j_matrix(star, i)
        for a in range(2):
            for b in range(2):
                if J[a, b] != 0.0:
                    row = row + J[a, b] * ev.gradient(t, v, a, b)
    out.append(("TypeI_gradient", row))
    return out


def three_line_sectors(star: VertexStar, tol: float = 1e-8):
    """Six rays of the three lines through z and the element covering each sector.

    Returns (rays, normals, angles, elements): ray p and p + 1 bound sector p,
    ``angles[p]`` is its opening and ``elements[p]`` the star element
    containing it.  Missing edges of degenerate stars are filled in by
    continuing the existing lines through z.
    """
    dirs = []
    for t in star.t:
        if not any(abs(t[0] * d[1] - t[1] * d[0]) < tol for d in dirs):
            dirs.append(t)
    if len(dirs) != 3:
        raise ValueError(f"vertex {star.vertex}: edges lie on {len(dirs)} lines, expected 3")
    ang0 = math.atan2(star.t[0][1], star.t[0][0])
    rays = []
    for d in dirs:
        for s in (1.0, -1.0):
            rays.append(s * np.asarray(d))
    rel = [(math.atan2(r[1], r[0]) - ang0) % (2 * math.pi) for r in rays]
    rel = [0.0 if x > 2 * math.pi - tol else x for x in rel]
    order = np.argsort(rel)
    rays = [rays[i] for i in order]
    rel = [rel[i] for i in order]
    angles = np.diff(rel + [2 * math.pi])
    # star element angular ranges relative to t_0
    starts = np.concatenate([[0.0], np.cumsum(star.theta)[:-1]])
    ends = starts + star.theta
    elements = []
    for p in range(6):
        mid = rel[p] + angles[p] / 2
        hit = [i for i in range(star.m) if starts[i] - tol <= mid <= ends[i] + tol]
        elements.append(star.elements[hit[0]])
    rays = np.array(rays)
    return rays, perp(rays), angles, elements


def type_ii_functionals(ev: _VertexEvaluator, star: VertexStar) -> list[tuple[str, np.ndarray]]:
    v = star.vertex
    rays, normals, angles, elements = three_line_sectors(star)
    row = 0.0
    for p in range(6):
        nvec = normals[(p + 2) % 6]
        w = (-1) ** p * math.sin(angles[p])
        for comp in range(2):
            row = row + w * nvec[comp] * ev.value(elements[p], v, comp)
    return [("TypeII_alternating", row)]


def alternating_sine_row(ev: _VertexEvaluator, star: VertexStar) -> np.ndarray:
    """The alternating sine functional written with the star's own edges (m = 6)."""
    if star.m != 6:
        raise ValueError("the star form of the alternating functional needs six elements")
    v = star.vertex
    row = 0.0
    for i, t in enumerate(star.elements):
        nvec = star.n[(i + 2) % 6]
        w = (-1) ** i * math.sin(star.theta[i])
        for comp in range(2):
            row = row + w * nvec[comp] * ev.value(t, v, comp)
    return row


def functional_rows(q_space: FESpace, star: VertexStar, kind: str) -> list[np.ndarray]:
    """Base-coefficient rows of one functional family at a star (no classification)."""
    ev = _VertexEvaluator(q_space)
    if kind == "TypeI_value":
        return [r for kd, r in type_i_functionals(ev, star) if kd == kind]
    if kind == "TypeI_gradient":
        return [r for kd, r in type_i_functionals(ev, star) if kd == kind]
    if kind == "TypeII_alternating":
        try:
            return [type_ii_functionals(ev, star)[0][1]]
        except ValueError:
            return [alternating_sine_row(ev, star)]
    raise ValueError(f"unknown functional kind {kind!r}")


def predicted_functionals(q_space: FESpace, eps_sing: float = EPS_SING, drop_rtol: float = 1e-10):
    """Functionals predicted at every singular vertex, restricted to ``q_space``.

    Functionals that vanish identically on the constrained space (e.g. the
    value jump on vertex-continuous spaces) are dropped.
    """
    mesh = q_space.mesh
    ev = _VertexEvaluator(q_space)
    N = q_space.N
    out = []
    for v in mesh.interior_vertices():
        star = build_star(mesh, int(v))
        cls = classify_vertex(star, eps_sing)
        if cls.is_type_I:
            rows = type_i_functionals(ev, star)
        elif cls.is_type_II:
            rows = type_ii_functionals(ev, star)
        else:
            continue
        for kind, base in rows:
            red = N.T @ base
            if np.linalg.norm(red) > drop_rtol * np.linalg.norm(base):
                out.append(CokernelFunctional(int(v), kind, base, red))
    return out
