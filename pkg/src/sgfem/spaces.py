"""Constrained piecewise-polynomial spaces for stresses and displacements.

A space is a base space of piecewise polynomials (globally C0 for stresses,
elementwise discontinuous for displacements) plus vertex-jet matching
constraints.  Members are written as ``base = N @ reduced``.  The base
functions are Bernstein polynomials: the jet of order ``r`` at a vertex only
involves coefficients near that vertex, so the constraints split into small
per-vertex blocks whose null spaces are computed independently.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elements.basis import REF_VERTICES, multi_indices, physical_derivatives, tabulate
from .elements.quadrature import quadrature_rule
from .mesh import Triangulation, build_star

log = logging.getLogger(__name__)

RANK_TOL = 1e-9

STRESS_COMPONENTS = ((0, 0), (0, 1), (1, 1))


class SpaceError(ValueError):
    """Invalid space parameters."""


@dataclass(eq=False)
class ScalarSpace:
    """One scalar component of a constrained space.

    Attributes
    ----------
    local_to_global : (nt, nloc) base DOF of each local Bernstein function
    N : sparse (n_base, dim) map from reduced to base coordinates
    """

    mesh: Triangulation
    k: int
    continuous: bool
    smoothness: int
    local_to_global: np.ndarray
    n_base: int
    N: sp.csr_matrix
    n_constraints: int
    rank_constraints: int
    dof_keys: list = field(repr=False)
    blocks: list = field(repr=False)

    @property
    def dim(self) -> int:
        return self.N.shape[1]

    @property
    def n_local(self) -> int:
        return self.local_to_global.shape[1]


def _base_numbering(mesh: Triangulation, k: int, continuous: bool):
    idx = multi_indices(k)
    nt = mesh.n_triangles
    if not continuous:
        l2g = np.arange(nt * len(idx), dtype=np.int64).reshape(nt, len(idx))
        keys = [("t", t, al) for t in range(nt) for al in idx]
        return l2g, keys
    tris = mesh.triangles.tolist()
    keymap: dict = {}
    keys: list = []
    for v in range(mesh.n_vertices):
        keymap[("v", v)] = len(keys)
        keys.append(("v", v))
    edge_keys, int_keys = [], []
    l2g = np.empty((nt, len(idx)), dtype=np.int64)
    pending = []
    for t, tri in enumerate(tris):
        for j, al in enumerate(idx):
            nz = [i for i in range(3) if al[i] > 0]
            if len(nz) == 1:
                key = ("v", tri[nz[0]])
            elif len(nz) == 2:
                a, b = nz
                ga, gb = tri[a], tri[b]
                key = ("e", ga, gb, al[a]) if ga < gb else ("e", gb, ga, al[b])
            else:
                key = ("i", t, al)
            pending.append((t, j, key))
            if key not in keymap:
                keymap[key] = None
                (edge_keys if key[0] == "e" else int_keys if key[0] == "i" else []).append(key)
    for key in edge_keys + int_keys:
        keymap[key] = len(keys)
        keys.append(key)
    for t, j, key in pending:
        l2g[t, j] = keymap[key]
    return l2g, keys


class _UnionFind:
    def __init__(self, n):
        self.p = list(range(n))

    def find(self, i):
        while self.p[i] != i:
            self.p[i] = self.p[self.p[i]]
            i = self.p[i]
        return i

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.p[max(ra, rb)] = min(ra, rb)


def vertex_jets(mesh: Triangulation, k: int, order: int):
    """Physical partials of the Bernstein basis at each local vertex.

    Returns a list over derivative order ``d`` of arrays (nt, nb, d + 1, 3).
    """
    ref = tabulate("bernstein", k, REF_VERTICES, order)
    return physical_derivatives(ref, mesh.inverse_jacobians)


def null_space_qr(C: np.ndarray, tol: float = RANK_TOL):
    """Orthonormal null space of C via column-pivoted QR of C^T.

    Returns (Z, rank) with the rank threshold ``tol * max row norm``.
    """
    if C.shape[0] == 0:
        return np.eye(C.shape[1]), 0
    Q, R, _ = sla.qr(C.T, pivoting=True, mode="full")
    thresh = tol * np.max(np.linalg.norm(C, axis=1))
    diag = np.abs(np.diag(R)) if R.size else np.zeros(0)
    rank = int(np.sum(diag > thresh))
    return Q[:, rank:], rank


def build_scalar_space(mesh: Triangulation, k: int, continuous: bool, smoothness: int) -> ScalarSpace:
    """Scalar constrained space.

    ``smoothness`` is the highest derivative order matched at vertices
    (-1 for none; for continuous spaces, order 0 is implied).
    """
    l2g, keys = _base_numbering(mesh, k, continuous)
    n_base = len(keys)
    lo = 1 if continuous else 0
    if smoothness < lo:
        N = sp.identity(n_base, format="csr")
        return ScalarSpace(mesh, k, continuous, smoothness, l2g, n_base, N, 0, 0, keys, [])

    idx = multi_indices(k)
    jets = vertex_jets(mesh, k, smoothness)
    tris = mesh.triangles.tolist()
    # disk of local vertex j: functions whose jet of order <= smoothness can be nonzero there
    disks = [[i for i, al in enumerate(idx) if al[j] >= k - smoothness] for j in range(3)]

    rows_by_vertex = []
    dofs_by_vertex = []
    for v in range(mesh.n_vertices):
        if not mesh.vertex_triangles[v]:
            rows_by_vertex.append([])
            dofs_by_vertex.append(set())
            continue
        star = build_star(mesh, v)
        h = float(np.mean(star.lengths))
        els = list(star.elements)
        npairs = len(els) if star.is_interior else len(els) - 1
        local = [(t, tris[t].index(v)) for t in els]
        rows = []
        for p in range(npairs):
            (ta, ja), (tb, jb) = local[p], local[(p + 1) % len(els)]
            for d in range(lo, smoothness + 1):
                for comp in range(d + 1):
                    row: dict[int, float] = {}
                    for t, j, sgn in ((ta, ja, 1.0), (tb, jb, -1.0)):
                        for i in disks[j]:
                            g = int(l2g[t, i])
                            row[g] = row.get(g, 0.0) + sgn * jets[d][t, i, comp, j] * h**d
                    rows.append(row)
        rows_by_vertex.append(rows)
        dofs_by_vertex.append({int(l2g[t, i]) for t, j in local for i in disks[j]})

    # merge vertices whose disks share DOFs
    uf = _UnionFind(mesh.n_vertices)
    owner: dict[int, int] = {}
    for v, dofs in enumerate(dofs_by_vertex):
        for g in dofs:
            if g in owner:
                uf.union(owner[g], v)
            else:
                owner[g] = v
    groups: dict[int, list[int]] = {}
    for v in range(mesh.n_vertices):
        if rows_by_vertex[v]:
            groups.setdefault(uf.find(v), []).append(v)

    constrained = np.zeros(n_base, dtype=bool)
    blocks = []
    n_rows = rank_total = 0
    for root in sorted(groups):
        verts = groups[root]
        dofs = sorted(set().union(*(dofs_by_vertex[v] for v in verts)))
        col = {g: c for c, g in enumerate(dofs)}
        rows = [r for v in verts for r in rows_by_vertex[v]]
        C = np.zeros((len(rows), len(dofs)))
        for ir, r in enumerate(rows):
            for g, val in r.items():
                C[ir, col[g]] += val
        Z, rank = null_space_qr(C)
        n_rows += len(rows)
        rank_total += rank
        constrained[dofs] = True
        blocks.append((np.array(dofs, dtype=np.int64), Z, verts))

    free = np.flatnonzero(~constrained)
    r_idx = [free]
    c_idx = [np.arange(len(free))]
    vals = [np.ones(len(free))]
    ncol = len(free)
    for dofs, Z, _ in blocks:
        nz = Z.shape[1]
        rr, cc = np.meshgrid(dofs, np.arange(ncol, ncol + nz), indexing="ij")
        r_idx.append(rr.ravel())
        c_idx.append(cc.ravel())
        vals.append(Z.ravel())
        ncol += nz
    N = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))), shape=(n_base, ncol)
    )
    N.eliminate_zeros()
    return ScalarSpace(mesh, k, continuous, smoothness, l2g, n_base, N, n_rows, rank_total, keys, blocks)


@dataclass(eq=False)
class FESpace:
    """Vector- or tensor-valued space built from identical scalar components.

    Stress spaces have components (s11, s12, s22); displacement spaces (u1, u2).
    Reduced and base vectors are component-blocked.
    """

    kind: str
    degree: int
    r_or_s: int
    scalar: ScalarSpace

    @property
    def mesh(self) -> Triangulation:
        return self.scalar.mesh

    @property
    def ncomp(self) -> int:
        return 3 if self.kind == "stress" else 2

    @property
    def base_dim(self) -> int:
        return self.ncomp * self.scalar.n_base

    @property
    def dim(self) -> int:
        return self.ncomp * self.scalar.dim

    @property
    def n_constraints(self) -> int:
        return self.ncomp * self.scalar.n_constraints

    @property
    def rank_constraints(self) -> int:
        return self.ncomp * self.scalar.rank_constraints

    @cached_property
    def N(self) -> sp.csr_matrix:
        return sp.block_diag([self.scalar.N] * self.ncomp, format="csr")

    def to_base(self, coeffs) -> np.ndarray:
        """Reduced vector -> base coefficients, shape (ncomp, n_base)."""
        c = np.asarray(coeffs, dtype=float).reshape(self.ncomp, self.scalar.dim)
        return np.stack([self.scalar.N @ ci for ci in c])

    def dof_metadata(self) -> list[dict]:
        out = []
        for comp in range(self.ncomp):
            for key in self.scalar.dof_keys:
                loc = {"v": "vertex", "e": "edge", "i": "interior", "t": "element"}[key[0]]
                out.append({"component": comp, "location": loc, "key": key[1:]})
        return out

    def report(self) -> dict:
        return {
            "kind": self.kind,
            "k": self.degree,
            "r_or_s": self.r_or_s,
            "base_dim": self.base_dim,
            "n_constraints": self.n_constraints,
            "rank_constraints": self.rank_constraints,
            "dim": self.dim,
        }


def build_sigma(mesh: Triangulation, k: int, r: int) -> FESpace:
    """Stress space: C0 P_k in each of (s11, s12, s22) with C^r vertex jets."""
    if r not in (0, 1, 2):
        raise SpaceError(f"r must be 0, 1 or 2, got {r!r}")
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= 8:
        raise SpaceError(f"stress degree must be in [1, 8], got {k!r}")
    if k < r + 2:
        raise SpaceError(f"need k >= r + 2, got k={k}, r={r}")
    mesh.validate()
    return FESpace("stress", int(k), int(r), build_scalar_space(mesh, int(k), True, int(r)))


def build_q(mesh: Triangulation, k_minus_1: int, s: int) -> FESpace:
    """Displacement space: discontinuous P_{k-1} pairs with C^s vertex jets."""
    if s not in (-1, 0, 1):
        raise SpaceError(f"s must be -1, 0 or 1, got {s!r}")
    if not isinstance(k_minus_1, (int, np.integer)) or not 0 <= k_minus_1 <= 7:
        raise SpaceError(f"displacement degree must be in [0, 7], got {k_minus_1!r}")
    if k_minus_1 < s + 1:
        raise SpaceError(f"need k-1 >= s + 1, got k-1={k_minus_1}, s={s}")
    mesh.validate()
    return FESpace("displacement", int(k_minus_1), int(s), build_scalar_space(mesh, int(k_minus_1), False, int(s)))


PAIRS = {"lagrange": (0, -1), "hermite": (1, 0), "c2": (2, 1)}


def build_pair(mesh: Triangulation, pair: str, k: int) -> tuple[FESpace, FESpace]:
    if pair not in PAIRS:
        raise SpaceError(f"unknown pair {pair!r}; expected one of {sorted(PAIRS)}")
    r, s = PAIRS[pair]
    return build_sigma(mesh, k, r), build_q(mesh, k - 1, s)


# ----------------------------------------------------------------------------
# scalar element matrices and field evaluation
# ----------------------------------------------------------------------------


def scalar_tabulation(space: ScalarSpace, xy_ref, order: int) -> list[np.ndarray]:
    """Physical partials of local basis functions, list of (nt, nloc, d+1, npts)."""
    ref = tabulate("bernstein", space.k, xy_ref, order)
    return physical_derivatives(ref, space.mesh.inverse_jacobians)


def _assemble(space_r: ScalarSpace, space_c: ScalarSpace, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(space_r.local_to_global[:, :, None], space_c.n_local, axis=2)
    cols = np.repeat(space_c.local_to_global[:, None, :], space_r.n_local, axis=1)
    M = sp.coo_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(space_r.n_base, space_c.n_base))
    return M.tocsr()


def scalar_mass(space: ScalarSpace, degree: int | None = None) -> sp.csr_matrix:
    q = quadrature_rule(degree or 2 * space.k)
    phi = tabulate("bernstein", space.k, q.xy, 0)[0][:, 0, :]
    ref = np.einsum("iq,jq,q->ij", phi, phi, q.weights)
    local = np.abs(space.mesh.det_jacobians)[:, None, None] * ref[None]
    return _assemble(space, space, local)


def scalar_stiffness(space: ScalarSpace, degree: int | None = None) -> sp.csr_matrix:
    q = quadrature_rule(max(1, degree or 2 * space.k - 2))
    g = tabulate("bernstein", space.k, q.xy, 1)[1]  # (nb, 2, nq)
    R = np.einsum("iaq,jbq,q->abij", g, g, q.weights)
    Jinv = space.mesh.inverse_jacobians
    G = np.einsum("eac,ebc->eab", Jinv, Jinv)
    local = np.abs(space.mesh.det_jacobians)[:, None, None] * np.einsum("eab,abij->eij", G, R)
    return _assemble(space, space, local)


def scalar_derivative_pairing(test: ScalarSpace, trial: ScalarSpace, degree: int | None = None):
    """(Dx, Dy) with D_c[a, i] = int d_c(trial_i) test_a."""
    q = quadrature_rule(max(1, degree or test.k + trial.k - 1))
    psi = tabulate("bernstein", test.k, q.xy, 0)[0][:, 0, :]
    g = tabulate("bernstein", trial.k, q.xy, 1)[1]
    P = np.einsum("aq,ibq,q->bai", psi, g, q.weights)  # reference direction b
    Jinv = test.mesh.inverse_jacobians
    det = np.abs(test.mesh.det_jacobians)
    out = []
    for c in range(2):
        local = det[:, None, None] * np.einsum("eb,bai->eai", Jinv[:, :, c], P)
        out.append(_assemble(test, trial, local))
    return tuple(out)


def scalar_load(space: ScalarSpace, values: np.ndarray, q) -> np.ndarray:
    """int f phi_i for f given at mapped quadrature points, values (nt, nq)."""
    phi = tabulate("bernstein", space.k, q.xy, 0)[0][:, 0, :]
    local = np.abs(space.mesh.det_jacobians)[:, None] * np.einsum("eq,iq,q->ei", values, phi, q.weights)
    return np.bincount(space.local_to_global.ravel(), weights=local.ravel(), minlength=space.n_base)


# ----------------------------------------------------------------------------
# discrete fields
# ----------------------------------------------------------------------------


def components_of(space: FESpace, value: np.ndarray) -> np.ndarray:
    """Stack field values into component order, last axis = component."""
    value = np.asarray(value, dtype=float)
    if space.kind == "stress":
        return np.stack([value[..., i, j] for i, j in STRESS_COMPONENTS], axis=-1)
    return value


def assemble_components(space: FESpace, comps: np.ndarray, axis: int = -1) -> np.ndarray:
    """Inverse of ``components_of`` (component axis -> matrix/vector)."""
    comps = np.moveaxis(np.asarray(comps), axis, -1)
    if space.kind != "stress":
        return comps
    out = np.empty(comps.shape[:-1] + (2, 2))
    out[..., 0, 0] = comps[..., 0]
    out[..., 0, 1] = out[..., 1, 0] = comps[..., 1]
    out[..., 1, 1] = comps[..., 2]
    return out


@dataclass(eq=False)
class DiscreteField:
    space: FESpace
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.space.dim,):
            raise ValueError(f"expected {self.space.dim} reduced coefficients, got {self.coeffs.shape}")

    @cached_property
    def base(self) -> np.ndarray:
        return self.space.to_base(self.coeffs)

    def local_coefficients(self) -> np.ndarray:
        """(nt, ncomp, nloc) Bernstein coefficients per element."""
        return np.transpose(self.base[:, self.space.scalar.local_to_global], (1, 0, 2))

    def tabulate(self, xy_ref, order: int = 1) -> list[np.ndarray]:
        """Physical partials at mapped reference points: list of (nt, ncomp, d+1, npts)."""
        tab = scalar_tabulation(self.space.scalar, xy_ref, order)
        lc = self.local_coefficients()
        return [np.einsum("eci,eidq->ecdq", lc, t) for t in tab]


def locate_reference(mesh: Triangulation, element: int, xy, tol: float = 1e-12) -> np.ndarray:
    """Reference coordinates of a physical point, checking containment."""
    p0 = mesh.vertices[mesh.triangles[element, 0]]
    ref = mesh.inverse_jacobians[element] @ (np.asarray(xy, dtype=float) - p0)
    if ref.min() < -tol or ref.sum() > 1 + tol:
        raise ValueError(f"point {tuple(xy)} lies outside element {element}")
    return ref


def evaluate(field_: DiscreteField, element: int, point, order: int = 1):
    """Value (and first partials) of a field at a physical point of an element.

    Returns ``value`` shaped (2, 2) for stresses, (2,) for displacements and,
    if ``order >= 1``, ``grad`` with ``grad[a, ...] = d_a value``.
    """
    mesh = field_.space.mesh
    ref = locate_reference(mesh, element, point)
    sc = field_.space.scalar
    tab = physical_derivatives(tabulate("bernstein", sc.k, ref[None], order), mesh.inverse_jacobians[[element]])
    lc = field_.local_coefficients()[element]
    val = assemble_components(field_.space, lc @ tab[0][0, :, 0, 0])
    if order == 0:
        return val
    g = np.einsum("ci,id->dc", lc, tab[1][0, :, :, 0])
    grad = np.stack([assemble_components(field_.space, g[a]) for a in range(2)])
    return val, grad


def reduced_mass(space: FESpace, degree: int | None = None) -> sp.csr_matrix:
    M = scalar_mass(space.scalar, degree)
    Mr = (space.scalar.N.T @ M @ space.scalar.N).tocsr()
    return sp.block_diag([Mr] * space.ncomp, format="csr")


def project(fn, space: FESpace, degree: int | None = None) -> DiscreteField:
    """L2 projection of ``fn(x, y)`` (matrix- or vector-valued) onto ``space``."""
    sc = space.scalar
    q = quadrature_rule(min(20, degree or 2 * sc.k + 4))
    pts = space.mesh.map_points(q.xy)
    vals = components_of(space, fn(pts[..., 0], pts[..., 1]))
    M = scalar_mass(sc, 2 * sc.k)
    Mr = (sc.N.T @ M @ sc.N).tocsc()
    lu = spla.splu(Mr)
    out = []
    for c in range(space.ncomp):
        rhs = sc.N.T @ scalar_load(sc, vals[..., c], q)
        out.append(lu.solve(rhs))
    return DiscreteField(space, np.concatenate(out))
