import json
import math

import numpy as np
import pytest
import scipy.sparse as sp

from sgfem.elements.basis import REF_VERTICES
from sgfem.elements.quadrature import quadrature_rule
from sgfem.mesh import generate_structured, patch, single_triangle, split
from sgfem.spaces import (
    DiscreteField,
    SpaceError,
    build_pair,
    build_q,
    build_sigma,
    evaluate,
    project,
)


def random_member(space, seed=0):
    return DiscreteField(space, np.random.default_rng(seed).standard_normal(space.dim))


def constraint_matrix(scalar):
    """Global constraint matrix assembled from the per-vertex blocks."""
    rows = []
    for dofs, Z, verts in scalar.blocks:
        # the null space is orthonormal, so its complement spans the constraint rows
        Q = np.linalg.qr(np.column_stack([Z, np.eye(len(dofs))]))[0][:, Z.shape[1]:len(dofs)]
        C = np.zeros((Q.shape[1], scalar.n_base))
        C[:, dofs] = Q.T
        rows.append(C)
    return np.vstack(rows) if rows else np.zeros((0, scalar.n_base))


# ----------------------------------------------------------------------------
# dimensions
# ----------------------------------------------------------------------------


def test_single_triangle_k4_r0():
    assert build_sigma(single_triangle(), 4, 0).dim == 45


def test_crisscross_k7_r2():
    m = patch("crisscross")
    assert (m.n_triangles, m.n_edges, m.n_vertices) == (4, 8, 5)
    assert build_sigma(m, 7, 2).dim == 36 * 4 + 6 * 8 + 18 * 5 == 282


def test_crisscross_k7_r1_between():
    m = patch("crisscross")
    d = [build_sigma(m, 7, r).dim for r in (0, 1, 2)]
    assert d[2] < d[1] < d[0]
    assert d[1] == 321  # regression value


def test_q_k3_discontinuous():
    m = generate_structured("diagonal", 3)
    assert build_q(m, 3, -1).dim == 20 * m.n_triangles


def test_q_single_triangle_k7_s1():
    assert build_q(single_triangle(), 6, 1).dim == 56 == (7 * 8 - 18) * 1 + 6 * 3


def test_q_crisscross_k7_s1():
    assert build_q(patch("crisscross"), 6, 1).dim == 38 * 4 + 6 * 5 == 182


@pytest.mark.parametrize("kind", ["diagonal", "crisscross"])
@pytest.mark.parametrize("k", [7, 8])
def test_sigma_r2_formula(kind, k):
    m = generate_structured(kind, 2)
    formula = (3 * (k + 2) * (k + 1) // 2 - 9 * (k + 1)) * m.n_triangles + (3 * k - 15) * m.n_edges + 18 * m.n_vertices
    assert build_sigma(m, k, 2).dim == formula


def test_space_report():
    s = build_sigma(patch("crisscross"), 7, 2)
    rep = s.report()
    assert rep["dim"] == 282 and rep["base_dim"] == 3 * (5 + 8 * 6 + 4 * 15)
    assert rep["base_dim"] - rep["rank_constraints"] == rep["dim"]
    json.dumps(rep)


def test_dof_metadata_length():
    s = build_sigma(single_triangle(), 4, 0)
    meta = s.dof_metadata()
    assert len(meta) == s.base_dim
    assert {m["location"] for m in meta} == {"vertex", "edge", "interior"}


@pytest.mark.parametrize(
    "build, args",
    [
        (build_sigma, (3, 2)),
        (build_sigma, (9, 0)),
        (build_sigma, (4, 3)),
        (build_q, (0, 1)),
        (build_q, (8, -1)),
        (build_q, (3, 2)),
    ],
)
def test_invalid_parameters(build, args):
    with pytest.raises(SpaceError):
        build(single_triangle(), *args)


def test_unknown_pair():
    with pytest.raises(SpaceError):
        build_pair(single_triangle(), "raviart_thomas", 4)


# ----------------------------------------------------------------------------
# nullspace map
# ----------------------------------------------------------------------------


@pytest.mark.parametrize("r", [1, 2])
def test_constraints_annihilated(r):
    s = build_sigma(patch("crisscross"), 7, r).scalar
    dense_blocks = [(dofs, Z) for dofs, Z, _ in s.blocks]
    for dofs, Z in dense_blocks:
        assert np.allclose(Z.T @ Z, np.eye(Z.shape[1]), atol=1e-12)
    C = constraint_matrix(s)
    assert np.abs(C @ s.N.toarray()).max() <= 1e-10 * max(1.0, np.abs(C).max())


@pytest.mark.parametrize("r", [1, 2])
def test_nullspace_map_full_rank(r):
    N = build_sigma(patch("threeline"), 7, r).scalar.N.toarray()
    ev = np.linalg.eigvalsh(N.T @ N)
    assert ev.min() > 1e-8 * ev.max()


def test_blocks_are_vertex_local():
    s = build_sigma(generate_structured("diagonal", 2), 7, 2).scalar
    seen = set()
    for dofs, _, verts in s.blocks:
        assert not seen & set(dofs.tolist())
        seen |= set(dofs.tolist())
        assert len(verts) == 1
    # a corner touching a single triangle has nothing to match
    shared = [v for v in range(s.mesh.n_vertices) if len(s.mesh.vertex_triangles[v]) > 1]
    assert sorted(v for *_, verts in s.blocks for v in verts) == shared


# ----------------------------------------------------------------------------
# members
# ----------------------------------------------------------------------------


def interior_edges(mesh):
    for a, b in mesh.edges.tolist():
        tris = mesh.edge_triangles(a, b)
        if len(tris) == 2:
            yield a, b, tris


@pytest.mark.parametrize("r", [0, 1, 2])
def test_sigma_members_continuous(r):
    mesh = split(single_triangle(), "ms")
    space = build_sigma(mesh, 7, r)
    ts = np.linspace(0.05, 0.95, 10)
    for seed in range(20):
        fld = random_member(space, seed)
        scale = np.abs(fld.base).max()
        for a, b, (t1, t2) in interior_edges(mesh):
            for t in ts:
                x = (1 - t) * mesh.vertices[a] + t * mesh.vertices[b]
                jump = evaluate(fld, t1, x, 0) - evaluate(fld, t2, x, 0)
                assert np.abs(jump).max() <= 1e-10 * scale


def jets_by_vertex(fld, order):
    """{vertex: [(element, jet array (ncomp, d+1) per d)]}."""
    tab = fld.tabulate(REF_VERTICES, order)
    out = {}
    for e, tri in enumerate(fld.space.mesh.triangles.tolist()):
        for j, v in enumerate(tri):
            out.setdefault(v, []).append([tab[d][e, :, :, j] for d in range(order + 1)])
    return out


@pytest.mark.parametrize("space_fn, order", [
    (lambda m: build_sigma(m, 7, 1), 1),
    (lambda m: build_sigma(m, 7, 2), 2),
    (lambda m: build_q(m, 6, 0), 0),
    (lambda m: build_q(m, 6, 1), 1),
])
def test_vertex_jets_agree(space_fn, order):
    mesh = patch("crisscross")
    space = space_fn(mesh)
    for seed in range(20):
        fld = random_member(space, seed)
        scale = np.abs(fld.base).max()
        for v, jets in jets_by_vertex(fld, order).items():
            for other in jets[1:]:
                for d in range(order + 1):
                    assert np.abs(other[d] - jets[0][d]).max() <= 1e-9 * scale


def test_q_discontinuous_members_jump():
    mesh = patch("crisscross")
    fld = random_member(build_q(mesh, 3, -1), 1)
    jets = jets_by_vertex(fld, 0)[4]
    assert np.abs(jets[1][0] - jets[0][0]).max() > 1e-3


def _contains(small, large):
    """Residual of expressing 20 random members of ``small`` in ``large``."""
    Nl = large.N.toarray()
    worst = 0.0
    for seed in range(20):
        fld = random_member(small, seed)
        b = np.concatenate(list(fld.base))
        c, *_ = np.linalg.lstsq(Nl, b, rcond=None)
        worst = max(worst, np.linalg.norm(Nl @ c - b) / np.linalg.norm(b))
    return worst


def test_inclusion_chain_sigma():
    m = patch("threeline")
    s0, s1, s2 = (build_sigma(m, 7, r) for r in (0, 1, 2))
    assert _contains(s2, s1) < 1e-10
    assert _contains(s1, s0) < 1e-10
    assert _contains(s0, s2) > 1e-3


def test_inclusion_chain_q():
    m = patch("threeline")
    q1, q0, qm = (build_q(m, 6, s) for s in (1, 0, -1))
    assert _contains(q1, q0) < 1e-10
    assert _contains(q0, qm) < 1e-10
    assert _contains(qm, q1) > 1e-3


# ----------------------------------------------------------------------------
# projection and evaluation
# ----------------------------------------------------------------------------


def test_project_member_recovers_coefficients():
    mesh = split(single_triangle(), "hct")
    space = build_sigma(mesh, 5, 1)
    fld = random_member(space, 3)

    def fn(x, y):
        out = np.empty(x.shape + (2, 2))
        pts = np.stack([x, y], axis=-1)
        for idx in np.ndindex(x.shape):
            p = pts[idx]
            e = _find_element(mesh, p)
            out[idx] = evaluate(fld, e, p, 0)
        return out

    proj = project(fn, space)
    assert np.abs(proj.coeffs - fld.coeffs).max() <= 1e-10 * np.abs(fld.coeffs).max()


def _find_element(mesh, p):
    for e in range(mesh.n_triangles):
        p0 = mesh.vertices[mesh.triangles[e, 0]]
        ref = mesh.inverse_jacobians[e] @ (p - p0)
        if ref.min() > -1e-12 and ref.sum() < 1 + 1e-12:
            return e
    raise AssertionError("point outside mesh")


def test_project_linear_exact():
    mesh = generate_structured("diagonal", 2)
    space = build_sigma(mesh, 4, 0)

    def fn(x, y):
        out = np.zeros(x.shape + (2, 2))
        out[..., 0, 0] = x + y
        out[..., 0, 1] = out[..., 1, 0] = 2 * x - y
        out[..., 1, 1] = -x
        return out

    fld = project(fn, space)
    for e, p in [(0, [0.2, 0.1]), (5, [0.7, 0.6]), (3, [0.5, 0.5])]:
        p = np.asarray(p, float)
        e = _find_element(mesh, p)
        v = evaluate(fld, e, p, 0)
        assert np.abs(v - fn(np.array(p[0]), np.array(p[1]))).max() < 1e-12


def _l2_error(fld, fn):
    mesh = fld.space.mesh
    q = quadrature_rule(16)
    pts = mesh.map_points(q.xy)
    val = fld.tabulate(q.xy, 0)[0][:, :, 0, :]  # (nt, ncomp, nq)
    ex = np.moveaxis(fn(pts[..., 0], pts[..., 1]), -1, 1)
    w = np.abs(mesh.det_jacobians)[:, None] * q.weights
    return math.sqrt(float(np.sum((val - ex) ** 2 * w[:, None, :])))


def test_project_sine_rate():
    def fn(x, y):
        return np.stack([np.sin(math.pi * x), np.cos(math.pi * y)], axis=-1)

    errs = [_l2_error(project(fn, build_q(generate_structured("diagonal", n), 3, -1)), fn) for n in (2, 4, 8)]
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(2)]
    assert orders[-1] > 3.7  # k + 1 = 4


def test_evaluate_zero_and_constant():
    mesh = generate_structured("crisscross", 1)
    space = build_sigma(mesh, 4, 0)
    p = np.array([0.3, 0.2])
    e = _find_element(mesh, p)
    zero = DiscreteField(space, np.zeros(space.dim))
    v, g = evaluate(zero, e, p)
    assert not v.any() and not g.any()

    def const(x, y):
        out = np.zeros(x.shape + (2, 2))
        out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = 1.0, 2.0, 2.0, -3.0
        return out

    v, g = evaluate(project(const, space), e, p)
    assert np.allclose(v, [[1.0, 2.0], [2.0, -3.0]], atol=1e-12)
    assert np.abs(g).max() < 1e-10


def test_evaluate_gradient_against_differences():
    mesh = split(single_triangle(), "ms")
    fld = random_member(build_sigma(mesh, 6, 1), 11)
    p = mesh.vertices[mesh.triangles[0]].mean(axis=0)
    v, g = evaluate(fld, 0, p)
    h = 1e-6
    for a in range(2):
        dp = np.zeros(2)
        dp[a] = h
        fd = (evaluate(fld, 0, p + dp, 0) - evaluate(fld, 0, p - dp, 0)) / (2 * h)
        assert np.abs(fd - g[a]).max() <= 1e-6 * max(1.0, np.abs(g).max())


def test_evaluate_outside_element():
    fld = random_member(build_sigma(single_triangle(), 4, 0))
    with pytest.raises(ValueError):
        evaluate(fld, 0, np.array([5.0, 5.0]))


def test_field_coefficient_length():
    space = build_q(single_triangle(), 3, -1)
    with pytest.raises(ValueError):
        DiscreteField(space, np.zeros(space.dim + 1))


def test_pair_spaces():
    m = patch("crisscross")
    for pair, (r, s) in {"lagrange": (0, -1), "hermite": (1, 0), "c2": (2, 1)}.items():
        S, Q = build_pair(m, pair, 7)
        assert (S.r_or_s, Q.r_or_s, S.degree, Q.degree) == (r, s, 7, 6)
        assert sp.issparse(S.N)
