import json
import logging
import math

import numpy as np
import pytest

from sgfem.mesh import (
    MeshError,
    Triangulation,
    build_star,
    classification_report,
    classify_mesh,
    classify_vertex,
    generate_structured,
    hexagon_patch,
    load_mesh,
    mesh_io,
    patch,
    save_mesh,
    single_triangle,
    singular_census,
    split,
    theta_I,
    theta_II,
)


def rotation(a):
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


# ----------------------------------------------------------------------------
# generators and splits
# ----------------------------------------------------------------------------


def test_diagonal_counts():
    m = generate_structured("diagonal", 2)
    assert (m.n_triangles, m.n_vertices, len(m.interior_vertices())) == (8, 9, 1)
    m.validate()


def test_crisscross_counts():
    m = generate_structured("crisscross", 1)
    assert (m.n_triangles, m.n_vertices) == (4, 5)
    assert list(m.interior_vertices()) == [4]


def test_diagonal4_interior_vertices_are_type_ii():
    m = generate_structured("diagonal", 4)
    kinds = [c.kind for v, c in enumerate(classify_mesh(m)) if not m.boundary_vertex_flags[v]]
    assert kinds == ["TypeII-nondegenerate"] * 9


def test_generate_rejects_bad_input():
    with pytest.raises(ValueError):
        generate_structured("diagonal", 0)
    with pytest.raises(ValueError):
        generate_structured("hexagonal", 2)


def test_morgan_scott_single_triangle():
    m = split(single_triangle(), "morgan_scott", 0.25)
    assert (m.n_triangles, m.n_vertices, len(m.interior_vertices())) == (7, 6, 3)
    m.validate()


def test_morgan_scott_children_follow_construction():
    base = single_triangle()
    r = 0.3
    m = split(base, "ms", r)
    A, B, C = base.vertices
    a = (1 - r) * (B + C) / 2 + r * A
    assert np.allclose(m.vertices[3], a)
    assert m.triangles[0].tolist() == [3, 4, 5]


@pytest.mark.parametrize("r", [0.0, 1.0, -0.1])
def test_morgan_scott_rejects_r(r):
    with pytest.raises(ValueError):
        split(single_triangle(), "ms", r)


def test_hct_barycenter_is_type_ii_3():
    m = split(single_triangle(), "hct")
    assert m.n_triangles == 3
    assert classify_vertex(build_star(m, 3)).kind == "TypeII-3"


def test_morgan_scott_removes_singularities():
    m = split(generate_structured("diagonal", 4), "ms", 0.25)
    cen = singular_census(m)
    assert cen == {"TypeI": [], "TypeII": []}


@pytest.mark.parametrize("r", [0.2, 0.23, 0.27, 0.3])
def test_morgan_scott_sweep_of_r(r):
    m = split(generate_structured("crisscross", 2), "ms", r)
    assert singular_census(m) == {"TypeI": [], "TypeII": []}


@pytest.mark.parametrize("kind", ["ms", "hct"])
def test_split_preserves_parent_areas(kind):
    base = generate_structured("diagonal", 3).transformed(rotation(0.4) * 1.7)
    m = split(base, kind)
    per = 7 if kind == "ms" else 3
    child = m.signed_areas().reshape(-1, per).sum(axis=1)
    assert np.allclose(child, base.signed_areas(), rtol=0, atol=1e-12)


def test_fishbone_alternates_diagonals():
    m = split(generate_structured("diagonal", 3), "fishbone")
    m.validate()
    assert m.n_triangles == 18
    assert abs(m.signed_areas().sum() - 1.0) < 1e-12
    # the first column uses the SW-NE diagonal, the second the SE-NW one
    v = m.vertices
    d0 = {tuple(sorted(e)) for e in m.edges.tolist()}
    sw_ne = tuple(sorted((0, 5)))
    se_nw = tuple(sorted((2, 5)))
    assert sw_ne in d0 and se_nw in d0 and v[5].tolist() == [1 / 3, 1 / 3]


def test_fishbone_needs_grid():
    with pytest.raises(MeshError):
        split(single_triangle(), "fishbone")


def test_split_rejects_unknown_kind():
    with pytest.raises(ValueError):
        split(single_triangle(), "powell_sabin")


# ----------------------------------------------------------------------------
# stars
# ----------------------------------------------------------------------------


def test_star_diagonal_interior_vertex():
    m = generate_structured("diagonal", 2)
    s = build_star(m, 4)
    q, h = math.pi / 4, math.pi / 2
    assert s.m == 6 and s.is_interior
    # cyclic order starting at the +x edge
    assert np.allclose(s.theta, [q, q, h, q, q, h])
    assert abs(s.theta.sum() - 2 * math.pi) < 1e-12


def test_star_crisscross_center():
    s = build_star(generate_structured("crisscross", 1), 4)
    assert s.m == 4
    assert np.allclose(s.theta, math.pi / 2)


def test_star_boundary_corner():
    s = build_star(generate_structured("diagonal", 2), 0)
    assert not s.is_interior
    assert abs(s.theta.sum() - math.pi / 2) < 1e-12


def test_star_tangents_and_normals():
    m = split(generate_structured("crisscross", 1), "ms")
    for v in m.interior_vertices():
        s = build_star(m, int(v))
        assert np.allclose(np.linalg.norm(s.t, axis=1), 1.0)
        assert np.allclose(np.einsum("ij,ij->i", s.t, s.n), 0.0)
        # n = t rotated clockwise
        assert np.allclose(s.n, np.column_stack([s.t[:, 1], -s.t[:, 0]]))


def test_star_cyclic_consistency():
    m = split(generate_structured("diagonal", 2), "ms").transformed(rotation(0.7))
    for v in m.interior_vertices():
        s = build_star(m, int(v))
        for i in range(s.m):
            rot = rotation(s.theta[i]) @ s.t[i]
            assert np.allclose(rot, s.t[(i + 1) % s.m], atol=1e-12)


def test_star_heights():
    m = generate_structured("diagonal", 2)
    s = build_star(m, 4)
    for i in range(s.m):
        tm, tp, nm, npl, hm, hp, th = s.element_frame(i)
        jm, jp = s.element_edges(i)
        assert abs(hm - s.lengths[jm] * math.sin(th)) < 1e-14
        assert abs(hp - s.lengths[jp] * math.sin(th)) < 1e-14


def test_isolated_vertex_rejected():
    m = Triangulation(np.array([[0, 0], [1, 0], [0, 1], [5, 5]], float), np.array([[0, 1, 2]]))
    with pytest.raises(MeshError):
        build_star(m, 3)


# ----------------------------------------------------------------------------
# metrics and classification
# ----------------------------------------------------------------------------


def test_theta_values():
    cc = build_star(generate_structured("crisscross", 1), 4)
    hexs = build_star(hexagon_patch(), 0)
    diag = build_star(generate_structured("diagonal", 2), 4)
    assert theta_I(cc) < 1e-15 and theta_II(cc) < 1e-15
    assert abs(theta_I(hexs) - math.sin(2 * math.pi / 3)) < 1e-12
    assert theta_II(hexs) < 1e-15
    assert abs(theta_I(diag) - 1.0) < 1e-12


def test_theta_ii_morgan_scott_interior_vertex():
    m = split(single_triangle(), "ms", 0.25)
    val = theta_II(build_star(m, 3))
    assert val > 0.1
    assert val == pytest.approx(0.5960395606792696, abs=1e-12)  # regression value


def test_metrics_need_interior_vertex():
    s = build_star(generate_structured("diagonal", 2), 0)
    with pytest.raises(ValueError):
        theta_I(s)
    with pytest.raises(ValueError):
        theta_II(s)


def test_classify_named_patches():
    assert classify_vertex(build_star(patch("crisscross"), 4)).kind == "TypeI"
    assert classify_vertex(build_star(patch("threeline"), 0)).kind == "TypeII-nondegenerate"
    assert classify_vertex(build_star(patch("hct"), 3)).kind == "TypeII-3"
    assert classify_vertex(build_star(patch("crisscross"), 0)).kind == "Boundary"


def _fan(ray_degrees):
    ang = np.radians(ray_degrees)
    verts = np.vstack([[0.0, 0.0], np.column_stack([np.cos(ang), np.sin(ang)])])
    m = len(ray_degrees)
    return Triangulation(verts, np.array([(0, 1 + i, 1 + (i + 1) % m) for i in range(m)]))


@pytest.mark.parametrize(
    "rays, kind",
    [
        ([0, 60, 120, 180, 240, 300], "TypeII-nondegenerate"),
        ([0, 60, 120, 180, 240], "TypeII-1"),
        ([0, 60, 180, 300], "TypeII-2"),
        ([0, 120, 240], "TypeII-3"),
        ([0, 90, 180, 270], "TypeI"),
        ([0, 50, 120, 180, 240, 300], "Regular"),
    ],
)
def test_type_ii_subtypes_by_element_count(rays, kind):
    assert classify_vertex(build_star(_fan(rays), 0)).kind == kind


def test_classification_rigid_motion_and_scaling_invariance():
    m = split(generate_structured("diagonal", 2), "ms", 0.27)
    m2 = m.transformed(2.5 * rotation(1.1), shift=(3.0, -2.0))
    for v in m.interior_vertices():
        s1, s2 = build_star(m, int(v)), build_star(m2, int(v))
        assert abs(theta_I(s1) - theta_I(s2)) < 1e-12
        assert abs(theta_II(s1) - theta_II(s2)) < 1e-12


def _on_two_lines(star, tol=1e-12):
    dirs = []
    for t in star.t:
        if not any(abs(t[0] * d[1] - t[1] * d[0]) < tol for d in dirs):
            dirs.append(t)
    return len(dirs) <= 2


def test_theta_i_zero_iff_two_lines():
    meshes = [patch("crisscross"), patch("threeline"), generate_structured("crisscross", 2),
              split(generate_structured("diagonal", 2), "ms"), hexagon_patch(0.1)]
    for m in meshes:
        for v in m.interior_vertices():
            s = build_star(m, int(v))
            assert (theta_I(s) <= 1e-12) == _on_two_lines(s)


def test_classification_report_shape():
    rep = classification_report(patch("crisscross"))
    assert [r["kind"] for r in rep].count("TypeI") == 1
    assert set(rep[0]) == {"vertex", "kind", "theta_I", "theta_II", "m"}
    assert rep[0]["theta_I"] is None
    json.dumps(rep)


# ----------------------------------------------------------------------------
# file I/O
# ----------------------------------------------------------------------------


def test_round_trip(tmp_path):
    m = split(generate_structured("crisscross", 1), "ms", 0.23)
    p = tmp_path / "m.json"
    save_mesh(m, p)
    m2 = load_mesh(p)
    assert np.array_equal(m.vertices, m2.vertices)
    assert np.array_equal(m.triangles, m2.triangles)
    assert mesh_io(p, "load").n_triangles == m.n_triangles


def test_reorients_clockwise_triangle(tmp_path, caplog):
    p = tmp_path / "cw.json"
    p.write_text(json.dumps({"vertices": [[0, 0], [1, 0], [0, 1]], "triangles": [[0, 2, 1]]}))
    with caplog.at_level(logging.WARNING):
        m = load_mesh(p)
    assert m.signed_areas()[0] > 0
    assert "reoriented" in caplog.text


def test_hanging_node_names_edge(tmp_path):
    p = tmp_path / "hang.json"
    verts = [[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5]]
    tris = [[0, 1, 2], [1, 3, 4], [4, 3, 2]]
    p.write_text(json.dumps({"vertices": verts, "triangles": tris}))
    with pytest.raises(MeshError, match=r"hanging node 4 on edge \(1, 2\)|hanging node 4 on edge \(2, 1\)"):
        load_mesh(p)


def test_malformed_file(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    with pytest.raises(MeshError):
        load_mesh(p)
    with pytest.raises(ValueError):
        mesh_io(p, "sideways")
