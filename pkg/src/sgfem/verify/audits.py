"""Dimension audits of the smooth finite element complex and its bubbles."""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from ..elements.basis import REF_VERTICES, lattice_points, physical_derivatives, tabulate
from ..elements.quadrature import quadrature_rule
from ..mesh import Triangulation, single_triangle
from ..spaces import build_q, build_sigma


def dim_u_formula(k: int, nt: int, ne: int, nv: int) -> int:
    return (k - 6) * (k - 5) // 2 * nt + (3 * k - 18) * ne + 15 * nv


def dim_sigma2_formula(k: int, nt: int, ne: int, nv: int) -> int:
    return (3 * (k + 2) * (k + 1) // 2 - 9 * (k + 1)) * nt + (3 * k - 15) * ne + 18 * nv


def dim_q1_formula(k: int, nt: int, nv: int) -> int:
    return (k * (k + 1) - 18) * nt + 6 * nv


def dimension_audit(mesh: Triangulation, k: int = 7) -> dict:
    """Constructed dims of the C2 stress / C1 displacement spaces vs formulas."""
    nt, ne = mesh.n_triangles, mesh.n_edges
    nv = int(sum(1 for ts in mesh.vertex_triangles if ts))
    sig = build_sigma(mesh, k, 2).dim
    q = build_q(mesh, k - 1, 1).dim
    u = dim_u_formula(k, nt, ne, nv)
    return {
        "k": k,
        "T": nt,
        "E": ne,
        "V": nv,
        "dim_sigma": sig,
        "dim_sigma_formula": dim_sigma2_formula(k, nt, ne, nv),
        "dim_q": q,
        "dim_q_formula": dim_q1_formula(k, nt, nv),
        "dim_u_formula": u,
        "alternating_sum": u - sig + q,
        "euler_characteristic": nt - ne + nv,
    }


# ----------------------------------------------------------------------------
# bubble complex on one triangle
# ----------------------------------------------------------------------------


def _phys_tab(mesh: Triangulation, k: int, xy_ref, order: int):
    tab = physical_derivatives(tabulate("bernstein", k, xy_ref, order), mesh.inverse_jacobians)
    return [t[0] for t in tab]  # (nb, d + 1, npts)


def _directional(tab_d: np.ndarray, n: np.ndarray, d: int) -> np.ndarray:
    """d-th derivative along unit vector n from the distinct partials."""
    from math import comb

    out = 0.0
    for j in range(d + 1):
        out = out + comb(d, j) * n[0] ** (d - j) * n[1] ** j * tab_d[:, j]
    return out


def _edge_samples(mesh: Triangulation, npts: int):
    s = (np.arange(npts) + 0.5) / npts
    out = []
    verts = REF_VERTICES
    pv = mesh.vertices[mesh.triangles[0]]
    for a, b in ((1, 2), (2, 0), (0, 1)):
        ref = verts[a][None] * (1 - s[:, None]) + verts[b][None] * s[:, None]
        t = pv[b] - pv[a]
        n = np.array([t[1], -t[0]]) / np.linalg.norm(t)
        out.append((ref, n))
    return out


def _bubble_nullspace(mesh, k, vertex_order, edge_normal_orders):
    """Null space (Bernstein coefficients) of vertex jets and edge traces."""
    rows = []
    vt = _phys_tab(mesh, k, REF_VERTICES, vertex_order)
    for d in range(vertex_order + 1):
        for j in range(d + 1):
            rows.append(vt[d][:, j, :].T)
    if edge_normal_orders >= 0:
        for ref, n in _edge_samples(mesh, k + 3):
            et = _phys_tab(mesh, k, ref, edge_normal_orders)
            for d in range(edge_normal_orders + 1):
                rows.append(_directional(et[d], n, d).T)
    C = np.vstack(rows)
    return sla.null_space(C, rcond=1e-10)


def bubble_complex_audit(k: int = 7) -> dict:
    """Dims of the bubble spaces U, Sigma, Q on one triangle and rank of div."""
    if not 7 <= k <= 8:
        raise ValueError("bubble audit supports 7 <= k <= 8")
    mesh = single_triangle()
    Zu = _bubble_nullspace(mesh, k + 2, 4, 2)
    Zs = _bubble_nullspace(mesh, k, 2, 0)
    Zq = _bubble_nullspace(mesh, k - 1, 1, -1)
    nsig = Zs.shape[1]
    nb_k = Zs.shape[0]

    # div of a stress (s11, s12, s22) with Bernstein coefficients, as P_{k-1} coefficients
    lat = lattice_points(k - 1)
    Vq = _phys_tab(mesh, k - 1, lat, 0)[0][:, 0, :].T  # values of P_{k-1} basis at nodes
    g = _phys_tab(mesh, k, lat, 1)[1]  # (nb_k, 2, npts)
    dx, dy = g[:, 0, :].T, g[:, 1, :].T
    Z = np.zeros_like(dx)
    div_vals = np.block([[dx, dy, Z], [Z, dx, dy]])  # (2 npts, 3 nb_k)
    Vq2 = sla.block_diag(Vq, Vq)
    div_coef = np.linalg.solve(Vq2, div_vals)
    Zs3 = sla.block_diag(Zs, Zs, Zs)
    Zq2 = sla.block_diag(Zq, Zq)
    D = div_coef @ Zs3  # in full P_{k-1}^2 coordinates
    # image must lie in the displacement bubble space
    coords, *_ = np.linalg.lstsq(Zq2, D, rcond=None)
    in_q = float(np.abs(Zq2 @ coords - D).max() / max(np.abs(D).max(), 1e-300))
    sv = np.linalg.svd(coords, compute_uv=False)
    rank_div = int(np.sum(sv > 1e-9 * sv[0]))
    kernel_dim = 3 * nsig - rank_div

    # Airy images of the U bubbles lie in the stress bubbles and are divergence free
    lat_k = lattice_points(k)
    H = _phys_tab(mesh, k + 2, lat_k, 2)[2]  # (nb_u, 3, npts): xx, xy, yy
    Vk = _phys_tab(mesh, k, lat_k, 0)[0][:, 0, :].T
    airy_vals = np.concatenate([H[:, 2, :].T, -H[:, 1, :].T, H[:, 0, :].T]) @ Zu
    airy_coef = np.linalg.solve(sla.block_diag(Vk, Vk, Vk), airy_vals)
    a_coords, *_ = np.linalg.lstsq(Zs3, airy_coef, rcond=None)
    airy_in_sigma = float(np.abs(Zs3 @ a_coords - airy_coef).max() / np.abs(airy_coef).max())
    airy_div = float(np.abs(div_coef @ airy_coef).max() / np.abs(div_coef).max() / np.abs(airy_coef).max())

    # rigid-motion moments of div of random stress bubbles
    rng = np.random.default_rng(7)
    q = quadrature_rule(2 * k)
    pts = mesh.map_points(q.xy)[0]
    w = q.weights * abs(mesh.det_jacobians[0])
    gq = _phys_tab(mesh, k, q.xy, 1)[1]
    rm = [np.stack([np.ones(len(w)), np.zeros(len(w))]), np.stack([np.zeros(len(w)), np.ones(len(w))]),
          np.stack([-pts[:, 1], pts[:, 0]])]
    worst = 0.0
    for _ in range(20):
        c = (Zs3 @ rng.standard_normal(3 * nsig)).reshape(3, nb_k)
        sx = [c[i] @ gq[:, 0, :] for i in range(3)]
        sy = [c[i] @ gq[:, 1, :] for i in range(3)]
        div = np.stack([sx[0] + sy[1], sx[1] + sy[2]])
        scale = np.sqrt(np.sum(div**2 * w))
        for p in rm:
            worst = max(worst, abs(float(np.sum(div * p * w))) / scale)
    return {
        "k": k,
        "dim_u": Zu.shape[1],
        "dim_sigma": 3 * nsig,
        "dim_q": 2 * Zq.shape[1],
        "dim_u_formula": (k - 6) * (k - 5) // 2,
        "dim_sigma_formula": 3 * (k + 2) * (k + 1) // 2 - 9 * (k - 5) - 54,
        "dim_q_formula": k * (k + 1) - 18,
        "rank_div": rank_div,
        "kernel_dim": kernel_dim,
        "alternating_sum": Zu.shape[1] - 3 * nsig + 2 * Zq.shape[1],
        "div_image_in_q_residual": in_q,
        "airy_in_sigma_residual": airy_in_sigma,
        "airy_div_residual": airy_div,
        "rm_moment_residual": float(worst),
    }
