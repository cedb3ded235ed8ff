"""Closed-form patch checks, necessary-condition probes, inf-sup and surjectivity."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import polynomial as npoly
from scipy.signal import convolve2d

from ..mesh import Triangulation, VertexStar, build_star, hexagon_patch
from ..spaces import build_pair, build_q, build_sigma, reduced_mass
from ..system import assemble_b, infsup_estimate, q_mass, stress_blocks, stress_h1_gram
from .functionals import functional_rows, j_matrix

# ----------------------------------------------------------------------------
# local basis of the annihilator of J at a vertex
# ----------------------------------------------------------------------------


def _affine(point, grad) -> np.ndarray:
    """Coefficients of x -> grad . (x - point) + 0 as a 2x2 grid about the origin."""
    c = np.zeros((2, 2))
    c[0, 0] = -grad @ point
    c[1, 0] = grad[0]
    c[0, 1] = grad[1]
    return c


def _barycentric_polys(p0, p1, p2):
    """Affine barycentric functions of a triangle as monomial grids in (x, y)."""
    P = np.array([p0, p1, p2], dtype=float)
    out = []
    for i in range(3):
        j, k = (i + 1) % 3, (i + 2) % 3
        e = P[k] - P[j]
        g = np.array([-e[1], e[0]])  # normal to the opposite edge
        g = g / (g @ (P[i] - P[j]))
        c = _affine(P[j], g)
        out.append(c)
    return out


@dataclass
class NzTCheck:
    numeric: list  # grad div phi_i at z, exact polynomial differentiation
    closed: list  # closed forms
    closed_residual: float
    j_annihilation: float
    gram_det: float
    flipped_sign_residual: float


def nzt_basis_check(star: VertexStar, element: int) -> NzTCheck:
    """grad div of the three cubic-weighted stresses of one element at z.

    phi_1 = psi_z^2 psi_+ psi_- t_- t_-^T, phi_2 the same with t_+ t_+^T and
    phi_3 with t_- t_+^T + t_+ t_-^T.  The numeric value differentiates the
    exact polynomials; ``closed`` uses
    grad div phi_1 = -(s / h h) n_- t_-^T, grad div phi_2 = (s / h h) n_+ t_+^T,
    grad div phi_3 = -(s / h h) (n_- t_+^T - n_+ t_-^T), s = sin(theta).
    ``flipped_sign_residual`` measures the forms with the first two signs flipped.
    """
    tm, tp, nm, npl, hm, hp, th = star.element_frame(element)
    z = star.center
    jm, jp = star.element_edges(element)
    ym = z + star.lengths[jm] * tm
    yp = z + star.lengths[jp] * tp
    psi_z, psi_m, psi_p = _barycentric_polys(z, ym, yp)
    g = convolve2d(convolve2d(convolve2d(psi_z, psi_z), psi_p), psi_m)
    T = [np.outer(tm, tm), np.outer(tp, tp), np.outer(tm, tp) + np.outer(tp, tm)]

    def d(c, a):
        out = np.zeros_like(c)
        dc = npoly.polyder(c, 1, axis=a)
        out[: dc.shape[0], : dc.shape[1]] = dc
        return out

    numeric = []
    for Tm in T:
        # (div phi)_b = sum_a d_a g T_ab ; (grad div phi)_{cb} = d_c (div phi)_b
        div = [sum(Tm[a, b] * d(g, a) for a in range(2)) for b in range(2)]
        G = np.array([[npoly.polyval2d(z[0], z[1], d(div[b], c)) for b in range(2)] for c in range(2)])
        numeric.append(G)
    s = math.sin(th) / (hp * hm)
    closed = [-s * np.outer(nm, tm), s * np.outer(npl, tp), -s * (np.outer(nm, tp) - np.outer(npl, tm))]
    flipped = [-closed[0], -closed[1], closed[2]]
    scale = max(np.abs(n).max() for n in numeric)
    res = max(np.abs(a - b).max() for a, b in zip(numeric, closed)) / scale
    res_flipped = max(np.abs(a - b).max() for a, b in zip(numeric, flipped)) / scale
    J = j_matrix(star, element)
    jres = max(abs(float(np.sum(J * n))) for n in numeric) / (np.abs(J).max() * scale)
    V = np.array([n.ravel() / np.linalg.norm(n) for n in numeric])
    gram = float(np.linalg.det(V @ V.T))
    return NzTCheck(numeric, closed, float(res), float(jres), gram, float(res_flipped))


# ----------------------------------------------------------------------------
# necessary conditions on random stresses
# ----------------------------------------------------------------------------


def necessary_condition_probe(mesh: Triangulation, vertex: int, pair: str, k: int, kind: str,
                              n_samples: int = 100, seed: int = 0) -> float:
    """max |l(div tau)| over random stresses tau of the pair's stress space.

    ``tau`` is normalized to unit L2 norm of div tau; ``l`` is the closed-form
    functional ``kind`` at ``vertex`` written on discontinuous P_{k-1}.
    """
    S, _ = build_pair(mesh, pair, k)
    Q = build_q(mesh, k - 1, -1)
    star = build_star(mesh, vertex)
    rows = functional_rows(Q, star, kind)
    B = assemble_b(S, Q)
    M = q_mass(Q).tocsc()
    lu = spla.splu(M)
    rng = np.random.default_rng(seed)
    C = rng.standard_normal((S.dim, n_samples))
    Dq = lu.solve(np.asarray(B @ C))  # div tau in displacement coordinates (identity N)
    norms = np.sqrt(np.einsum("ij,ij->j", Dq, M @ Dq))
    Dq = Dq / norms
    worst = 0.0
    for r in rows:
        worst = max(worst, float(np.abs(r @ Dq).max()))
    return worst


# ----------------------------------------------------------------------------
# inf-sup constant and surjectivity
# ----------------------------------------------------------------------------


def infsup_for_pair(mesh: Triangulation, pair: str, k: int) -> float:
    """Discrete inf-sup of div in (H1-seminorm, L2) for a pair on a mesh."""
    S, Q = build_pair(mesh, pair, k)
    B = assemble_b(S, Q)
    H = stress_h1_gram(S, stress_blocks(S))
    return infsup_estimate(H, q_mass(Q), B)


def perturbed_threeline_infsup(deltas=(0.2, 0.1, 0.05, 0.025), pair: str = "lagrange", k: int = 7,
                               direction: float = 0.3) -> list[dict]:
    """Inf-sup on hexagon patches whose center is moved by delta (edge length 1)."""
    from ..mesh import classify_vertex, theta_II

    out = []
    for dlt in deltas:
        m = hexagon_patch(dlt, direction)
        star = build_star(m, 0)
        out.append({
            "delta": dlt,
            "theta_II": theta_II(star),
            "kind": classify_vertex(star).kind,
            "infsup": infsup_for_pair(m, pair, k),
        })
    return out


def surjectivity_witness(mesh: Triangulation, pair: str, k: int, n_samples: int = 20, seed: int = 0) -> float:
    """Worst relative L2 residual of div sigma = q over random q (least-norm preimages)."""
    S, Q = build_pair(mesh, pair, k)
    B = assemble_b(S, Q)
    Ms = reduced_mass(S)
    Mq = q_mass(Q).tocsc()
    K = sp.bmat([[Ms, B.T], [B, None]], format="csc")
    lu = spla.splu(K)
    mlu = spla.splu(Mq)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_samples):
        q = rng.standard_normal(Q.dim)
        rhs = np.concatenate([np.zeros(S.dim), Mq @ q])
        x = lu.solve(rhs)
        e = mlu.solve(B @ x[: S.dim]) - q
        worst = max(worst, math.sqrt(e @ (Mq @ e)) / math.sqrt(q @ (Mq @ q)))
    return worst
