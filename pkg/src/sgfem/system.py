"""Mixed forms, saddle-point solves, error norms and divergence rank analysis.

Stress vectors are blocked as (s11, s12, s22) and displacement vectors as
(u1, u2), all in reduced coordinates of the spaces.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .elements.manufactured import ManufacturedCase
from .elements.quadrature import MAX_DEGREE, quadrature_rule
from .elements.tensors import MaterialParams, compliance_voigt
from .spaces import (
    DiscreteField,
    FESpace,
    scalar_derivative_pairing,
    scalar_load,
    scalar_mass,
    scalar_stiffness,
)

log = logging.getLogger(__name__)

RANK_RTOL = 1e-9
GAP_MIN = 1e4
DENSE_LIMIT = 5000
AUTO_DENSE_ROWS = 2500


class RankDeficientError(RuntimeError):
    """The divergence matrix is not surjective; carries the rank report."""

    def __init__(self, report: "RankReport"):
        super().__init__(f"divergence is rank deficient by {report.deficiency}")
        self.report = report


class MeshMismatchError(ValueError):
    pass


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------


def _reduce(Ns, M, Nt=None):
    Nt = Ns if Nt is None else Nt
    return (Ns.T @ M @ Nt).tocsr()


@dataclass(eq=False)
class StressBlocks:
    """Reduced scalar mass and gradient Gram of a stress space (cached pieces of A)."""

    mass: sp.csr_matrix
    grad: sp.csr_matrix


def stress_blocks(space: FESpace) -> StressBlocks:
    sc = space.scalar
    M = scalar_mass(sc, 2 * sc.k + 4)
    K = scalar_stiffness(sc, 2 * sc.k + 2)
    return StressBlocks(_reduce(sc.N, M), _reduce(sc.N, K))


def assemble_a(space: FESpace, params: MaterialParams, blocks: StressBlocks | None = None) -> sp.csr_matrix:
    """Matrix of iota^2 (grad A s, grad t) + (A s, t) on the stress space."""
    if space.kind != "stress":
        raise ValueError("assemble_a needs a stress space")
    blocks = blocks or stress_blocks(space)
    S = blocks.mass + params.iota**2 * blocks.grad
    return sp.kron(compliance_voigt(params), S, format="csr")


def assemble_b(sigma_space: FESpace, q_space: FESpace) -> sp.csr_matrix:
    """Matrix with entry (a, i) = (div sigma_i, q_a)."""
    if sigma_space.mesh is not q_space.mesh:
        raise MeshMismatchError("stress and displacement spaces live on different meshes")
    ss, qs = sigma_space.scalar, q_space.scalar
    Dx, Dy = scalar_derivative_pairing(qs, ss, ss.k + qs.k + 2)
    Dxr, Dyr = _reduce(qs.N, Dx, ss.N), _reduce(qs.N, Dy, ss.N)
    # (div s)_1 = d_x s11 + d_y s12, (div s)_2 = d_x s12 + d_y s22
    return sp.bmat([[Dxr, Dyr, None], [None, Dxr, Dyr]], format="csr")


def assemble_load(q_space: FESpace, f, degree: int | None = None) -> np.ndarray:
    """Vector with entry a = (f, q_a); ``f(x, y)`` returns (..., 2)."""
    qs = q_space.scalar
    q = quadrature_rule(min(MAX_DEGREE, degree or 2 * qs.k + 8))
    pts = q_space.mesh.map_points(q.xy)
    vals = np.asarray(f(pts[..., 0], pts[..., 1]), dtype=float)
    return np.concatenate([qs.N.T @ scalar_load(qs, vals[..., c], q) for c in range(2)])


def q_mass(q_space: FESpace) -> sp.csr_matrix:
    qs = q_space.scalar
    Mr = _reduce(qs.N, scalar_mass(qs, 2 * qs.k))
    return sp.block_diag([Mr, Mr], format="csr")


def stress_h1_gram(space: FESpace, blocks: StressBlocks | None = None, seminorm: bool = True) -> sp.csr_matrix:
    """Gram matrix of the (full-matrix Frobenius) H1 (semi)norm."""
    blocks = blocks or stress_blocks(space)
    S = blocks.grad if seminorm else blocks.grad + blocks.mass
    return sp.kron(np.diag([1.0, 2.0, 1.0]), S, format="csr")


@dataclass(eq=False)
class SaddleSystem:
    A: sp.csr_matrix
    B: sp.csr_matrix
    load: np.ndarray
    params: MaterialParams
    sigma_space: FESpace
    q_space: FESpace

    @property
    def n_sigma(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[0]

    def matrix(self) -> sp.csc_matrix:
        return sp.bmat([[self.A, self.B.T], [self.B, None]], format="csc")

    def rhs(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.n_sigma), self.load])


def build_system(sigma_space, q_space, params, f, blocks=None, B=None) -> SaddleSystem:
    A = assemble_a(sigma_space, params, blocks)
    B = assemble_b(sigma_space, q_space) if B is None else B
    return SaddleSystem(A, B, assemble_load(q_space, f), params, sigma_space, q_space)


def solve_saddle(system: SaddleSystem, check_rank: bool = False, rtol: float = 1e-10):
    """Direct solve of [A B^T; B 0][s; u] = [0; F].

    Uses sparse LU (SuperLU) with up to three steps of iterative refinement
    and a dense fallback if the factorization fails or the residual stays
    above ``rtol``.
    """
    if check_rank:
        report = rank_and_cokernel(system.B, mode="auto")
        if not report.trusted:
            raise RankDeficientError(report)
        if report.deficiency > 0:
            raise RankDeficientError(report)
    K = system.matrix()
    rhs = system.rhs()
    x = None
    res = np.inf
    try:
        lu = spla.splu(K, permc_spec="COLAMD", diag_pivot_thresh=1.0)
        x = lu.solve(rhs)
        res = _relres(K, x, rhs)
        for _ in range(3):  # iterative refinement
            if res <= 0.1 * rtol:
                break
            x = x + lu.solve(rhs - K @ x)
            res = _relres(K, x, rhs)
    except RuntimeError as exc:
        log.warning("sparse LU failed (%s); falling back to dense", exc)
    if not res <= rtol:
        if K.shape[0] > 20000:
            raise RuntimeError(f"saddle solve residual {res:.2e} above {rtol:.0e}")
        x = sla.solve(K.toarray(), rhs, assume_a="sym")
        res = _relres(K, x, rhs)
    if not res <= rtol:
        report = rank_and_cokernel(system.B, mode="auto")
        raise RankDeficientError(report) if report.deficiency > 0 else RuntimeError(
            f"saddle solve residual {res:.2e} above {rtol:.0e}"
        )
    ns = system.n_sigma
    return DiscreteField(system.sigma_space, x[:ns]), DiscreteField(system.q_space, x[ns:])


def _relres(K, x, b):
    nb = np.linalg.norm(b)
    return np.linalg.norm(K @ x - b) / (nb if nb > 0 else 1.0)


# ----------------------------------------------------------------------------
# error norms
# ----------------------------------------------------------------------------


def error_norms(sigma_h: DiscreteField, u_h: DiscreteField | None, case: ManufacturedCase, params: MaterialParams,
                degree: int | None = None, u_exact=None) -> dict:
    """Elementwise-quadrature errors of (sigma_h, u_h) against the exact case.

    ``u_exact(x, y)`` overrides the displacement reference (default ``case.u``).
    Matrix norms are full Frobenius norms.
    """
    space = sigma_h.space
    k = space.scalar.k
    q = quadrature_rule(min(MAX_DEGREE, degree or 2 * k + 8))
    mesh = space.mesh
    pts = mesh.map_points(q.xy)
    x, y = pts[..., 0], pts[..., 1]
    w = np.abs(mesh.det_jacobians)[:, None] * q.weights[None, :]
    tab = sigma_h.tabulate(q.xy, 1)
    val = tab[0][:, :, 0, :]  # (nt, 3, nq)
    grad = tab[1]  # (nt, 3, 2, nq)
    s0 = case.sigma(x, y)
    g0 = case.grad_sigma(x, y)  # (nt, nq, a, i, j)
    comps = ((0, 0), (0, 1), (1, 1))
    wt = np.array([1.0, 2.0, 1.0])
    e_val = np.stack([val[:, c] - s0[..., i, j] for c, (i, j) in enumerate(comps)])
    e_grad = np.stack([[grad[:, c, a] - g0[..., a, i, j] for a in range(2)] for c, (i, j) in enumerate(comps)])
    L2 = math.sqrt(float(np.sum(wt[:, None, None] * e_val**2 * w)))
    H1 = math.sqrt(float(np.sum(wt[:, None, None, None] * e_grad**2 * w)))
    # div: (d_x s11 + d_y s12, d_x s12 + d_y s22)
    div_h = np.stack([grad[:, 0, 0] + grad[:, 1, 1], grad[:, 1, 0] + grad[:, 2, 1]])
    f0 = case.f(x, y)
    div_err = math.sqrt(float(np.sum((div_h - np.moveaxis(f0, -1, 0)) ** 2 * w)))
    out = {
        "E_sigma_L2": L2,
        "E_sigma_H1semi": H1,
        "E_div": div_err,
        "E_sigma_iota": params.iota * H1 + div_err + L2,
    }
    if u_h is not None:
        ut = u_h.tabulate(q.xy, 0)[0][:, :, 0, :]
        uex = (u_exact or case.u)(x, y)
        out["E_u_L2"] = math.sqrt(float(np.sum((ut - np.moveaxis(uex, -1, 1)) ** 2 * w[:, None, :])))
    return out


# ----------------------------------------------------------------------------
# rank and cokernel
# ----------------------------------------------------------------------------


@dataclass
class RankReport:
    dim_q: int
    rank_b: int
    deficiency: int
    gap_ratio: float
    left_nullspace: np.ndarray = field(repr=False)
    singular_values: np.ndarray = field(repr=False)
    mode: str = "dense_svd"

    @property
    def trusted(self) -> bool:
        return self.gap_ratio >= GAP_MIN

    def to_dict(self) -> dict:
        return {
            "dim_q": self.dim_q,
            "rank_b": self.rank_b,
            "deficiency": self.deficiency,
            "gap_ratio": _finite(self.gap_ratio),
            "trusted": self.trusted,
            "mode": self.mode,
        }


def _finite(x):
    return None if not np.isfinite(x) else float(x)


def equilibrate(B, sweeps: int = 3):
    """Alternate row and column 2-norm scaling, D_r B D_c; returns (scaled, D_r diagonal).

    Rank is unchanged and the element-size and basis scaling that spreads the
    singular values of the raw matrix is removed.
    """
    B = sp.csr_matrix(B, dtype=float)
    row = np.ones(B.shape[0])
    for _ in range(sweeps):
        r = np.sqrt(np.asarray(B.multiply(B).sum(axis=1)).ravel())
        r[r == 0] = 1.0
        B = sp.diags(1.0 / r) @ B
        row /= r
        c = np.sqrt(np.asarray(B.multiply(B).sum(axis=0)).ravel())
        c[c == 0] = 1.0
        B = (B @ sp.diags(1.0 / c)).tocsr()
    return B, row


def _left(row_scale, Y):
    """Left null vectors of B from those of D_r B D_c (y = D_r y~), orthonormalized."""
    if Y.shape[1] == 0:
        return Y
    return sla.orth(row_scale[:, None] * Y)


def rank_and_cokernel(B, mode: str = "dense_svd", n_small: int = 6) -> RankReport:
    """Numerical rank of B (rows = displacement DOFs) and its left null space.

    B is first equilibrated (``equilibrate``); singular values and the gap
    refer to the scaled matrix.  With no deficiency the gap is the margin of
    the smallest singular value above the threshold.

    ``dense_svd``: full SVD with threshold 1e-9 sigma_max.
    ``sparse_qr``: the smallest singular values from shift-invert Lanczos on
    B B^T (no sparse QR is available in scipy); only the ``n_small`` smallest
    are computed, and the report is untrusted if all of them fall below the
    threshold.
    The shifted inverse (B B^T + eps I)^-1 is applied through a sparse LU of
    the augmented matrix [[I, B^T], [B, -eps I]], which fills in far less
    than B B^T itself.
    ``auto`` picks dense up to 2500 rows.
    """
    m, n = B.shape
    B, row_scale = equilibrate(B)
    if mode == "auto":
        mode = "dense_svd" if m <= AUTO_DENSE_ROWS else "sparse_qr"
    if mode == "dense_svd":
        if m > DENSE_LIMIT:
            raise ValueError(f"dense rank mode limited to {DENSE_LIMIT} rows, got {m}")
        Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
        U, s, _ = sla.svd(Bd, full_matrices=True, lapack_driver="gesdd")
        smax = s[0] if len(s) else 0.0
        r = int(np.sum(s > RANK_RTOL * smax))
        if r < len(s):
            gap = s[r - 1] / s[r] if s[r] > 0 else np.inf
        else:
            gap = s[-1] / (RANK_RTOL * smax)  # margin of the smallest value above the threshold
        return RankReport(m, r, m - r, float(gap), _left(row_scale, U[:, r:]), s, "dense_svd")
    if mode != "sparse_qr":
        raise ValueError(f"unknown rank mode {mode!r}")
    B = sp.csr_matrix(B)
    G = spla.LinearOperator((m, m), matvec=lambda v: B @ (B.T @ v), dtype=float)
    lmax = spla.eigsh(G, k=1, which="LM", return_eigenvectors=False, tol=1e-6)[0]
    smax = math.sqrt(lmax)
    eps = 1e-8 * lmax
    K = sp.bmat([[sp.identity(n), B.T], [B, -eps * sp.identity(m)]], format="csc")
    lu = spla.splu(K)
    zeros = np.zeros(n)
    opinv = spla.LinearOperator((m, m), matvec=lambda v: -lu.solve(np.concatenate([zeros, v]))[n:], dtype=float)
    nev = min(n_small, m - 2)
    while True:
        vals, vecs = spla.eigsh(G, k=nev, sigma=-eps, which="LM", OPinv=opinv, tol=1e-10)
        vecs = vecs[:, np.argsort(vals)]
        # squaring loses half the digits; singular values recomputed from B^T v
        s_small = np.linalg.norm(B.T @ vecs, axis=0)
        d = int(np.sum(s_small <= RANK_RTOL * smax))
        if d < nev or nev >= m - 2:
            break
        nev = min(2 * nev, m - 2)
    order = np.argsort(s_small)
    s_small, vecs = s_small[order], vecs[:, order]
    if d == nev:
        gap = 0.0  # every computed value is numerically zero: deficiency unknown
    elif d == 0:
        gap = s_small[0] / (RANK_RTOL * smax)
    else:
        gap = s_small[d] / max(s_small[d - 1], np.finfo(float).tiny)
    left = _left(row_scale, vecs[:, :d])
    return RankReport(m, m - d, d, float(gap), left, s_small, "sparse_qr")


def export_coo(M, path) -> None:
    """Write a sparse matrix as 'row col value' lines."""
    C = sp.coo_matrix(M)
    with open(path, "w") as fh:
        for r, c, v in zip(C.row, C.col, C.data):
            fh.write(f"{r} {c} {float(v)!r}\n")


def infsup_estimate(H, M_q, B, rtol: float = 1e-10) -> float:
    """Smallest nonzero generalized singular value of B in the (H, M_q) norms.

    Solves B H^+ B^T y = beta^2 M_q y densely.  H may be singular on a
    subspace annihilated by B (e.g. constants for the H1 seminorm).
    """
    n = B.shape[0]
    if n > DENSE_LIMIT:
        raise ValueError(f"dense inf-sup limited to {DENSE_LIMIT} rows, got {n}")
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
    Md = M_q.toarray() if sp.issparse(M_q) else np.asarray(M_q)
    Hp = sla.pinvh(Hd, atol=rtol * np.abs(Hd).max())
    S = Bd @ Hp @ Bd.T
    S = 0.5 * (S + S.T)
    ev = sla.eigh(S, Md, eigvals_only=True)
    ev = np.clip(ev, 0, None)
    nz = ev[ev > rtol * ev.max()]
    return float(math.sqrt(nz.min()))


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True))
