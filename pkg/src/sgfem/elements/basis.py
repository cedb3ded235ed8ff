"""Polynomial bases on the reference triangle.

Polynomials are held as exact monomial coefficient grids ``c[a, b]`` for
``x**a * y**b`` in reference coordinates, so derivatives of any order are
exact.  Two bases are provided: the nodal Lagrange basis on the equispaced
lattice and the Bernstein basis.  The spaces use Bernstein functions because
the jet of order ``r`` at a vertex only involves the coefficients whose
multi-index has that vertex's entry at least ``k - r``.
"""
from __future__ import annotations

from functools import lru_cache
from math import factorial

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.signal import convolve2d

MAX_K = 12

# reference vertices (x, y) in barycentric order
REF_VERTICES = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def multi_indices(k: int) -> list[tuple[int, int, int]]:
    """Barycentric multi-indices (a0, a1, a2) of total degree k.

    Order: vertices first (0, 1, 2), then edge points by edge (1-2, 2-0, 0-1)
    running away from the lower-numbered local vertex, then interior points.  Vertex ``j``
    corresponds to the index with ``a_j = k``.
    """
    if k < 0:
        raise ValueError("k must be nonnegative")
    allidx = [(k - i - j, i, j) for i in range(k + 1) for j in range(k + 1 - i)]
    if k == 0:
        return allidx
    verts = [tuple(k if i == j else 0 for i in range(3)) for j in range(3)]
    edges = []
    for a, b in ((1, 2), (2, 0), (0, 1)):
        other = 3 - a - b
        pts = [al for al in allidx if al[other] == 0 and al[a] > 0 and al[b] > 0]
        edges += sorted(pts, key=lambda al: -al[min(a, b)])
    interior = [al for al in allidx if min(al) > 0]
    return verts + edges + interior


def lattice_points(k: int) -> np.ndarray:
    """Reference (x, y) of the equispaced nodes, in ``multi_indices`` order."""
    return np.array([[al[1] / k, al[2] / k] for al in multi_indices(k)], dtype=float)


def _monomial_power(base: np.ndarray, p: int) -> np.ndarray:
    out = np.ones((1, 1))
    for _ in range(p):
        out = convolve2d(out, base)
    return out


def _pad(c: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros((n, n))
    out[: c.shape[0], : c.shape[1]] = c
    return out


@lru_cache(maxsize=None)
def bernstein_coefficients(k: int) -> np.ndarray:
    """Monomial coefficients of the degree-k Bernstein basis, shape (nb, k+1, k+1)."""
    _check_k(k, lo=0)
    lam = [np.array([[1.0, -1.0], [-1.0, 0.0]]), np.array([[0.0], [1.0]]), np.array([[0.0, 1.0]])]
    out = []
    for al in multi_indices(k):
        c = np.ones((1, 1)) * (factorial(k) / (factorial(al[0]) * factorial(al[1]) * factorial(al[2])))
        for j in range(3):
            c = convolve2d(c, _monomial_power(lam[j], al[j]))
        out.append(_pad(c, k + 1))
    arr = np.array(out)
    arr.setflags(write=False)
    return arr


def _monomial_vandermonde(k: int, xy: np.ndarray) -> np.ndarray:
    """Rows: points; columns: monomials x^a y^b (a + b <= k) in grid order."""
    exps = [(a, b) for a in range(k + 1) for b in range(k + 1 - a)]
    return np.array([xy[:, 0] ** a * xy[:, 1] ** b for a, b in exps]).T, exps


@lru_cache(maxsize=None)
def lagrange_coefficients(k: int) -> np.ndarray:
    """Monomial coefficients of the nodal Lagrange basis, shape (nb, k+1, k+1)."""
    _check_k(k, lo=1)
    V, exps = _monomial_vandermonde(k, lattice_points(k))
    inv = np.linalg.solve(V, np.eye(len(V)))  # columns: basis functions
    out = np.zeros((len(V), k + 1, k + 1))
    for col, (a, b) in enumerate(exps):
        out[:, a, b] = inv[col, :]
    out.setflags(write=False)
    return out


def _check_k(k, lo):
    if not isinstance(k, (int, np.integer)) or not lo <= k <= MAX_K:
        raise ValueError(f"polynomial degree must be an integer in [{lo}, {MAX_K}], got {k!r}")


def derivative_multi_indices(order: int) -> list[tuple[int, int]]:
    """Distinct partial derivatives (dx, dy) of a given order, x-major."""
    return [(order - j, j) for j in range(order + 1)]


def tabulate_coefficients(coeffs: np.ndarray, xy: np.ndarray, order: int) -> list[np.ndarray]:
    """Evaluate polynomials and all reference partials up to ``order``.

    Returns a list ``T`` with ``T[d]`` of shape (nb, d + 1, npts); entry
    ``[:, j]`` holds the partial ``d_x^(d-j) d_y^j``.
    """
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    out = []
    for d in range(order + 1):
        vals = np.empty((coeffs.shape[0], d + 1, len(xy)))
        for j, (dx, dy) in enumerate(derivative_multi_indices(d)):
            for i, c in enumerate(coeffs):
                cd = c
                if dx:
                    cd = npoly.polyder(cd, dx, axis=0)
                if dy:
                    cd = npoly.polyder(cd, dy, axis=1)
                vals[i, j] = npoly.polyval2d(xy[:, 0], xy[:, 1], cd)
        out.append(vals)
    return out


@lru_cache(maxsize=None)
def _cached_tab(kind: str, k: int, xy_bytes: bytes, npts: int, order: int):
    xy = np.frombuffer(xy_bytes, dtype=float).reshape(npts, 2)
    coeffs = bernstein_coefficients(k) if kind == "bernstein" else lagrange_coefficients(k)
    tabs = tabulate_coefficients(coeffs, xy, order)
    for t in tabs:
        t.setflags(write=False)
    return tabs


def tabulate(kind: str, k: int, xy, order: int = 1) -> list[np.ndarray]:
    """Cached reference tabulation of a basis (see ``tabulate_coefficients``)."""
    xy = np.ascontiguousarray(np.atleast_2d(xy), dtype=float)
    return _cached_tab(kind, int(k), xy.tobytes(), len(xy), int(order))


def physical_derivatives(ref: list[np.ndarray], jinv: np.ndarray) -> list[np.ndarray]:
    """Map reference partials to physical ones for a batch of affine elements.

    Parameters
    ----------
    ref : list of arrays from ``tabulate`` (orders 0..d, d <= 4)
    jinv : (ne, 2, 2) inverse Jacobians of x = x0 + J xi

    Returns
    -------
    list of arrays of shape (ne, nb, d + 1, npts), same partial layout.
    """
    jinv = np.asarray(jinv, dtype=float)
    ne = jinv.shape[0]
    out = [np.broadcast_to(ref[0], (ne,) + ref[0].shape)]
    if len(ref) > 5:
        raise ValueError("physical derivatives are implemented up to order 4")
    specs = {
        1: "npa,eax->enpx",
        2: "npab,eax,eby->enpxy",
        3: "npabc,eax,eby,ecz->enpxyz",
        4: "npabcd,eaw,ebx,ecy,edz->enpwxyz",
    }
    for d in range(1, len(ref)):
        full = np.einsum(specs[d], _to_full(ref[d], d), *([jinv] * d), optimize=True)
        out.append(_from_full(full, d))
    return out


def _to_full(tab: np.ndarray, d: int) -> np.ndarray:
    """(nb, d+1, npts) distinct partials -> (nb, npts, 2, ..., 2) symmetric tensor."""
    nb, _, npts = tab.shape
    full = np.empty((nb, npts) + (2,) * d)
    for idx in np.ndindex(*(2,) * d):
        j = sum(idx)  # number of y-derivatives
        full[(slice(None), slice(None)) + idx] = tab[:, j, :]
    return full


def _from_full(full: np.ndarray, d: int) -> np.ndarray:
    ne, nb, npts = full.shape[:3]
    out = np.empty((ne, nb, d + 1, npts))
    for j in range(d + 1):
        idx = (0,) * (d - j) + (1,) * j
        out[:, :, j, :] = full[(slice(None), slice(None), slice(None)) + idx]
    return out


def basis_eval(k: int, point, order: int = 0, vertices=None) -> list[np.ndarray]:
    """Lagrange basis of P_k and its physical partials at one point.

    Parameters
    ----------
    k : int
        Degree, 1 <= k <= 8.
    point : array_like, shape (3,)
        Barycentric coordinates with respect to ``vertices``.
    order : int
        Highest derivative order, 0..3.
    vertices : array_like, shape (3, 2), optional
        Physical element; the reference triangle when omitted.

    Returns
    -------
    list ``D`` with ``D[d]`` of shape (nb, d + 1): ``D[d][:, j]`` is the
    physical partial ``d_x^(d-j) d_y^j`` of every basis function.
    """
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= 8:
        raise ValueError(f"k must be in [1, 8], got {k!r}")
    if order not in (0, 1, 2, 3):
        raise ValueError("order must be 0, 1, 2 or 3")
    lam = np.asarray(point, dtype=float)
    ref = tabulate("lagrange", k, lam[None, 1:], order)
    verts = REF_VERTICES if vertices is None else np.asarray(vertices, dtype=float)
    J = np.column_stack([verts[1] - verts[0], verts[2] - verts[0]])
    phys = physical_derivatives(ref, np.linalg.inv(J)[None])
    return [p[0, :, :, 0] for p in phys]
