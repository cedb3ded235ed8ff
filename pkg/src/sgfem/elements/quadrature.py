"""Quadrature on the reference triangle {(x, y): x, y >= 0, x + y <= 1}."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

MAX_DEGREE = 20


@dataclass(frozen=True, eq=False)
class QuadratureRule:
    """Points in barycentric coordinates and weights summing to 1/2."""

    degree: int
    points: np.ndarray  # (nq, 3) barycentric
    weights: np.ndarray  # (nq,)

    @property
    def xy(self) -> np.ndarray:
        """Reference (x, y) coordinates, i.e. barycentric entries 1 and 2."""
        return self.points[:, 1:]


@lru_cache(maxsize=None)
def quadrature_rule(degree: int) -> QuadratureRule:
    """Collapsed Gauss product rule exact for polynomials of total ``degree``.

    Gauss-Jacobi points (weight 1 - a) in the collapsed direction and
    Gauss-Legendre points in the other; positive weights, interior points.
    """
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"quadrature degree must be an integer in [1, {MAX_DEGREE}], got {degree!r}")
    m = int(degree) // 2 + 1
    xa, wa = roots_jacobi(m, 1.0, 0.0)
    xb, wb = roots_legendre(m)
    a = (1 + xa) / 2
    b = (1 + xb) / 2
    A, Bm = np.meshgrid(a, b, indexing="ij")
    W = np.outer(wa / 4, wb / 2)
    x = A.ravel()
    y = ((1 - A) * Bm).ravel()
    pts = np.column_stack([1 - x - y, x, y])
    w = W.ravel()
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(int(degree), pts, w)
