"""Material parameters, compliance and stiffness maps, and the Airy operator.

Symmetric 2x2 fields are passed as arrays whose last two axes are (2, 2).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class MaterialParams:
    """Lame parameters and gradient length scale."""

    lam: float = 1e5
    mu: float = 0.3
    iota: float = 0.0

    def __post_init__(self):
        if not self.mu > 0:
            raise ValueError(f"mu must be positive, got {self.mu}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")
        if self.iota < 0:
            raise ValueError(f"iota must be nonnegative, got {self.iota}")
        if self.iota > 1:
            warnings.warn(f"iota = {self.iota} exceeds 1, outside the analysed regime", stacklevel=2)

    @property
    def trace_coefficient(self) -> float:
        """c in A(s) = s / (2 mu) - c tr(s) I."""
        return self.lam / (2 * self.mu * (2 * self.mu + 2 * self.lam))

    def with_iota(self, iota: float) -> "MaterialParams":
        return MaterialParams(self.lam, self.mu, iota)


def _eye_like(t):
    return np.broadcast_to(np.eye(2), np.shape(t))


def trace(t):
    t = np.asarray(t, dtype=float)
    return t[..., 0, 0] + t[..., 1, 1]


def deviator(t):
    t = np.asarray(t, dtype=float)
    return t - 0.5 * trace(t)[..., None, None] * _eye_like(t)


def compliance_apply(params: MaterialParams, sigma):
    """A sigma = sigma / (2 mu) - lam tr(sigma) I / (2 mu (2 mu + 2 lam))."""
    s = np.asarray(sigma, dtype=float)
    return s / (2 * params.mu) - params.trace_coefficient * trace(s)[..., None, None] * _eye_like(s)


def stiffness_apply(params: MaterialParams, eps):
    """Inverse of ``compliance_apply``: 2 mu eps + lam tr(eps) I."""
    e = np.asarray(eps, dtype=float)
    return 2 * params.mu * e + params.lam * trace(e)[..., None, None] * _eye_like(e)


def compliance_voigt(params: MaterialParams) -> np.ndarray:
    """3x3 matrix M with (A s) : t = t_v^T M s_v for s_v = (s11, s12, s22).

    The off-diagonal component is weighted twice, as in the full contraction.
    """
    c = params.trace_coefficient
    tr = np.array([1.0, 0.0, 1.0])
    return np.diag([1.0, 2.0, 1.0]) / (2 * params.mu) - c * np.outer(tr, tr)


def airy(hessian):
    """Airy stress [[psi_yy, -psi_xy], [-psi_xy, psi_xx]] from the Hessian of psi.

    ``hessian`` may be a (.., 2, 2) array or a callable returning one.
    """
    H = np.asarray(hessian, dtype=float)
    out = np.empty_like(H)
    out[..., 0, 0] = H[..., 1, 1]
    out[..., 1, 1] = H[..., 0, 0]
    out[..., 0, 1] = -H[..., 0, 1]
    out[..., 1, 0] = -H[..., 1, 0]
    return out


def sym(t):
    t = np.asarray(t, dtype=float)
    return 0.5 * (t + np.swapaxes(t, -1, -2))
