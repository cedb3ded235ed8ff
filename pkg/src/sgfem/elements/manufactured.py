"""Closed-form manufactured solutions on the unit square.

Both cases are sums of separable products a(x) b(y), so every partial
derivative is a product of univariate derivatives evaluated in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .tensors import MaterialParams, stiffness_apply

PI = np.pi
E = np.e
SIN1 = np.sin(1.0)


# univariate factors: f(t, n) returns the n-th derivative


def _sin3(t, n):
    s, c = np.sin(PI * t), np.cos(PI * t)
    if n == 0:
        return s**3
    if n == 1:
        return 3 * PI * s**2 * c
    if n == 2:
        return 3 * PI**2 * s * (2 - 3 * s**2)
    if n == 3:
        return 3 * PI**3 * c * (2 - 9 * s**2)
    if n == 4:
        return 3 * PI**4 * s * (27 * s**2 - 20)
    raise ValueError(n)


_BUBBLE = np.polynomial.Polynomial([0, 0, 0, 1]) * np.polynomial.Polynomial([1, -1]) ** 3


def _bubble(t, n):
    return _BUBBLE.deriv(n)(t) if n else _BUBBLE(t)


def _g(t, n):
    # sin t (sin t - sin 1)
    if n == 0:
        return np.sin(t) ** 2 - SIN1 * np.sin(t)
    if n == 1:
        return np.sin(2 * t) - SIN1 * np.cos(t)
    if n == 2:
        return 2 * np.cos(2 * t) + SIN1 * np.sin(t)
    if n == 3:
        return -4 * np.sin(2 * t) + SIN1 * np.cos(t)
    raise ValueError(n)


def _h(t, n):
    # sin t (e^t - e)
    s, c, et = np.sin(t), np.cos(t), np.exp(t)
    if n == 0:
        return s * (et - E)
    if n == 1:
        return c * (et - E) + s * et
    if n == 2:
        return s * E + 2 * c * et
    if n == 3:
        return c * E - 2 * s * et + 2 * c * et
    raise ValueError(n)


def _shift(f, m):
    return lambda t, n: f(t, n + m)


@dataclass(frozen=True)
class SeparableField:
    """Scalar sum of terms coef * fx(x) * fy(y)."""

    terms: tuple

    def __call__(self, x, y, dx=0, dy=0):
        out = 0.0
        for coef, fx, fy in self.terms:
            out = out + coef * fx(x, dx) * fy(y, dy)
        return out


@dataclass(frozen=True)
class ManufacturedCase:
    """Exact displacement and stress of a manufactured problem.

    All evaluators take coordinate arrays ``x, y`` of equal shape ``s`` and
    return arrays of shape ``s + (2,)``, ``s + (2, 2)`` or ``s + (2, 2, 2)``.
    Gradients use the layout ``grad[..., a, b] = d_a (field)_b`` for vectors
    and ``grad[..., a, i, j] = d_a sigma_ij`` for stresses.
    """

    name: str
    params: MaterialParams
    u_components: tuple  # two SeparableField

    def _du(self, x, y, order):
        """All partials of u of the given order: (..., order + 1, 2)."""
        return np.stack(
            [np.stack([uc(x, y, order - j, j) for uc in self.u_components], axis=-1) for j in range(order + 1)],
            axis=-2,
        )

    def u(self, x, y):
        return self._du(x, y, 0)[..., 0, :]

    def grad_u(self, x, y):
        return self._du(x, y, 1)

    def strain(self, x, y):
        g = self.grad_u(x, y)
        return 0.5 * (g + np.swapaxes(g, -1, -2))

    def sigma(self, x, y):
        return stiffness_apply(self.params, self.strain(x, y))

    def grad_sigma(self, x, y):
        """d_a sigma_ij, shape (..., 2, 2, 2)."""
        H = self._du(x, y, 2)  # (..., 3, 2): u_xx, u_xy, u_yy
        out = []
        for a in range(2):
            # d_a grad u: entry [b, c] = d_a d_b u_c
            dgu = np.stack([H[..., a + b, :] for b in range(2)], axis=-2)
            eps = 0.5 * (dgu + np.swapaxes(dgu, -1, -2))
            out.append(stiffness_apply(self.params, eps))
        return np.stack(out, axis=-3)

    def f(self, x, y):
        """div sigma with (div s)_j = sum_i d_i s_ij."""
        g = self.grad_sigma(x, y)
        return g[..., 0, 0, :] + g[..., 1, 1, :]

    def normal_derivative_sigma(self, x, y, normal):
        g = self.grad_sigma(x, y)
        n = np.asarray(normal, dtype=float)
        return np.einsum("...aij,...a->...ij", g, np.broadcast_to(n, g.shape[:-3] + (2,)))


CASES = ("interior_smooth", "boundary_flux")


def manufactured_case(name: str, params: MaterialParams, bubble_mode: str = "gradient") -> ManufacturedCase:
    """Build a manufactured case.

    Parameters
    ----------
    name : {"interior_smooth", "boundary_flux"}
    params : MaterialParams
    bubble_mode : {"gradient", "diagonal"}
        Reading of the lambda^-1 bubble term of ``interior_smooth``:
        ``gradient`` adds lambda^-1 grad(b), ``diagonal`` adds
        lambda^-1 b (1, 1), with b = x^3 (1-x)^3 y^3 (1-y)^3.
    """
    if name == "interior_smooth":
        S = _sin3
        terms1 = [(1.0, S, _shift(S, 1))]
        terms2 = [(-1.0, _shift(S, 1), S)]
        if params.lam > 0:
            il = 1.0 / params.lam
            if bubble_mode == "gradient":
                terms1.append((il, _shift(_bubble, 1), _bubble))
                terms2.append((il, _bubble, _shift(_bubble, 1)))
            elif bubble_mode == "diagonal":
                terms1.append((il, _bubble, _bubble))
                terms2.append((il, _bubble, _bubble))
            else:
                raise ValueError(f"unknown bubble_mode {bubble_mode!r}")
        comps = (SeparableField(tuple(terms1)), SeparableField(tuple(terms2)))
    elif name == "boundary_flux":
        comps = (SeparableField(((1.0, _g, _g),)), SeparableField(((1.0, _h, _h),)))
    else:
        raise ValueError(f"unknown manufactured case {name!r}; expected one of {CASES}")
    return ManufacturedCase(name, params, comps)


def polynomial_case(params: MaterialParams) -> ManufacturedCase:
    """Displacement with quadratic separable factors (stress of degree 3)."""
    p = np.polynomial.Polynomial([0.3, -0.7, 0.4])
    q = np.polynomial.Polynomial([0.5, 0.2, -0.6])

    def mk(poly) -> Callable:
        return lambda t, n: poly.deriv(n)(t) if n else poly(t)

    comps = (
        SeparableField(((1.0, mk(p), mk(q)),)),
        SeparableField(((1.0, mk(q), mk(p)),)),
    )
    return ManufacturedCase("polynomial", params, comps)
