"""Reference-element machinery: quadrature, bases, tensors, manufactured data."""
from .basis import basis_eval, bernstein_coefficients, lagrange_coefficients, multi_indices, tabulate
from .manufactured import CASES, ManufacturedCase, manufactured_case
from .quadrature import QuadratureRule, quadrature_rule
from .tensors import (
    MaterialParams,
    airy,
    compliance_apply,
    compliance_voigt,
    deviator,
    stiffness_apply,
    trace,
)

__all__ = [
    "CASES",
    "ManufacturedCase",
    "MaterialParams",
    "QuadratureRule",
    "airy",
    "basis_eval",
    "bernstein_coefficients",
    "compliance_apply",
    "compliance_voigt",
    "deviator",
    "lagrange_coefficients",
    "manufactured_case",
    "multi_indices",
    "quadrature_rule",
    "stiffness_apply",
    "tabulate",
    "trace",
]
