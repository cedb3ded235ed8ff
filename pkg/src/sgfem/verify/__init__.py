"""Rank and cokernel reports, audits, closed-form probes and convergence studies."""
from .audits import bubble_complex_audit, dimension_audit
from .convergence import (
    ConvergenceRow,
    ReferenceSolution,
    StudyConfig,
    StudyResult,
    boundary_flux_probe,
    convergence_study,
)
from .functionals import CokernelFunctional, predicted_functionals
from .probes import (
    necessary_condition_probe,
    nzt_basis_check,
    perturbed_threeline_infsup,
    surjectivity_witness,
)
from .rank import cokernel_match, predicted_deficiency, rank_deficiency_report

__all__ = [
    "CokernelFunctional",
    "ConvergenceRow",
    "ReferenceSolution",
    "StudyConfig",
    "StudyResult",
    "boundary_flux_probe",
    "bubble_complex_audit",
    "cokernel_match",
    "convergence_study",
    "dimension_audit",
    "necessary_condition_probe",
    "nzt_basis_check",
    "perturbed_threeline_infsup",
    "predicted_deficiency",
    "predicted_functionals",
    "rank_deficiency_report",
    "surjectivity_witness",
]
