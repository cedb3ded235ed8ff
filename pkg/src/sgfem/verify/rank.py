"""Measured versus predicted divergence rank deficiency, and cokernel matching."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ..mesh import EPS_SING, Triangulation, classify_mesh
from ..spaces import build_pair
from ..system import RankReport, assemble_b, q_mass, rank_and_cokernel
from .functionals import CokernelFunctional, predicted_functionals

log = logging.getLogger(__name__)

ANGLE_TOL = 1e-6


def census(mesh: Triangulation, eps_sing: float = EPS_SING) -> dict:
    classes = classify_mesh(mesh, eps_sing)
    out = {"TypeI": [], "TypeII": [], "by_kind": {}}
    for v, c in enumerate(classes):
        out["by_kind"].setdefault(c.kind, []).append(v)
        if c.is_type_I:
            out["TypeI"].append(v)
        elif c.is_type_II:
            out["TypeII"].append(v)
    return out


def predicted_deficiency(pair: str, n_type_i: int, n_type_ii: int) -> int:
    if pair == "lagrange":
        return 3 * n_type_i + n_type_ii
    if pair == "hermite":
        return n_type_i
    if pair == "c2":
        return 0
    raise ValueError(f"unknown pair {pair!r}")


@dataclass
class DeficiencyReport:
    pair: str
    k: int
    measured: int
    predicted: int
    rank: RankReport = field(repr=False)
    census: dict = field(repr=False)
    seconds: float = 0.0
    spaces: tuple = field(default=(), repr=False)
    B: object = field(default=None, repr=False)

    @property
    def matches(self) -> bool:
        return self.rank.trusted and self.measured == self.predicted

    def to_dict(self) -> dict:
        return {
            "pair": self.pair,
            "k": self.k,
            "measured": self.measured,
            "predicted": self.predicted,
            "match": self.matches,
            "trusted": self.rank.trusted,
            "rank": self.rank.to_dict(),
            "census": {"TypeI": self.census["TypeI"], "TypeII": self.census["TypeII"]},
            "seconds": round(self.seconds, 3),
        }


def rank_deficiency_report(mesh: Triangulation, pair: str, k: int, mode: str = "auto",
                           eps_sing: float = EPS_SING) -> DeficiencyReport:
    """Deficiency of div on the (pair, k) spaces and the per-vertex prediction.

    A mismatch is reported, not raised; ``k < 7`` lies outside the range
    where the prediction is proven.
    """
    t0 = time.perf_counter()
    S, Q = build_pair(mesh, pair, k)
    B = assemble_b(S, Q)
    rep = rank_and_cokernel(B, mode=mode)
    cen = census(mesh, eps_sing)
    pred = predicted_deficiency(pair, len(cen["TypeI"]), len(cen["TypeII"]))
    if not rep.trusted:
        log.warning("inconclusive rank: gap ratio %.2e", rep.gap_ratio)
    return DeficiencyReport(pair, k, rep.deficiency, pred, rep, cen, time.perf_counter() - t0, (S, Q), B)


@dataclass
class CokernelMatch:
    max_angle: float
    per_vertex: dict
    functionals: list[CokernelFunctional] = field(repr=False)
    dims: tuple

    @property
    def ok(self) -> bool:
        return self.dims[0] == self.dims[1] and self.max_angle <= ANGLE_TOL

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "max_angle": self.max_angle,
            "measured_dim": self.dims[0],
            "predicted_dim": self.dims[1],
            "per_vertex": {str(k): v for k, v in self.per_vertex.items()},
        }


def cokernel_match(report: DeficiencyReport, eps_sing: float = EPS_SING) -> CokernelMatch:
    """Principal angles between the measured cokernel and the predicted functionals.

    A left null vector y of B gives the functional c -> (M_q y) . c on reduced
    displacement coordinates; predicted functionals are restricted to the
    same coordinates.  Per vertex, the residual is the distance of that
    vertex's predicted functionals from the measured span.
    """
    S, Q = report.spaces
    M = q_mass(Q)
    measured = M @ report.rank.left_nullspace
    funcs = predicted_functionals(Q, eps_sing)
    if not funcs:
        return CokernelMatch(0.0 if measured.shape[1] == 0 else np.pi / 2, {}, funcs, (measured.shape[1], 0))
    P = np.column_stack([f.reduced for f in funcs])
    dims = (int(measured.shape[1]), int(np.linalg.matrix_rank(P, tol=1e-10 * np.abs(P).max())))
    if measured.shape[1] == 0:
        return CokernelMatch(np.pi / 2, {}, funcs, dims)
    angle = float(np.max(sla.subspace_angles(measured, P)))
    Qm = sla.orth(measured)
    per_vertex: dict = {}
    for f in funcs:
        r = f.reduced / np.linalg.norm(f.reduced)
        resid = float(np.linalg.norm(r - Qm @ (Qm.T @ r)))
        per_vertex[f.vertex] = max(per_vertex.get(f.vertex, 0.0), resid)
    return CokernelMatch(angle, per_vertex, funcs, dims)
