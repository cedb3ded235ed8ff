"""Convergence studies against manufactured solutions and the boundary-flux probe."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from ..elements.basis import REF_VERTICES, bernstein_coefficients, tabulate_coefficients
from ..elements.manufactured import CASES, manufactured_case
from ..elements.tensors import MaterialParams
from ..mesh import Triangulation, generate_structured, split
from ..spaces import DiscreteField, build_pair
from ..system import (
    RankDeficientError,
    assemble_b,
    build_system,
    error_norms,
    rank_and_cokernel,
    solve_saddle,
    stress_blocks,
)

log = logging.getLogger(__name__)

CSV_HEADER = ("hsize", "iota", "E_sigma_iota", "order_sigma", "E_u_L2", "order_u", "seconds")


class ConfigError(ValueError):
    """Invalid study configuration."""


@dataclass
class StudyConfig:
    """Convergence study settings.

    ``hsizes`` are parent mesh sizes 1/n of a structured base mesh of the
    unit square that is then split.  ``u_reference`` controls the
    displacement reference for iota > 0 (no closed form is available there).
    ``bounds`` holds optional acceptance limits checked by ``violations``.
    """

    pair: str = "lagrange"
    k: int = 4
    split: str = "ms"
    hsizes: list = field(default_factory=lambda: [0.5, 0.25, 1 / 6, 0.125])
    lam: float = 1e5
    mu: float = 0.3
    iotas: list = field(default_factory=lambda: [1e-4, 1e-8, 0.0])
    case: str = "interior_smooth"
    base: str = "diagonal"
    ms_r: float = 0.25
    rank_mode: str = "auto"
    u_reference: dict = field(default_factory=lambda: {"n": 32, "pair": "c2", "k": 5, "min_iota": 1e-3})
    bounds: dict = field(default_factory=dict)

    KEYS = {"lambda": "lam"}

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        names = {f for f in cls.__dataclass_fields__}
        kw = {}
        for key, val in d.items():
            name = cls.KEYS.get(key, key)
            if name not in names:
                raise ConfigError(f"unknown study option {key!r}")
            kw[name] = val
        cfg = cls(**kw)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.pair not in ("lagrange", "hermite", "c2"):
            raise ConfigError(f"unknown pair {self.pair!r}")
        if self.case not in CASES:
            raise ConfigError(f"unknown case {self.case!r}")
        if self.split not in ("none", "ms", "morgan_scott", "hct", "fishbone"):
            raise ConfigError(f"unknown split {self.split!r}")
        if not self.hsizes or any(h <= 0 for h in self.hsizes):
            raise ConfigError("hsizes must be positive")
        for h in self.hsizes:
            n = 1.0 / h
            if abs(n - round(n)) > 1e-9:
                raise ConfigError(f"hsize {h} is not 1/n")
        MaterialParams(self.lam, self.mu, 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    def mesh(self, hsize: float) -> Triangulation:
        m = generate_structured(self.base, int(round(1.0 / hsize)))
        if self.split == "none":
            return m
        return split(m, self.split, self.ms_r) if self.split in ("ms", "morgan_scott") else split(m, self.split)


@dataclass
class ConvergenceRow:
    hsize: float
    iota: float
    E_sigma_iota: float
    order_sigma: float | None
    E_u_L2: float | None
    order_u: float | None
    seconds: float
    pair: str
    params: dict
    u_reference: str = "exact"

    def csv_fields(self) -> list:
        return [self.hsize, self.iota, self.E_sigma_iota, self.order_sigma, self.E_u_L2, self.order_u,
                round(self.seconds, 3)]


def _order(e_prev, e, h_prev, h):
    if e_prev is None or e is None or e_prev <= 0 or e <= 0:
        return None
    return math.log(e_prev / e) / math.log(h_prev / h)


# ----------------------------------------------------------------------------
# reference displacement for iota > 0
# ----------------------------------------------------------------------------


class PointLocator:
    """Element lookup for scattered points via a KD-tree on centroids."""

    def __init__(self, mesh: Triangulation, candidates: int = 12):
        self.mesh = mesh
        self.tree = cKDTree(mesh.vertices[mesh.triangles].mean(axis=1))
        self.candidates = min(candidates, mesh.n_triangles)

    def locate(self, pts: np.ndarray, tol: float = 1e-10):
        """Element index and reference coordinates for each point, shape (n,), (n, 2)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        _, cand = self.tree.query(pts, k=self.candidates)
        cand = np.atleast_2d(cand)
        p0 = self.mesh.vertices[self.mesh.triangles[:, 0]]
        elem = np.full(len(pts), -1)
        ref = np.zeros((len(pts), 2))
        best = np.full(len(pts), -np.inf)
        for j in range(cand.shape[1]):
            e = cand[:, j]
            r = np.einsum("nab,nb->na", self.mesh.inverse_jacobians[e], pts - p0[e])
            slack = np.minimum(np.minimum(r[:, 0], r[:, 1]), 1.0 - r.sum(axis=1))
            better = slack > best
            best[better], elem[better], ref[better] = slack[better], e[better], r[better]
        if np.any(best < -tol):
            raise ValueError(f"{int(np.sum(best < -tol))} points lie outside the mesh")
        return elem, ref


def evaluate_at_points(field_: DiscreteField, pts: np.ndarray, locator: PointLocator | None = None) -> np.ndarray:
    """Values of a field at scattered physical points, shape (n, ncomp)."""
    locator = locator or PointLocator(field_.space.mesh)
    elem, ref = locator.locate(pts)
    k = field_.space.scalar.k
    phi = tabulate_coefficients(bernstein_coefficients(k), ref, 0)[0][:, 0, :]  # (nb, n)
    lc = field_.local_coefficients()[elem]  # (n, ncomp, nb)
    return np.einsum("nci,in->nc", lc, phi)


class ReferenceSolution:
    """Fine-mesh solution of the same problem used as displacement reference."""

    def __init__(self, config: StudyConfig, iota: float):
        ref = config.u_reference
        self.n = int(ref.get("n", 32))
        params = MaterialParams(config.lam, config.mu, iota)
        case = manufactured_case(config.case, params)
        mesh = generate_structured("diagonal", self.n)
        S, Q = build_pair(mesh, ref.get("pair", "c2"), int(ref.get("k", 5)))
        t0 = time.perf_counter()
        self.sigma, self.u = solve_saddle(build_system(S, Q, params, case.f))
        self.seconds = time.perf_counter() - t0
        self.locator = PointLocator(mesh)
        self.label = f"{ref.get('pair', 'c2')}_k{ref.get('k', 5)}_n{self.n}"

    def __call__(self, x, y):
        pts = np.stack([np.asarray(x), np.asarray(y)], axis=-1)
        vals = evaluate_at_points(self.u, pts.reshape(-1, 2), self.locator)
        return vals.reshape(pts.shape[:-1] + (2,))


# ----------------------------------------------------------------------------
# study driver
# ----------------------------------------------------------------------------


@dataclass
class StudyResult:
    config: StudyConfig
    rows: list
    rank_reports: list

    def by_iota(self, iota: float) -> list:
        return [r for r in self.rows if r.iota == iota]

    def final_orders(self) -> dict:
        """Last sigma- and u-order per iota."""
        return {i: (self.by_iota(i)[-1].order_sigma, self.by_iota(i)[-1].order_u) for i in self.config.iotas}

    def violations(self) -> list[str]:
        """Acceptance bounds from ``config.bounds`` that the rows violate.

        Keys: ``order_sigma_min``, ``order_sigma_max``, ``order_spread_max``
        (spread of final sigma-orders over iotas) and ``monotone`` (errors
        strictly decrease along each refinement sequence).
        """
        b = self.config.bounds
        out = []
        finals = self.final_orders()
        for iota, (osig, _) in finals.items():
            if osig is None:
                continue
            if "order_sigma_min" in b and osig < b["order_sigma_min"]:
                out.append(f"iota={iota}: order_sigma {osig:.3f} < {b['order_sigma_min']}")
            if "order_sigma_max" in b and osig > b["order_sigma_max"]:
                out.append(f"iota={iota}: order_sigma {osig:.3f} > {b['order_sigma_max']}")
        if "order_spread_max" in b:
            vals = [o for o, _ in finals.values() if o is not None]
            if vals and max(vals) - min(vals) > b["order_spread_max"]:
                out.append(f"order_sigma spread {max(vals) - min(vals):.3f} > {b['order_spread_max']}")
        if b.get("monotone", False):
            for iota in self.config.iotas:
                errs = [r.E_sigma_iota for r in self.by_iota(iota)]
                if any(e1 >= e0 for e0, e1 in zip(errs, errs[1:])):
                    out.append(f"iota={iota}: E_sigma_iota not strictly decreasing")
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("# config " + json.dumps(self.config.to_dict(), sort_keys=True) + "\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in self.rows:
            w.writerow(["" if v is None else v for v in r.csv_fields()])
        return buf.getvalue()


def convergence_study(config: StudyConfig | dict, check_rank: bool = True) -> StudyResult:
    """Solve the configured problem on each mesh and tabulate errors and orders.

    Every mesh is checked for a surjective divergence before any solve; a
    deficiency aborts with ``RankDeficientError``.  Sigma errors are taken
    against the exact stress for every iota.  Displacement errors use the
    exact displacement for ``iota < u_reference['min_iota']`` (exact at
    iota = 0, indicative above) and a fine reference solution otherwise.
    """
    cfg = config if isinstance(config, StudyConfig) else StudyConfig.from_dict(config)
    cfg.validate()
    meshes, spaces, reports = [], [], []
    for h in cfg.hsizes:
        m = cfg.mesh(h)
        S, Q = build_pair(m, cfg.pair, cfg.k)
        B = assemble_b(S, Q)
        if check_rank:
            rep = rank_and_cokernel(B, mode=cfg.rank_mode)
            reports.append({"hsize": h, **rep.to_dict()})
            if not rep.trusted or rep.deficiency > 0:
                raise RankDeficientError(rep)
        meshes.append(m)
        spaces.append((S, Q, B, stress_blocks(S)))
    rows = []
    min_ref = cfg.u_reference.get("min_iota", 1e-3)
    for iota in cfg.iotas:
        params = MaterialParams(cfg.lam, cfg.mu, iota)
        case = manufactured_case(cfg.case, params)
        reference = None
        if iota > 0 and iota >= min_ref:
            reference = ReferenceSolution(cfg, iota)
        prev = None
        for h, (S, Q, B, blocks) in zip(cfg.hsizes, spaces):
            t0 = time.perf_counter()
            sigma_h, u_h = solve_saddle(build_system(S, Q, params, case.f, blocks=blocks, B=B))
            e = error_norms(sigma_h, u_h, case, params, u_exact=reference)
            row = ConvergenceRow(
                hsize=h, iota=iota, E_sigma_iota=e["E_sigma_iota"],
                order_sigma=None if prev is None else _order(prev.E_sigma_iota, e["E_sigma_iota"], prev.hsize, h),
                E_u_L2=e["E_u_L2"], order_u=None if prev is None else _order(prev.E_u_L2, e["E_u_L2"], prev.hsize, h),
                seconds=time.perf_counter() - t0, pair=cfg.pair, params={"lambda": cfg.lam, "mu": cfg.mu, "iota": iota},
                u_reference=("exact" if iota == 0 else "exact_iota0") if reference is None else reference.label,
            )
            log.info("h=%g iota=%g E_sigma=%.3e order=%s", h, iota, row.E_sigma_iota, row.order_sigma)
            rows.append(row)
            prev = row
    return StudyResult(cfg, rows, reports)


# ----------------------------------------------------------------------------
# boundary flux probe
# ----------------------------------------------------------------------------


def max_nodal_second_derivative(sigma_h: DiscreteField) -> float:
    """max over nodes, incident elements and components of |d_x d_y sigma_h|."""
    tab = sigma_h.tabulate(REF_VERTICES, 2)[2]  # (nt, 3, 3, 3): xx, xy, yy
    return float(np.abs(tab[:, :, 1, :]).max())


def boundary_flux_probe(cases=("interior_smooth", "boundary_flux"), iotas=(1e-3, 1e-4, 1e-5, 1e-6),
                        levels=(2, 4, 8, 16), pair: str = "c2", k: int = 5, lam: float = 1.0, mu: float = 0.3,
                        base: str = "diagonal") -> list[dict]:
    """Discrete max of the mixed second derivative of sigma_h at mesh nodes.

    Rows are emitted per (case, iota, level) with ``n`` the number of
    subdivisions per side.  Pair and spaces are shared across iota.
    """
    out = []
    built = []
    for n in levels:
        m = generate_structured(base, n)
        S, Q = build_pair(m, pair, k)
        built.append((n, S, Q, assemble_b(S, Q), stress_blocks(S)))
    for name in cases:
        for iota in iotas:
            params = MaterialParams(lam, mu, iota)
            case = manufactured_case(name, params)
            for n, S, Q, B, blocks in built:
                t0 = time.perf_counter()
                sigma_h, _ = solve_saddle(build_system(S, Q, params, case.f, blocks=blocks, B=B))
                out.append({
                    "case": name, "iota": iota, "n": n, "hsize": 1.0 / n,
                    "max_d2_sigma": max_nodal_second_derivative(sigma_h),
                    "seconds": round(time.perf_counter() - t0, 3),
                })
    return out
