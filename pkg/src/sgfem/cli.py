"""Command-line entry point.

Exit codes: 0 success, 2 precondition or configuration error, 3 inconclusive
numerical evidence, 4 acceptance violation.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .elements.manufactured import CASES, manufactured_case
from .elements.tensors import MaterialParams
from .mesh import (
    EPS_SING,
    MeshError,
    classification_report,
    generate_structured,
    hexagon_patch,
    load_mesh,
    save_mesh,
    single_triangle,
    split,
)
from .spaces import PAIRS, build_pair
from .system import RankDeficientError, build_system, error_norms, export_coo, solve_saddle

log = logging.getLogger("sgfem")

EXIT_OK, EXIT_CONFIG, EXIT_INCONCLUSIVE, EXIT_ACCEPTANCE = 0, 2, 3, 4


class CLIError(Exception):
    def __init__(self, message: str, code: int = EXIT_CONFIG):
        super().__init__(message)
        self.code = code


def _emit(doc, path) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def _header(args) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return {"config": cfg, "version": __version__, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}


def _load(path) -> object:
    try:
        return load_mesh(path)
    except MeshError as exc:
        raise CLIError(str(exc)) from exc


def _params(args) -> MaterialParams:
    try:
        return MaterialParams(args.lam, args.mu, args.iota)
    except ValueError as exc:
        raise CLIError(str(exc)) from exc


# ----------------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------------


def cmd_mesh(args) -> int:
    if args.action == "gen":
        if args.kind in ("diagonal", "crisscross"):
            mesh = generate_structured(args.kind, args.n)
        elif args.kind == "threeline":
            mesh = hexagon_patch(args.delta)
        else:
            mesh = single_triangle()
    elif args.action == "split":
        mesh = split(_load(args.input), args.kind, args.r)
    else:
        mesh = _load(args.input)
    if args.output and args.action != "analyze":
        save_mesh(mesh, args.output)
    report = classification_report(mesh, args.eps_sing)
    counts: dict = {}
    for row in report:
        counts[row["kind"]] = counts.get(row["kind"], 0) + 1
    doc = {**_header(args), "n_vertices": mesh.n_vertices, "n_triangles": mesh.n_triangles,
           "counts": counts, "vertices": report}
    out = args.report or (args.output if args.action == "analyze" else None)
    _emit(doc, out)
    return EXIT_OK


def cmd_rank(args) -> int:
    from .verify.rank import cokernel_match, rank_deficiency_report

    mesh = _load(args.mesh)
    rep = rank_deficiency_report(mesh, args.pair, args.k, mode=args.mode, eps_sing=args.eps_sing)
    doc = {**_header(args), **rep.to_dict()}
    if rep.k < 7:
        doc["note"] = "k < 7 lies outside the proven range of the prediction; measured value reported as is"
    if rep.rank.trusted and rep.measured > 0:
        doc["cokernel"] = cokernel_match(rep, args.eps_sing).to_dict()
    _emit(doc, args.output)
    if not rep.rank.trusted:
        print(f"inconclusive rank: singular value gap {rep.rank.gap_ratio:.2e} below 1e4", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def cmd_solve(args) -> int:
    mesh = _load(args.mesh)
    params = _params(args)
    case = manufactured_case(args.case, params)
    S, Q = build_pair(mesh, args.pair, args.k)
    system = build_system(S, Q, params, case.f)
    try:
        sigma_h, u_h = solve_saddle(system, check_rank=args.check_rank)
    except RankDeficientError as exc:
        _emit({**_header(args), "error": str(exc), "rank": exc.report.to_dict()}, args.output)
        return EXIT_INCONCLUSIVE if not exc.report.trusted else EXIT_CONFIG
    errs = error_norms(sigma_h, u_h, case, params)
    if args.export:
        d = Path(args.export)
        d.mkdir(parents=True, exist_ok=True)
        export_coo(system.A, d / "A.coo")
        export_coo(system.B, d / "B.coo")
        np.savetxt(d / "sigma.txt", sigma_h.coeffs)
        np.savetxt(d / "u.txt", u_h.coeffs)
    doc = {**_header(args), "dim_sigma": S.dim, "dim_u": Q.dim, "errors": errs,
           "note": "E_u_L2 is measured against the iota = 0 displacement"}
    _emit(doc, args.output)
    return EXIT_OK


STUDY_KEYS = ("pair", "k", "split", "hsizes", "lambda", "mu", "iotas", "case", "base", "ms_r", "rank_mode",
              "u_reference", "bounds")


def cmd_converge(args) -> int:
    from .verify.convergence import ConfigError, StudyConfig, convergence_study

    study = dict(args.study or {})
    for key, attr in (("pair", "pair"), ("k", "k"), ("split", "split"), ("case", "case")):
        study.setdefault(key, getattr(args, attr))
    if args.hsizes:
        study["hsizes"] = args.hsizes
    if args.iotas:
        study["iotas"] = args.iotas
    study.setdefault("lambda", args.lam)
    study.setdefault("mu", args.mu)
    try:
        cfg = StudyConfig.from_dict(study)
    except (ConfigError, ValueError, TypeError) as exc:
        raise CLIError(str(exc)) from exc
    try:
        result = convergence_study(cfg)
    except RankDeficientError as exc:
        _emit({**_header(args), "error": str(exc), "rank": exc.report.to_dict()}, args.rank_json or "-")
        return EXIT_INCONCLUSIVE if not exc.report.trusted else EXIT_CONFIG
    text = result.to_csv()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.rank_json:
        _emit({**_header(args), "rank_reports": result.rank_reports}, args.rank_json)
    bad = result.violations()
    for msg in bad:
        print(f"acceptance violation: {msg}", file=sys.stderr)
    return EXIT_ACCEPTANCE if bad else EXIT_OK


def cmd_probe(args) -> int:
    from .verify.convergence import boundary_flux_probe

    rows = boundary_flux_probe(cases=args.cases, iotas=args.iotas or (1e-3, 1e-4, 1e-5, 1e-6), levels=args.levels,
                               pair=args.pair, k=args.k, lam=args.lam, mu=args.mu)
    _emit({**_header(args), "rows": rows}, args.output)
    return EXIT_OK


def cmd_audit(args) -> int:
    from .verify.audits import bubble_complex_audit, dimension_audit

    doc = _header(args)
    if args.bubble:
        if not 7 <= args.k <= 8:
            raise CLIError("bubble audit needs 7 <= k <= 8")
        doc["bubble"] = bubble_complex_audit(args.k)
    doc["meshes"] = {str(p): dimension_audit(_load(p), args.k) for p in args.meshes}
    _emit(doc, args.output)
    ok = all(a["dim_sigma"] == a["dim_sigma_formula"] and a["dim_q"] == a["dim_q_formula"]
             for a in doc["meshes"].values())
    return EXIT_OK if ok else EXIT_ACCEPTANCE


# ----------------------------------------------------------------------------
# parser
# ----------------------------------------------------------------------------


def _common(p, pair=True, material=True):
    if pair:
        p.add_argument("--pair", choices=sorted(PAIRS), default="lagrange")
        p.add_argument("--k", type=int, default=4)
    if material:
        p.add_argument("--lambda", dest="lam", type=float, default=1e5)
        p.add_argument("--mu", type=float, default=0.3)
    p.add_argument("--eps-sing", dest="eps_sing", type=float, default=EPS_SING)
    p.add_argument("-o", "--output", default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="sgfem", description="Mixed FEM toolkit for stress gradient elasticity.")
    ap.add_argument("--config", help="JSON file with option values for the subcommand")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("mesh", help="generate, split or analyze meshes")
    msub = p.add_subparsers(dest="action", required=True)
    g = msub.add_parser("gen", help="structured meshes and patches")
    g.add_argument("--kind", choices=("diagonal", "crisscross", "threeline", "triangle"), default="crisscross")
    g.add_argument("--n", type=int, default=1)
    g.add_argument("--delta", type=float, default=0.0, help="center offset of the three-line patch")
    s_ = msub.add_parser("split", help="refine every triangle of a mesh")
    s_.add_argument("input")
    s_.add_argument("--kind", choices=("ms", "morgan_scott", "hct", "fishbone"), default="ms")
    s_.add_argument("--r", type=float, default=0.25, help="interior point parameter of the MS split")
    a = msub.add_parser("analyze", help="classify the vertices of a mesh")
    a.add_argument("input")
    for q in (g, s_, a):
        q.add_argument("--report", default=None, help="classification report path (default stdout)")
        _common(q, pair=False, material=False)
        q.set_defaults(func=cmd_mesh)

    p = sub.add_parser("rank", help="divergence rank deficiency and cokernel match")
    p.add_argument("mesh")
    p.add_argument("--mode", choices=("auto", "dense_svd", "sparse_qr"), default="auto")
    _common(p, material=False)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("solve", help="solve a manufactured problem on a mesh")
    p.add_argument("mesh")
    p.add_argument("--iota", type=float, default=0.0)
    p.add_argument("--case", choices=CASES, default="interior_smooth")
    p.add_argument("--check-rank", action="store_true")
    p.add_argument("--export", default=None, help="directory for COO matrices and coefficients")
    _common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("converge", help="convergence study, CSV output")
    p.add_argument("--split", default="ms")
    p.add_argument("--case", choices=CASES, default="interior_smooth")
    p.add_argument("--hsizes", type=float, nargs="+")
    p.add_argument("--iotas", type=float, nargs="+")
    p.add_argument("--study", type=json.loads, default=None, help="study config as inline JSON")
    p.add_argument("--rank-json", default=None)
    _common(p)
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("probe-boundary", help="max nodal second derivative of sigma_h per level")
    p.add_argument("--cases", nargs="+", choices=CASES, default=list(CASES))
    p.add_argument("--iotas", type=float, nargs="+")
    p.add_argument("--levels", type=int, nargs="+", default=[2, 4, 8, 16])
    _common(p)
    p.set_defaults(func=cmd_probe, pair="c2", k=5, lam=1.0)

    p = sub.add_parser("audit", help="dimension audits of the smooth complex")
    p.add_argument("meshes", nargs="*")
    p.add_argument("--bubble", action="store_true")
    p.add_argument("--k", type=int, default=7)
    p.add_argument("-o", "--output", default=None)
    p.set_defaults(func=cmd_audit)
    return ap


def _apply_config(parser, argv) -> list:
    """Turn a JSON config into command-line defaults; explicit flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return argv
    try:
        cfg = json.loads(Path(known.config).read_text())
    except (OSError, ValueError) as exc:
        raise CLIError(f"cannot read config {known.config}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CLIError("config must be a JSON object")
    cmd = next((a for a in argv if not a.startswith("-") and a in _subparsers(parser)), None)
    if cmd is None:
        raise CLIError("no subcommand given")
    sub = _subparsers(parser)[cmd]
    if cmd == "mesh":
        rest = argv[argv.index(cmd) + 1:]
        action = next((a for a in rest if a in _subparsers(sub)), None)
        if action is None:
            raise CLIError("mesh needs an action")
        sub = _subparsers(sub)[action]
    dests = {a.dest: a for a in sub._actions}
    aliases = {"lambda": "lam", "eps-sing": "eps_sing"}
    study = {}
    for key, val in cfg.items():
        dest = aliases.get(key, key.replace("-", "_"))
        if cmd == "converge" and key in STUDY_KEYS:
            study[key] = val
        elif dest in dests:
            sub.set_defaults(**{dest: val})
        else:
            raise CLIError(f"unknown config option {key!r} for {cmd}")
    if study:
        sub.set_defaults(study=study)
    return argv


def _subparsers(parser) -> dict:
    for a in parser._actions:
        if isinstance(a, argparse._SubParsersAction):
            return a.choices
    return {}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config(parser, argv)
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:  # argparse reports usage errors with status 2
            return int(exc.code or 0)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (MeshError, OSError, ValueError) as exc:  # ValueError: bad degree, pair or size limit
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
