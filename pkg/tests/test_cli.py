import json

import numpy as np
import pytest

from sgfem.cli import main
from sgfem.mesh import load_mesh


def run(capsys, *argv):
    code = main(list(map(str, argv)))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def crisscross(tmp_path, capsys):
    p = tmp_path / "patch.json"
    assert run(capsys, "mesh", "gen", "--kind", "crisscross", "--n", 1, "-o", p)[0] == 0
    return p


def test_mesh_gen_writes_four_triangles(crisscross):
    assert load_mesh(crisscross).n_triangles == 4


def test_mesh_analyze_one_type_i(crisscross, capsys):
    code, out, _ = run(capsys, "mesh", "analyze", crisscross)
    doc = json.loads(out)
    assert code == 0 and doc["counts"]["TypeI"] == 1
    assert doc["config"]["action"] == "analyze" and "timestamp" in doc


def test_mesh_split_removes_singular_vertices(crisscross, tmp_path, capsys):
    out_mesh = tmp_path / "ms.json"
    code, out, _ = run(capsys, "mesh", "split", "--kind", "ms", crisscross, "-o", out_mesh)
    doc = json.loads(out)
    assert code == 0
    assert not {"TypeI", "TypeII-nondegenerate", "TypeII-1", "TypeII-2", "TypeII-3"} & set(doc["counts"])
    assert load_mesh(out_mesh).n_triangles == 28


def test_mesh_report_file(crisscross, tmp_path, capsys):
    rep = tmp_path / "rep.json"
    assert run(capsys, "mesh", "analyze", crisscross, "--report", rep)[0] == 0
    assert json.loads(rep.read_text())["n_triangles"] == 4


def test_rank_crisscross_lagrange(crisscross, capsys):
    code, out, _ = run(capsys, "rank", "--pair", "lagrange", "--k", 7, crisscross)
    doc = json.loads(out)
    assert code == 0
    assert doc["measured"] == 3 and doc["predicted"] == 3 and doc["match"]
    assert doc["cokernel"]["ok"]


def test_rank_hermite_threeline(tmp_path, capsys):
    p = tmp_path / "threeline.json"
    run(capsys, "mesh", "gen", "--kind", "threeline", "-o", p)
    code, out, _ = run(capsys, "rank", "--pair", "hermite", "--k", 7, p)
    assert code == 0 and json.loads(out)["measured"] == 0


def test_rank_c2(crisscross, capsys):
    code, out, _ = run(capsys, "rank", "--pair", "c2", "--k", 7, crisscross)
    assert code == 0 and json.loads(out)["measured"] == 0


def test_rank_low_degree_note(crisscross, capsys):
    code, out, _ = run(capsys, "rank", "--k", 4, crisscross)
    assert "note" in json.loads(out)


def test_solve_and_export(tmp_path, capsys):
    mesh = tmp_path / "t.json"
    run(capsys, "mesh", "gen", "--kind", "triangle", "-o", mesh)
    ms = tmp_path / "ms.json"
    run(capsys, "mesh", "split", mesh, "-o", ms)
    exp = tmp_path / "exp"
    code, out, _ = run(capsys, "solve", ms, "--check-rank", "--export", exp, "--iota", 1e-3)
    doc = json.loads(out)
    assert code == 0 and doc["errors"]["E_sigma_iota"] > 0
    assert len(np.loadtxt(exp / "sigma.txt")) == doc["dim_sigma"]
    line = (exp / "A.coo").read_text().splitlines()[0].split()
    float(line[2])


def test_solve_rank_deficient_exits(crisscross, capsys):
    code, out, _ = run(capsys, "solve", crisscross, "--k", 7, "--check-rank")
    assert code == 2 and json.loads(out)["rank"]["deficiency"] == 3


def test_converge_small(tmp_path, capsys):
    csv = tmp_path / "c.csv"
    ranks = tmp_path / "r.json"
    code, _, _ = run(capsys, "converge", "--pair", "hermite", "--split", "hct", "--hsizes", 0.5, 0.25,
                     "--iotas", 0.0, "-o", csv, "--rank-json", ranks)
    lines = csv.read_text().splitlines()
    assert code == 0
    assert lines[1] == "hsize,iota,E_sigma_iota,order_sigma,E_u_L2,order_u,seconds"
    assert len(lines) == 4
    assert len(json.loads(ranks.read_text())["rank_reports"]) == 2


def test_converge_acceptance_violation(capsys):
    study = json.dumps({"bounds": {"order_sigma_min": 9.0}})
    code, _, err = run(capsys, "converge", "--pair", "hermite", "--split", "hct", "--hsizes", 0.5, 0.25,
                       "--iotas", 0.0, "--study", study)
    assert code == 4 and "acceptance violation" in err


def test_converge_bad_study_key(capsys):
    code, _, err = run(capsys, "converge", "--study", json.dumps({"hsize": [0.5]}))
    assert code == 2 and "hsize" in err


def test_probe_boundary(capsys):
    code, out, _ = run(capsys, "probe-boundary", "--cases", "boundary_flux", "--iotas", 1e-3, "--levels", 1, 2)
    rows = json.loads(out)["rows"]
    assert code == 0 and [r["n"] for r in rows] == [1, 2]
    assert json.loads(out)["config"]["pair"] == "c2"


def test_audit(crisscross, capsys):
    code, out, _ = run(capsys, "audit", crisscross, "--bubble")
    doc = json.loads(out)
    assert code == 0
    assert doc["bubble"]["rank_div"] == 35
    assert doc["meshes"][str(crisscross)]["alternating_sum"] == 3


def test_config_file(crisscross, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"pair": "hermite", "k": 7}))
    code, out, _ = run(capsys, "--config", cfg, "rank", crisscross)
    doc = json.loads(out)
    assert code == 0 and doc["pair"] == "hermite" and doc["measured"] == 1


def test_config_file_for_mesh_action(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "diagonal", "n": 2}))
    code, out, _ = run(capsys, "--config", cfg, "mesh", "gen")
    assert code == 0 and json.loads(out)["n_triangles"] == 8


def test_config_unknown_key(crisscross, tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"degree": 7}))
    code, _, err = run(capsys, "--config", cfg, "rank", crisscross)
    assert code == 2 and "degree" in err


def test_unknown_flag(crisscross, capsys):
    assert run(capsys, "rank", "--frobnicate", crisscross)[0] == 2


def test_bad_degree(crisscross, capsys):
    code, _, err = run(capsys, "rank", "--k", 12, crisscross)
    assert code == 2 and "degree" in err


def test_missing_mesh_file(tmp_path, capsys):
    assert run(capsys, "mesh", "analyze", tmp_path / "nope.json")[0] == 2


def test_output_deterministic_modulo_timestamp(crisscross, capsys):
    docs = []
    for _ in range(2):
        _, out, _ = run(capsys, "rank", "--k", 7, "--pair", "hermite", crisscross)
        d = json.loads(out)
        d.pop("timestamp")
        d.pop("seconds")
        docs.append(json.dumps(d, sort_keys=True))
    assert docs[0] == docs[1]
