import csv
import io
import json
import subprocess
import sys
from pathlib import Path

import pytest

from entropic_pricer.cli import CSV_COLUMNS, run

ROOT = Path(__file__).resolve().parents[1]
TRI = str(ROOT / "scenarios" / "trinomial.yaml")
BASIS = str(ROOT / "scenarios" / "basisrisk.yaml")

TREE = """tree:
  - {id: root, parent: null, prob: 1, prices: [1, 1.0]}
  - {id: d, parent: root, prob: 1/3, prices: [1, 0.8]}
  - {id: m, parent: root, prob: 1/3, prices: [1, 1.0]}
  - {id: u, parent: root, prob: 1/3, prices: [1, 1.3]}
"""


def _run(capsys, *argv):
    code = run(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def _json(capsys, *argv):
    code, out, err = _run(capsys, *argv)
    assert code == 0, err
    return json.loads(out)


def test_price(capsys):
    rep = _json(capsys, "price", TRI)
    assert rep["command"] == "price" and len(rep["digest"]) == 64
    q = rep["result"]["quotes"][0]
    assert q["writer"] >= q["buyer"]
    assert set(rep["tolerances"]) == {"newton_tol", "max_iter", "replication_tol"}
    assert "wall_time" not in rep
    assert rep["diagnostics"]["max_martingale_residual"] <= 1e-10


def test_price_gamma_grid_and_jobs(capsys):
    one = _json(capsys, "price", TRI, "--gamma-grid", "0.5,1,2")
    many = _json(capsys, "price", TRI, "--gamma-grid", "0.5,1,2", "--jobs", "3")
    assert one["result"] == many["result"]
    assert [q["gamma"] for q in one["result"]["quotes"]] == [0.5, 1.0, 2.0]


def test_agree_and_equilibrium(capsys):
    rep = _json(capsys, "agree", TRI)
    row = rep["result"]["agreements"][0]
    assert row["classification"] in ("strict", "weak", "none")
    eq = _json(capsys, "equilibrium", TRI)
    assert eq["result"]["a_hat"][0] == pytest.approx(0.5, abs=1e-8)
    assert "equilibrium_tol" in eq["tolerances"]


def test_expand_and_hedge(capsys):
    rep = _json(capsys, "expand", TRI, "--eps-grid", "0.2,0.1,0.05")
    assert len(rep["result"]["eps_table"]) == 3
    assert rep["result"]["remainder_slope"] >= 2.5
    h = _json(capsys, "hedge", TRI)
    p = _json(capsys, "price", TRI)
    assert h["result"]["price"] == p["result"]["quotes"][0]["writer"]
    assert h["result"]["strategy"]["root"][0] == pytest.approx(2.0, abs=1e-9)


def test_basisrisk(capsys):
    rep = _json(capsys, "basisrisk", BASIS)
    assert "quadrature_tol" in rep["tolerances"]
    prof = rep["result"]["profile"]
    assert prof["sign_changes"] >= 1


def test_csv_header(capsys):
    for cmd, path in (("price", TRI), ("agree", TRI), ("equilibrium", TRI), ("expand", TRI),
                      ("hedge", TRI), ("basisrisk", BASIS)):
        code, out, _ = _run(capsys, cmd, path, "--format", "csv")
        assert code == 0
        rows = list(csv.reader(io.StringIO(out)))
        assert rows[0] == CSV_COLUMNS[cmd]
        assert len(rows) >= 2 and all(len(r) == len(rows[0]) for r in rows)


def test_output_is_deterministic(capsys, tmp_path):
    outs = []
    for k in range(2):
        path = tmp_path / f"r{k}.json"
        assert run(["agree", TRI, "-o", str(path)]) == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]
    rep = _json(capsys, "price", TRI, "--timing")
    assert rep["wall_time"] >= 0


def test_json_roundtrip_keeps_full_precision(capsys):
    rep = _json(capsys, "price", TRI)
    from entropic_pricer.market import load_scenario
    from entropic_pricer.pricing import writer_value

    sc = load_scenario(Path(TRI).read_text())
    assert rep["result"]["quotes"][0]["writer"] == writer_value(sc.tree, 1.0, sc.claims["e1"], sc.claims["up"])


def test_exit_codes(capsys, tmp_path):
    assert _run(capsys, "price", str(tmp_path / "missing.yaml"))[0] == 2
    assert _run(capsys, "bogus", TRI)[0] == 2
    assert _run(capsys, "price", TRI, "--tol", "-1")[0] == 2
    bad = tmp_path / "bad.yaml"
    bad.write_text(TREE.replace("1/3, prices: [1, 1.3]", "1/2, prices: [1, 1.3]"))
    code, _, err = _run(capsys, "price", str(bad))
    assert code == 2 and "error" in err
    arb = tmp_path / "arb.yaml"
    arb.write_text(TREE.replace("[1, 0.8]", "[1, 1.05]").replace("[1, 1.0]}\n  - {id: u", "[1, 1.1]}\n  - {id: u")
                   + "claims: {x: [0, 0, 1]}\nagents: [{gamma: 1}]\n")
    assert _run(capsys, "price", str(arb))[0] == 2
    hard = tmp_path / "hard.yaml"
    hard.write_text(TREE + "claims: {big: [0, 0, 50]}\nagents: [{gamma: 3.0}]\nsolver: {max_iter: 1}\n")
    code, _, err = _run(capsys, "price", str(hard))
    assert code == 3 and "NewtonDivergence" in err
    lone = tmp_path / "lone.yaml"
    lone.write_text(TREE + "claims: {x: [0, 0, 1]}\nagents: [{gamma: 1.0}]\n")
    assert _run(capsys, "agree", str(lone))[0] == 2


def test_stdin_and_module_entry_point():
    text = Path(TRI).read_text()
    proc = subprocess.run([sys.executable, "-m", "entropic_pricer", "price", "-"], input=text,
                          capture_output=True, text=True, check=False)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["command"] == "price"
