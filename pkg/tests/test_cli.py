import csv
import io
import json

import pytest

from subelliptic.cli import main
from subelliptic.quad import Bump, GridSpec, bump_data
from subelliptic.suites import Config


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def entries(text):
    return {e["check"]: e for e in json.loads(text)["entries"]}


def test_verify_geometry(capsys):
    code, out, _ = run(capsys, "verify", "geometry")
    assert code == 0
    rep = json.loads(out)
    assert rep["suite"] == "geometry"
    assert entries(out)["S3: scalar curvature = 1"]["status"] == "pass"
    assert set(rep["entries"][0]) == {"check", "status", "measured", "expected", "tolerance", "note"}


def test_verify_kernels(capsys):
    code, out, _ = run(capsys, "verify", "kernels")
    assert code == 0
    assert entries(out)["box_b N + Pi = 0 off the origin"]["status"] == "pass"


def test_verify_unknown_suite(capsys):
    code, _, err = run(capsys, "verify", "bogus")
    assert code == 2 and "invalid choice" in err


def test_every_check_appears_once(capsys):
    _, out, _ = run(capsys, "verify", "casym")
    names = [e["check"] for e in json.loads(out)["entries"]]
    assert len(names) == len(set(names))


def test_verify_is_reproducible(capsys):
    first = run(capsys, "--seed", "7", "verify", "casym")[1]
    second = run(capsys, "verify", "casym", "--seed", "7")[1]
    assert first == second
    other = run(capsys, "verify", "casym", "--seed", "8")[1]
    assert other != first


def test_csv_format_and_out_file(capsys, tmp_path):
    path = tmp_path / "geo.csv"
    code, out, _ = run(capsys, "verify", "geometry", "--format", "csv", "--out", str(path))
    assert code == 0 and out == ""
    rows = list(csv.DictReader(io.StringIO(path.read_text())))
    assert list(rows[0]) == ["suite", "check", "status", "measured", "expected", "tolerance", "note"]
    assert all(r["status"] == "pass" for r in rows)


def test_failing_check_gives_exit_one(capsys, tmp_path):
    cfg = tmp_path / "strict.cfg"
    cfg.write_text("# impossible refinement gain\nquad_gain = 1e9\nquad_n = 24\nquad_coarse_n = 12\nquad_points = 2\n")
    code, out, _ = run(capsys, "--config", str(cfg), "verify", "quad")
    assert code == 1
    assert entries(out)["solve_sublap refinement gain"]["status"] == "fail"


@pytest.mark.parametrize("text, message", [
    ("bogus = 1\n", "unknown key"),
    ("nil_n = 7\n", "nil_n"),
    ("seed = x\n", "bad value"),
    ("seed\n", "key=value"),
])
def test_config_errors(capsys, tmp_path, text, message):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(text)
    code, _, err = run(capsys, "--config", str(cfg), "verify", "geometry")
    assert code == 2 and message in err


def test_config_round_trip():
    cfg = Config(seed=4, nil_n=10, grading=0.25)
    assert Config.from_text(cfg.to_text()) == cfg


def test_missing_config_file(capsys, tmp_path):
    code, _, _ = run(capsys, "--config", str(tmp_path / "none.cfg"), "verify", "geometry")
    assert code == 2


@pytest.mark.parametrize("p, q", [
    ("wb*w", "1/2*sqrt2*wb^2*w"),
    ("s", "-sqrt2*w*s + sqrt2*wb*s - i*sqrt2*wb*w^2 + 1/2*i*sqrt2*wb^2*w"),
    ("wb*s", "1/2*sqrt2*wb^2*s + 1/6*i*sqrt2*wb^3*w"),
])
def test_solve_poly(capsys, p, q):
    code, out, _ = run(capsys, "solve-poly", p)
    assert code == 0
    assert json.loads(out) == {"q": q, "residual": "0"}


def test_solve_poly_stdin_and_csv(capsys, monkeypatch):
    monkeypatch.setattr("sys.stdin", io.StringIO("wb*w\n"))
    code, out, _ = run(capsys, "solve-poly", "-", "--format", "csv")
    assert code == 0 and out == "q = 1/2*sqrt2*wb^2*w\nresidual = 0\n"


@pytest.mark.parametrize("p", ["w + s", "w", "w +* s", "x"])
def test_solve_poly_bad_input(capsys, p):
    code, _, err = run(capsys, "solve-poly", p)
    assert code == 2 and err.startswith("subelliptic: error")


def test_convolve(capsys, tmp_path):
    f = bump_data("sublaplacian", GridSpec(1.0, 24), Bump())
    path = tmp_path / "f.csv"
    path.write_text(f.to_csv())
    code, out, _ = run(capsys, "convolve", "K", str(path), "0,0,0", "0.1,0.2,-0.1", "--format", "csv")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["x"] for r in rows] == ["0.0", "0.1"]
    assert abs(float(rows[0]["re"]) - 1.0) <= 2e-2
    code, out, _ = run(capsys, "convolve", "Pi", str(path), "0,0,0", "--format", "json")
    assert code == 0 and json.loads(out)["kernel"] == "Pi"


def test_convolve_errors(capsys, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("nonsense\n")
    assert run(capsys, "convolve", "K", str(bad), "0,0,0")[0] == 2
    assert run(capsys, "convolve", "K", str(tmp_path / "missing.csv"), "0,0,0")[0] == 2
    assert run(capsys, "convolve", "Q", str(bad), "0,0,0")[0] == 2


def test_parametrix_command(capsys):
    code, out, _ = run(capsys, "parametrix", "8", "0", "4")
    assert code == 0
    rep = entries(out)
    norm = rep["||R||_2"]["measured"]
    res = [rep[f"residual k={k}"]["measured"] for k in range(5)]
    assert res[0] == pytest.approx(norm)
    assert all(b <= a * norm + 1e-12 for a, b in zip(res, res[1:]))
    assert "eps0" in rep


def test_parametrix_command_edge_cases(capsys):
    code, out, _ = run(capsys, "parametrix", "8", "0", "0")
    rep = entries(out)
    assert code == 0
    assert [k for k in rep if k.startswith("residual")] == ["residual k=0"]
    assert rep["residual k=0"]["measured"] == pytest.approx(rep["||R||_2"]["measured"])
    assert run(capsys, "parametrix", "7", "0", "4")[0] == 2
    assert run(capsys, "parametrix", "8", "-1", "4")[0] == 2
