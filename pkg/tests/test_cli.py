import json

import numpy as np
import pytest

from rydqca import cli


def run(argv):
    return cli.main([str(a) for a in argv])


def read_pgm(path):
    data = path.read_bytes()
    head, rest = data.split(b"\n255\n", 1)
    magic, dims = head.split(b"\n")
    cols, rows = map(int, dims.split())
    assert magic == b"P5"
    return np.frombuffer(rest, dtype=np.uint8).reshape(rows, cols)


def test_evolve_zero_rules_heatmap(tmp_path):
    csv, pgm = tmp_path / "t.csv", tmp_path / "h.pgm"
    assert run(["evolve", "--rules", "0,0,0,0,0,0", "--n", 5, "--init", "00100",
                "--tmax", 3, "--out", csv, "--pgm", pgm]) == 0
    img = read_pgm(pgm)
    assert img.shape == (4, 5)
    assert pgm.read_bytes().startswith(b"P5\n5 4\n255\n")
    np.testing.assert_array_equal(img[:, 2], 255)
    np.testing.assert_array_equal(img[:, [0, 1, 3, 4]], 0)
    lines = csv.read_text().splitlines()
    assert lines[0] == "t,Z_1,Z_2,Z_3,Z_4,Z_5,trace_residual"
    assert len(lines) == 5


def test_evolve_discrete_and_central_superposition(tmp_path):
    csv = tmp_path / "d.csv"
    assert run(["evolve", "--rules", "0,1,0,0,0,0", "--n", 5, "--init", cli.CENTRAL,
                "--mode", "discrete", "--steps", 2, "--out", csv]) == 0
    rows = np.loadtxt(csv, delimiter=",", skiprows=1)
    assert rows.shape == (3, 7)
    np.testing.assert_allclose(rows[0, 1:6], [-1, -1, 0, -1, -1], atol=1e-12)
    assert np.all(np.abs(rows[:, 1:6]) <= 1 + 1e-12)


def test_evolve_outputs_are_byte_identical(tmp_path):
    outs = []
    for k in range(2):
        csv, pgm = tmp_path / f"{k}.csv", tmp_path / f"{k}.pgm"
        run(["evolve", "--rules", "0,1,0,0,0,2", "--n", 5, "--init", "00100", "--tmax", 2,
             "--out", csv, "--pgm", pgm])
        outs.append((csv.read_bytes(), pgm.read_bytes()))
    assert outs[0] == outs[1]


@pytest.mark.parametrize("argv", [
    ["evolve", "--rules", "0,1,0", "--n", 3, "--init", "000"],
    ["evolve", "--rules", "0,1,0,0,0,0", "--n", 3, "--init", "0000"],
    ["evolve", "--rules", "0,1,0,0,0,0", "--n", 4, "--init", cli.CENTRAL],
    ["evolve", "--rules", "0,1,0,0,0,0", "--n", 3, "--init", "000", "--boundary", "twisted"],
    ["atlas", "--n", 3],
])
def test_usage_errors_exit_1(argv, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    with pytest.raises(SystemExit) as info:
        code = run(argv)
        raise SystemExit(code)
    assert info.value.code == 1


def test_io_error_names_path(tmp_path, capsys):
    missing = tmp_path / "nope" / "out.csv"
    assert run(["evolve", "--rules", "0,0,0,0,0,0", "--n", 2, "--init", "00", "--tmax", 1,
                "--out", missing]) == 1
    assert str(missing) in capsys.readouterr().err


def test_atlas_index_and_heatmaps(tmp_path):
    rules = tmp_path / "rules.txt"
    rules.write_text("# two rules\n0 1 0 0 0 0\n0,1,0,0,0,2\n")
    out = tmp_path / "atlas"
    assert run(["atlas", "--rules-file", rules, "--n", 5, "--init", "00100", "--tmax", 2,
                "--steps", 2, "--outdir", out, "--workers", 1]) == 0
    index = (out / "index.csv").read_text().splitlines()
    assert len(index) == 3
    assert index[1].split(",")[:2] == ["010000", "1"]
    assert index[2].split(",")[:2] == ["010002", "0"]
    assert len(list(out.glob("*.pgm"))) == 4
    assert read_pgm(out / "rule_010002_continuous.pgm").shape == (3, 5)


def test_rules_file_errors(tmp_path):
    bad = tmp_path / "bad.txt"
    bad.write_text("0 1 0\n")
    with pytest.raises(cli.UsageError, match="bad.txt:1"):
        cli.read_rules_file(bad)
    with pytest.raises(cli.UsageError):
        cli.read_rules_file(tmp_path / "missing.txt")


def test_seed_fallback(monkeypatch):
    monkeypatch.setenv("QCA_SEED", "42")
    assert cli.resolve_seed(None) == 42
    assert cli.resolve_seed(3) == 3
    monkeypatch.setenv("QCA_SEED", "x")
    with pytest.raises(cli.UsageError):
        cli.resolve_seed(None)
    monkeypatch.delenv("QCA_SEED")
    assert cli.resolve_seed(None) == 0


def test_optimize_small(tmp_path, monkeypatch):
    monkeypatch.setenv("QCA_SEED", "5")
    out = tmp_path / "opt"
    assert run(["optimize", "--n", 4, "--pop", 3, "--iters", 2, "--tcurve", 5, "--tmax", 50,
                "--workers", 1, "--outdir", out, "--gamma", "0.01"]) == 0
    report = json.loads((out / "report.json").read_text())
    assert report["seed"] == 5
    assert [c["gamma"] for c in report["curves"]] == [0.0, 0.01]
    assert len((out / "trace.csv").read_text().splitlines()) == 1 + 3 * 2
    first = (out / "trace.csv").read_bytes()
    assert run(["optimize", "--n", 4, "--pop", 3, "--iters", 2, "--tcurve", 5, "--tmax", 50,
                "--workers", 1, "--outdir", out, "--gamma", "0.01"]) == 0
    assert (out / "trace.csv").read_bytes() == first


def test_validate_small(tmp_path):
    out = tmp_path / "v.json"
    assert run(["validate", "--n", 2, "--theta", "1,0,0", "--init", "00", "--tmax", 0.5,
                "--V", 40, "--Gamma", 8, "--factors", 1, 2, "--out", out]) == 0
    rep = json.loads(out.read_text())
    assert len(rep["runs"]) == 2
    assert rep["runs"][1]["V"] == 80
    assert rep["strictly_decreasing"] in (True, False)
    assert rep["runs"][0]["warnings"] == []
