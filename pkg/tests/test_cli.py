import csv
import json

import numpy as np
import pytest

from rdafem import cli
from rdafem.mesh import save_mesh, unit_square_crisscross


def run_cli(*argv):
    with pytest.raises(SystemExit) as info:
        cli.main(list(argv))
    return info.value.code


def read_csv(path):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def test_solve_artifacts(tmp_path):
    code = run_cli("solve", "--mesh", "crisscross", "--kappa", "3",
                   "--out", str(tmp_path))
    assert code == cli.EXIT_OK
    header, rows = read_csv(tmp_path / "solution.csv")
    assert header == ["vertex_id", "x", "y", "u"]
    assert len(rows) == 5
    summary = json.loads((tmp_path / "solve.json").read_text())
    assert summary["command"] == "solve"
    assert summary["dofs"] == 1
    assert summary["error"] > 0


def test_solution_floats_roundtrip(tmp_path):
    # values are printed with enough digits to reproduce the exact float
    from rdafem import galerkin as g

    run_cli("solve", "--mesh", "crisscross", "--kappa", "3", "--out",
            str(tmp_path))
    _, rows = read_csv(tmp_path / "solution.csv")
    m = unit_square_crisscross()
    U = g.solve(g.make_problem(m, 3.0, "sinsin"))
    for row in rows:
        z = int(row[0])
        assert float(row[3]) == U.values[z]


def test_estimate_artifacts(tmp_path):
    code = run_cli("estimate", "--mesh", "lshape", "--kappa", "10",
                   "--out", str(tmp_path))
    assert code == cli.EXIT_OK
    header, rows = read_csv(tmp_path / "indicators.csv")
    assert tuple(header) == cli.INDICATOR_COLUMNS
    assert len(rows) == 8
    assert all(int(r[5]) >= 1 for r in rows)
    summary = json.loads((tmp_path / "estimate.json").read_text())
    assert summary["estimator"] > 0
    assert summary["total"] >= summary["estimator"]


def test_adapt_artifacts(tmp_path):
    code = run_cli("adapt", "--mesh", "square2", "--kappa", "1",
                   "--max-dof", "60", "--out", str(tmp_path))
    assert code == cli.EXIT_OK
    header, rows = read_csv(tmp_path / "run.csv")
    assert tuple(header) == cli.RUN_COLUMNS
    assert len(rows) >= 3
    summary = json.loads((tmp_path / "adapt.json").read_text())
    assert summary["stop_reason"] == "max_dof reached"
    assert summary["iterations"] == len(rows)
    assert int(rows[-1][1]) > 60  # final dof count exceeded the budget


def test_study_artifacts(tmp_path):
    code = run_cli("study", "--mesh", "square2", "--kappas", "1,100",
                   "--max-dof", "50", "--out", str(tmp_path))
    assert code == cli.EXIT_OK
    header, rows = read_csv(tmp_path / "study.csv")
    assert tuple(header) == ("kappa", "iteration", "dofs", "estimator",
                             "oscillation", "error", "effectivity")
    kappas = {float(r[0]) for r in rows}
    assert kappas == {1.0, 100.0}
    summary = json.loads((tmp_path / "study.json").read_text())
    assert summary["effectivity_spread"] >= 1.0
    assert set(summary["per_kappa"]) == {"1", "100"}


def test_verify_command_and_determinism(tmp_path, capsys):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    for out in (out1, out2):
        code = run_cli("verify", "--mesh", "crisscross", "--kappa", "100",
                       "--seed", "7", "--out", str(out))
        assert code == cli.EXIT_OK
    printed = capsys.readouterr().out
    assert "pass" in printed and "FAIL" not in printed
    assert (out1 / "verify.json").read_bytes() == (out2 / "verify.json").read_bytes()


def test_mesh_file_argument(tmp_path):
    path = tmp_path / "cross.msh"
    save_mesh(unit_square_crisscross(), path)
    code = run_cli("solve", "--mesh", str(path), "--out", str(tmp_path))
    assert code == cli.EXIT_OK
    summary = json.loads((tmp_path / "solve.json").read_text())
    assert summary["n_elements"] == 4


def test_missing_mesh_file_names_path(tmp_path, capsys):
    code = run_cli("solve", "--mesh", str(tmp_path / "nope.msh"),
                   "--out", str(tmp_path))
    assert code == cli.EXIT_USAGE
    assert "nope.msh" in capsys.readouterr().err


def test_usage_errors(tmp_path, capsys):
    assert run_cli("solve", "--preset", "bogus",
                   "--out", str(tmp_path)) == cli.EXIT_USAGE
    assert "bogus" in capsys.readouterr().err
    assert run_cli("adapt", "--theta-mark", "1.5",
                   "--out", str(tmp_path)) == cli.EXIT_USAGE
    assert run_cli("solve", "--kappa", "-3",
                   "--out", str(tmp_path)) == cli.EXIT_USAGE
    assert run_cli("estimate", "--dual-depth", "9",
                   "--out", str(tmp_path)) == cli.EXIT_USAGE


def test_config_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# study defaults\nkappa = 100\nmax-dof = 60\n")
    run_cli("adapt", "--config", str(cfg), "--max-dof", "30",
            "--out", str(tmp_path))
    summary = json.loads((tmp_path / "adapt.json").read_text())
    assert summary["kappa"] == 100.0  # from the config file
    assert summary["max_dof"] == 30  # flag beats config


def test_config_unknown_key(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("kappa = 1\nspeed = fast\n")
    code = run_cli("solve", "--config", str(cfg), "--out", str(tmp_path))
    assert code == cli.EXIT_USAGE
    err = capsys.readouterr().err
    assert f"{cfg}:2" in err and "speed" in err


def test_config_bad_syntax(tmp_path, capsys):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("just words\n")
    assert run_cli("solve", "--config", str(cfg),
                   "--out", str(tmp_path)) == cli.EXIT_USAGE
    assert "key=value" in capsys.readouterr().err


def test_fmt_shortest_roundtrip():
    assert cli.fmt(None) == ""
    assert cli.fmt(0.1) == "0.10000000000000001"
    assert float(cli.fmt(np.pi)) == np.pi
    assert cli.fmt(7) == "7"
