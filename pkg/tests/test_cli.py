import csv
import json
import subprocess
import sys

import pytest

import lodfem.cli as cli
from lodfem.sparse import FactorizationError


def test_run_writes_csv(tmp_path):
    out = tmp_path / "rows.csv"
    code = cli.main(["poisson", "--H", "0.25", "0.125", "--h", "0.03125", "--k", "1", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert [float(r["H"]) for r in rows] == [0.25, 0.125]
    assert all(0.0 <= float(r["err_L2"]) <= float(r["err_H1"]) for r in rows)


def test_config_file_and_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"H": [0.5], "h": 0.0625, "k": [1]}))
    out = tmp_path / "rows.csv"
    assert cli.main(["evp", "--config", str(conf), "--H", "0.25", "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 1 and float(rows[0]["H"]) == 0.25


@pytest.mark.parametrize("argv", [["poisson", "--H", "0.3"], ["poisson", "--h", "0.1"]])
def test_bad_config_exit_two(argv, capsys):
    assert cli.main(argv) == 2
    assert "config error" in capsys.readouterr().err


def test_unknown_config_field(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"H": [0.5], "layers": 3}))
    assert cli.main(["poisson", "--config", str(conf)]) == 2


def test_solver_failure_exit_one(monkeypatch, capsys):
    def boom(cfg):
        raise FactorizationError("pivot breakdown")

    monkeypatch.setattr(cli, "run", boom)
    assert cli.main(["poisson", "--H", "0.5", "--h", "0.25"]) == 1
    assert "pivot breakdown" in capsys.readouterr().err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "lodfem", "kronig", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "--n-ev" in res.stdout
