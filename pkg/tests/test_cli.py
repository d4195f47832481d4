import json
import os
import subprocess
import sys

import numpy as np
import pytest

from adiabloch.cli import csv_text, fmt, main

BANDS = """\
[run]
subcommand = "bands"
csv = "{d}/bands.csv"
json = "{d}/bands.json"
[lattice]
basis = [[2*pi]]
[potential]
coefficients = {{(1,): 1.0, (-1,): 1.0}}
[numeric]
grid = [8]
cutoff = 4
"""

GAP_PUMP = """\
[run]
subcommand = "pump"
csv = "{d}/pump.csv"
json = "{d}/pump.json"
[lattice]
basis = [[2*pi]]
[potential]
coefficients = {{(1,): 0.0, (-1,): 0.0}}
[numeric]
grid = [8]
cutoff = 4
epsilons = [1/8]
[pump]
kind = "static"
"""


def _write(tmp_path, template, name="run.ini"):
    path = tmp_path / name
    path.write_text(template.format(d=tmp_path))
    return str(path)


def _stderr_json(capsys):
    err = capsys.readouterr().err.strip().splitlines()
    return json.loads(err[-1])


def test_fmt_round_trips_floats():
    for x in (np.pi, 1e-300, -2.5, 1 / 3):
        assert float(fmt(x)) == x
    assert fmt(np.int64(7)) == "7"


def test_csv_text_single_header():
    text = csv_text(["a", "b"], [[1, 0.5], [2, 0.25]])
    assert text.splitlines() == ["a,b", "1,0.5", "2,0.25"]


def test_bands_csv_shape_and_summary(tmp_path, capsys):
    assert main([_write(tmp_path, BANDS)]) == 0
    lines = (tmp_path / "bands.csv").read_text().splitlines()
    assert lines[0] == "k_1,E_0,E_1,E_2,E_3"
    assert len(lines) == 1 + 8
    summary = json.loads((tmp_path / "bands.json").read_text())
    assert summary["subcommand"] == "bands"
    assert len(summary["spec_hash"]) == 64
    assert summary["grid"] == [8]


def test_rerun_is_byte_identical(tmp_path):
    cfg = _write(tmp_path, BANDS)
    assert main([cfg]) == 0
    first = (tmp_path / "bands.csv").read_bytes(), (tmp_path / "bands.json").read_bytes()
    assert main([cfg]) == 0
    assert first == ((tmp_path / "bands.csv").read_bytes(), (tmp_path / "bands.json").read_bytes())


def test_no_temporary_files_left(tmp_path):
    assert main([_write(tmp_path, BANDS)]) == 0
    assert not [f for f in os.listdir(tmp_path) if f.startswith(".tmp-")]


def test_override_changes_output(tmp_path):
    cfg = _write(tmp_path, BANDS)
    assert main([cfg, "--set", "numeric.grid=[4]"]) == 0
    assert len((tmp_path / "bands.csv").read_text().splitlines()) == 5


def test_config_error_exit_2(tmp_path, capsys):
    cfg = _write(tmp_path, BANDS.replace("cutoff = 4", "cutoff = -1"))
    assert main([cfg]) == 2
    err = _stderr_json(capsys)
    assert err["error"] == "config"
    assert err["key"] == "numeric.cutoff"
    assert err["line"] == 11
    assert not (tmp_path / "bands.csv").exists()


def test_check_only_validates(tmp_path, capsys):
    assert main([_write(tmp_path, BANDS), "--check"]) == 0
    assert json.loads(capsys.readouterr().out)["ok"] is True
    assert not (tmp_path / "bands.csv").exists()


def test_gap_closure_exit_3_names_node(tmp_path, capsys):
    assert main([_write(tmp_path, GAP_PUMP)]) == 3
    err = _stderr_json(capsys)
    assert err["error"] == "gap_closed"
    assert "t" in err and "k" in err
    assert abs(abs(err["k"][0]) - 0.5) < 1e-12


def test_missing_config_exit_4(tmp_path, capsys):
    assert main([str(tmp_path / "absent.ini")]) == 4
    assert _stderr_json(capsys)["error"] == "io"


def test_unwritable_output_exit_4(tmp_path, capsys):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    cfg = _write(tmp_path, BANDS.replace("{d}/bands.csv", "{d}/file/bands.csv"))
    assert main([cfg]) == 4
    assert _stderr_json(capsys)["error"] == "io"


def test_pump_outputs(tmp_path):
    text = GAP_PUMP.replace("[potential]\ncoefficients = {{(1,): 0.0, (-1,): 0.0}}\n", "")
    text = text.replace('kind = "static"', "n_snapshots = 32")
    assert main([_write(tmp_path, text)]) == 0
    summary = json.loads((tmp_path / "pump.json").read_text())
    assert summary["pump_chern"] == 1
    assert abs(summary["quanta_ksv"][0] - 1.0) < 1e-3
    header = (tmp_path / "pump.csv").read_text().splitlines()[0]
    assert header == "epsilon,t,J_eps_1,J_ksv_1"


def test_console_script_entry_point(tmp_path):
    cfg = _write(tmp_path, BANDS)
    proc = subprocess.run([sys.executable, "-m", "adiabloch.cli", cfg], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)["ok"] is True


@pytest.mark.parametrize("sub,extra", [
    ("berry", '[lattice]\nbasis = [[2*pi, 0], [0, 2*pi]]\n[potential]\ncoefficients = {{(1,0): 1.0, (-1,0): 1.0, (0,1): 0.7, (0,-1): 0.7}}\n[numeric]\ngrid = [6, 6]\ncutoff = 3\n'),
    ("butterfly", '[potential]\ncoefficients = {{(1,0): 1, (-1,0): 1, (0,1): 1, (0,-1): 1}}\n[numeric]\nq_max = 3\nsizes = [8, 8]\n'),
])
def test_other_subcommands_run(tmp_path, sub, extra):
    text = f'[run]\nsubcommand = "{sub}"\ncsv = "{{d}}/o.csv"\njson = "{{d}}/o.json"\n' + extra
    assert main([_write(tmp_path, text)]) == 0
    assert (tmp_path / "o.csv").read_text().count("\n") > 1
