"""End-to-end command checks, including a live simulator round trip."""

import csv
import json
import subprocess
import sys

import pytest

from heatplots.cli import main

from test_heatplots import comparison_text, steps_text, write

BASE_INI = """\
[run]
mode = adaptive
degree = 2
base_cells = 2
max_levels = 3
m = 2
alpha_r = 0.3
alpha_c = 0.25
dt = 0.05
n_steps = 3
side_length = 10.0

[material]
conductivity = 1.0
specific_heat = 1.0
density = 1.0
initial_temperature = 20.0

[source]
power = 5000.0
absorptivity = 0.33
radius = 0.6

[path]
kind = circular_arc
center_x = 5.0
center_y = 5.0
radius = 2.5
start_angle = 0.0
angular_speed = 0.628
"""


def test_dump_equals_the_csv_columns(tmp_path):
    path = write(tmp_path, "runA/steps.csv", steps_text())
    img = tmp_path / "dofs.png"
    dump = tmp_path / "dofs.json"
    assert main(["dofs", "--csv", str(path), "--out", str(img), "--dump-data", str(dump)]) == 0
    assert img.stat().st_size > 0

    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    payload = json.loads(dump.read_text())
    (series,) = payload["panels"][0]["series"]
    assert series["label"] == "runA"
    assert series["step"] == [int(r["step"]) for r in rows]
    assert series["values"] == [float(r["n_dofs"]) for r in rows]


def test_schema_mismatch_exits_nonzero(tmp_path, capsys):
    path = write(tmp_path, "runA/steps.csv", steps_text())
    rc = main(["errors", "--csv", str(path), "--out", str(tmp_path / "e.png")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_missing_file_exits_nonzero(tmp_path, capsys):
    rc = main(["dofs", "--csv", str(tmp_path / "gone.csv"), "--out", str(tmp_path / "d.png")])
    assert rc == 2
    assert "error:" in capsys.readouterr().err


def test_multiple_files_merge_into_one_figure(tmp_path):
    a = write(tmp_path, "one/runA/steps.csv", steps_text())
    b = write(tmp_path, "two/runB/steps.csv", steps_text())
    dump = tmp_path / "wall.json"
    rc = main(
        ["walltime", "--csv", f"{a},{b}", "--out", str(tmp_path / "wall.png"),
         "--dump-data", str(dump)]
    )
    assert rc == 0
    labels = [s["label"] for s in json.loads(dump.read_text())["panels"][0]["series"]]
    assert labels == ["runA", "runB"]


def test_live_comparison_renders_one_curve_per_mode(tmp_path):
    adaptive = tmp_path / "adaptive.ini"
    adaptive.write_text(BASE_INI)
    uniform = tmp_path / "uniform.ini"
    uniform.write_text(
        BASE_INI.replace("mode = adaptive", "mode = uniform\nuniform_k = 2")
    )
    cmp_dir = tmp_path / "cmp"
    proc = subprocess.run(
        [sys.executable, "-m", "thbheat.cli", "compare",
         "--configs", f"{adaptive},{uniform}", "--out", str(cmp_dir)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    merged = cmp_dir / "comparison.csv"

    img = tmp_path / "errors.png"
    dump = tmp_path / "errors.json"
    assert main(["errors", "--csv", str(merged), "--out", str(img), "--dump-data", str(dump)]) == 0
    assert img.stat().st_size > 0

    payload = json.loads(dump.read_text())
    with merged.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    modes = sorted({r["mode"] for r in rows})
    for panel in payload["panels"]:
        assert sorted(s["label"] for s in panel["series"]) == modes == ["adaptive", "uniform2"]
    for panel, metric in zip(payload["panels"], ("eps_i", "eps_T")):
        for series in panel["series"]:
            expected = [float(r[metric]) for r in rows if r["mode"] == series["label"]]
            assert series["values"] == expected

    assert main(["dofs", "--csv", str(merged), "--out", str(tmp_path / "dofs.png")]) == 0


def test_comparison_fixture_matches_the_live_schema(tmp_path):
    # the synthetic text used across these tests must stay loadable
    path = write(tmp_path, "comparison.csv", comparison_text())
    rc = main(["energies", "--csv", str(path), "--out", str(tmp_path / "e.png")])
    assert rc == 0
