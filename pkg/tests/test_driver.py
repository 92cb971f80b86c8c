"""Driver behavior: the zero-source fixed point, uniform mode, iteration caps,
output determinism, abort persistence, and the comparison harness."""

import csv
import dataclasses
import json
import os

import numpy as np
import pytest

from thbheat import cli
from thbheat.assembly import CircularArc, Geometry, HeatSource, Material
from thbheat.config import SimulationConfig, parse_config
from thbheat.driver import (
    StepRecord,
    adaptive_iterate,
    comparison_labels,
    csv_header,
    run,
    run_comparison,
)
from thbheat.errors import CapacityWarning, DomainError, NumericalError
from thbheat.hierarchy import build_initial
from thbheat.solver import TimeStepper
from thbheat.splines import TensorSpace


def arc_source(power=5000.0, radius=0.6):
    arc = CircularArc(center=(5.0, 5.0), radius=2.5, start_angle=0.0, angular_speed=0.628)
    return HeatSource(power=power, absorptivity=0.33, radius=radius, path=arc)


def make_cfg(**kw) -> SimulationConfig:
    base = dict(
        degree=2,
        base_cells=2,
        max_levels=3,
        m=2,
        alpha_r=0.3,
        alpha_c=0.25,
        dt=0.05,
        n_steps=3,
        material=Material(
            conductivity=1.0, specific_heat=1.0, density=1.0, initial_temperature=20.0
        ),
        source=arc_source(),
        geometry=Geometry(10.0),
        sample_n=5,
    )
    base.update(kw)
    return SimulationConfig(**base)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# -- run ------------------------------------------------------------------------------


def test_zero_power_run_is_a_fixed_point(tmp_path):
    cfg = make_cfg(source=arc_source(power=0.0), n_steps=4)
    records = run(cfg, out_dir=str(tmp_path))
    assert len(records) == 4
    for rec in records:
        assert rec.eps_total == 0.0
        assert rec.e_internal == 0.0
        assert rec.cells == (4, 0, 0)
        assert rec.n_marked_refine == 0
        assert rec.n_reactivated == 0
    # the sampled field is bitwise the initial temperature
    rows = read_csv(tmp_path / "field_0004.csv")
    assert rows[0] == ["x", "y", "value"]
    assert {r[2] for r in rows[1:]} == {"20.0"}


def test_uniform_mode_keeps_dofs_constant(tmp_path):
    cfg = make_cfg(mode="uniform", uniform_k=3, n_steps=3)
    records = run(cfg, out_dir=str(tmp_path))
    for rec in records:
        assert rec.n_dofs == (2**3 + cfg.degree) ** 2
        assert rec.cells == (64,)
        assert rec.n_marked_refine == 0
        assert rec.n_marked_coarsen == 0


def test_first_step_refines_deep(tmp_path):
    cfg = make_cfg()
    records = run(cfg, out_dir=str(tmp_path))
    first = records[0]
    assert first.n_marked_refine > 0
    assert first.cells[2] > 0  # depth reached in the first step
    assert first.n_dofs > (2 + cfg.degree) ** 2


def test_infinite_tol_solves_without_refining(tmp_path):
    cfg = make_cfg(tol=float("inf"))
    records = run(cfg, out_dir=str(tmp_path))
    for rec in records:
        assert rec.n_marked_refine == 0
        assert rec.cells == (4, 0, 0)


def test_zero_caps_solve_only(tmp_path):
    cfg = make_cfg(i_max_first=0, i_max_rest=0)
    records = run(cfg, out_dir=str(tmp_path))
    for rec in records:
        assert rec.n_marked_refine == 0
        assert rec.cells == (4, 0, 0)
        assert rec.eps_total > 0  # estimator still reported


def test_csv_layout_and_round_trip(tmp_path):
    cfg = make_cfg(n_steps=2)
    records = run(cfg, out_dir=str(tmp_path))
    rows = read_csv(tmp_path / "steps.csv")
    assert rows[0] == csv_header(3)
    assert rows[0] == [
        "step", "t", "n_dofs", "cells_l0", "cells_l1", "cells_l2",
        "eps_total", "E_i", "E_T", "wall_ms", "marked_r", "marked_c", "reactivated",
    ]
    assert len(rows) == 1 + len(records)
    for rec, row in zip(records, rows[1:]):
        assert int(row[0]) == rec.step
        assert float(row[1]) == rec.t
        assert int(row[2]) == rec.n_dofs
        assert tuple(int(v) for v in row[3:6]) == rec.cells
        assert float(row[6]) == rec.eps_total
        assert float(row[7]) == rec.e_internal
        assert float(row[8]) == rec.e_total
        assert int(row[10]) == rec.n_marked_refine
        assert int(row[11]) == rec.n_marked_coarsen
        assert int(row[12]) == rec.n_reactivated


def test_mesh_dumps_match_cell_counts(tmp_path):
    cfg = make_cfg(n_steps=2)
    records = run(cfg, out_dir=str(tmp_path))
    for rec in records:
        lines = (tmp_path / f"mesh_{rec.step:04d}.jsonl").read_text().splitlines()
        cells = [json.loads(line) for line in lines]
        assert len(cells) == sum(rec.cells)
        per_level = [0] * len(rec.cells)
        for c in cells:
            per_level[c["level"]] += 1
        assert tuple(per_level) == rec.cells


def test_runs_are_deterministic(tmp_path):
    cfg = make_cfg(n_steps=3)
    run(cfg, out_dir=str(tmp_path / "a"))
    run(cfg, out_dir=str(tmp_path / "b"))
    rows_a = read_csv(tmp_path / "a" / "steps.csv")
    rows_b = read_csv(tmp_path / "b" / "steps.csv")
    wall = rows_a[0].index("wall_ms")
    for ra, rb in zip(rows_a, rows_b):
        ra[wall] = rb[wall] = ""
        assert ra == rb
    for name in ("mesh_0003.jsonl", "field_0003.csv", "field_0003.vtk"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_abort_persists_completed_steps(tmp_path, monkeypatch):
    import thbheat.driver as drv

    real = drv.advance
    calls = {"n": 0}

    def flaky(system, theta, stepper):
        calls["n"] += 1
        if calls["n"] >= 3:
            raise NumericalError("injected failure")
        return real(system, theta, stepper)

    monkeypatch.setattr(drv, "advance", flaky)
    cfg = make_cfg(i_max_first=0, i_max_rest=0, n_steps=5)
    with pytest.raises(NumericalError):
        run(cfg, out_dir=str(tmp_path))
    rows = read_csv(tmp_path / "steps.csv")
    assert len(rows) == 1 + 2  # header plus the two completed steps
    assert (tmp_path / "mesh_0002.jsonl").exists()
    assert not (tmp_path / "mesh_0003.jsonl").exists()


def test_run_needs_an_output_directory(tmp_path):
    cfg = make_cfg(n_steps=1)
    with pytest.raises(DomainError, match="output directory"):
        run(cfg)
    cfg = dataclasses.replace(cfg, out_dir=str(tmp_path / "from_config"))
    run(cfg)
    assert (tmp_path / "from_config" / "steps.csv").exists()


def test_step_record_validation():
    with pytest.raises(DomainError):
        StepRecord(1, 0.1, 0, (1,), 0.0, 0.0, 0.0, 1.0, 0, 0, 0)
    with pytest.raises(DomainError):
        StepRecord(1, 0.1, 4, (1,), -1.0, 0.0, 0.0, 1.0, 0, 0, 0)


# -- adaptive_iterate -----------------------------------------------------------------


def test_adaptive_iterate_zero_cap_is_one_solve():
    cfg = make_cfg()
    mesh, space = build_initial(TensorSpace.unit_square(cfg.degree, 2), cfg.max_levels)
    theta = space.constant_state(20.0)
    result = adaptive_iterate(mesh, space, theta, cfg, TimeStepper(cfg.dt), i_max=0)
    assert result.rounds == 0
    assert result.n_marked == 0
    assert result.theta_new.t == pytest.approx(cfg.dt)
    assert result.est.total > 0
    assert result.theta_old is theta


def test_adaptive_iterate_refines_until_capacity():
    cfg = make_cfg(max_levels=2)
    mesh, space = build_initial(TensorSpace.unit_square(cfg.degree, 2), 2)
    theta = space.constant_state(20.0)
    with pytest.warns(CapacityWarning):
        result = adaptive_iterate(mesh, space, theta, cfg, TimeStepper(cfg.dt), i_max=5)
    # one productive round (level 0 -> 1); afterwards every marked cell sits
    # at the level cap, so the loop stops early instead of spinning
    assert result.rounds <= 2
    assert space.n_dofs > 16
    assert result.theta_new.generation == space.generation


# -- comparison -----------------------------------------------------------------------


def test_comparison_requires_a_shared_scenario(tmp_path):
    a = make_cfg()
    with pytest.raises(DomainError, match="dt"):
        run_comparison([a, dataclasses.replace(a, dt=0.01)], str(tmp_path))
    different_mat = dataclasses.replace(
        a, material=Material(conductivity=2.0, specific_heat=1.0, density=1.0, initial_temperature=20.0)
    )
    with pytest.raises(DomainError, match="material"):
        run_comparison([a, different_mat], str(tmp_path))
    with pytest.raises(DomainError, match="steps"):
        run_comparison([a, dataclasses.replace(a, n_steps=5)], str(tmp_path))
    different_src = dataclasses.replace(a, source=arc_source(power=1.0))
    with pytest.raises(DomainError, match="source"):
        run_comparison([a, different_src], str(tmp_path))


def test_comparing_a_config_with_itself_gives_zero_errors(tmp_path):
    cfg = make_cfg(n_steps=2)
    run_comparison([cfg, cfg], str(tmp_path))
    rows = read_csv(tmp_path / "comparison.csv")
    head = rows[0]
    assert head[0] == "mode"
    assert head[-2:] == ["eps_i", "eps_T"]
    labels = {r[0] for r in rows[1:]}
    assert labels == {"adaptive", "adaptive#2"}
    for r in rows[1:]:
        assert float(r[-2]) == 0.0
        assert float(r[-1]) == 0.0


def test_comparison_pads_level_columns(tmp_path):
    adaptive = make_cfg(n_steps=2)
    uniform = dataclasses.replace(adaptive, mode="uniform", uniform_k=3, m=2)
    run_comparison([uniform, adaptive], str(tmp_path), reference=0)
    rows = read_csv(tmp_path / "comparison.csv")
    assert rows[0][:7] == ["mode", "step", "t", "n_dofs", "cells_l0", "cells_l1", "cells_l2"]
    by_mode = {}
    for r in rows[1:]:
        by_mode.setdefault(r[0], []).append(r)
    assert set(by_mode) == {"uniform3", "adaptive"}
    for r in by_mode["uniform3"]:
        assert r[4] == "64" and r[5] == "0" and r[6] == "0"
        assert float(r[-2]) == 0.0  # reference against itself
    for r in by_mode["adaptive"]:
        assert float(r[-2]) >= 0.0
    # per-run artifacts land in labeled subdirectories
    assert (tmp_path / "uniform3" / "steps.csv").exists()
    assert (tmp_path / "adaptive" / "steps.csv").exists()


def test_comparison_labels_disambiguate():
    a = make_cfg()
    u = dataclasses.replace(a, mode="uniform", uniform_k=4)
    assert comparison_labels([a, u, a]) == ["adaptive", "uniform4", "adaptive#2"]


# -- cli ------------------------------------------------------------------------------

CONFIG_TEXT = """\
[run]
mode = adaptive
degree = 2
base_cells = 2
max_levels = 2
m = 2
alpha_r = 0.3
alpha_c = 0.25
dt = 0.05
n_steps = 2
side_length = 10.0
sample_n = 5

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


def test_cli_run(tmp_path, capsys):
    cfg_file = tmp_path / "run.ini"
    cfg_file.write_text(CONFIG_TEXT)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_file), "--out", str(out)]) == 0
    assert (out / "steps.csv").exists()
    assert "completed 2 steps" in capsys.readouterr().out


def test_cli_sample_n_override(tmp_path):
    cfg_file = tmp_path / "run.ini"
    cfg_file.write_text(CONFIG_TEXT)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_file), "--out", str(out), "--sample-n", "4"]) == 0
    rows = read_csv(out / "field_0001.csv")
    assert len(rows) == 1 + 16


def test_cli_rejects_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text(CONFIG_TEXT + "typo_key = 1\n")
    code = cli.main(["run", "--config", str(bad), "--out", str(tmp_path / "o")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_cli_missing_config_file(tmp_path, capsys):
    code = cli.main(["run", "--config", str(tmp_path / "nope.ini"), "--out", str(tmp_path)])
    assert code == 2
    capsys.readouterr()


def test_cli_preset_round_trip(tmp_path):
    dest = tmp_path / "arc.ini"
    assert cli.main(["preset", "--name", "circular_arc", "--out", str(dest)]) == 0
    cfg = parse_config(dest.read_text())
    assert cfg.max_levels == 7


def test_cli_compare(tmp_path, capsys):
    a = tmp_path / "a.ini"
    a.write_text(CONFIG_TEXT)
    b = tmp_path / "b.ini"
    b.write_text(CONFIG_TEXT.replace("mode = adaptive", "mode = uniform\nuniform_k = 3"))
    out = tmp_path / "cmp"
    code = cli.main(
        ["compare", "--configs", f"{a},{b}", "--reference", str(b), "--out", str(out)]
    )
    assert code == 0
    rows = read_csv(out / "comparison.csv")
    assert {r[0] for r in rows[1:]} == {"adaptive", "uniform3"}
    capsys.readouterr()


def test_cli_compare_rejects_foreign_reference(tmp_path, capsys):
    a = tmp_path / "a.ini"
    a.write_text(CONFIG_TEXT)
    code = cli.main(
        ["compare", "--configs", str(a), "--reference", "elsewhere.ini", "--out", str(tmp_path / "o")]
    )
    assert code == 2
    capsys.readouterr()


def test_cli_threads_flag_sets_env(tmp_path, monkeypatch):
    monkeypatch.delenv("OMP_NUM_THREADS", raising=False)
    cfg_file = tmp_path / "run.ini"
    cfg_file.write_text(CONFIG_TEXT)
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(cfg_file), "--out", str(out), "--threads", "1"]) == 0
    assert os.environ.get("OMP_NUM_THREADS") == "1"
