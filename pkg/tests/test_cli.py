import json
import math
import re

import numpy as np
import pytest

from merge_planner import cli, outputs, svg
from merge_planner.config import bundled_path
from merge_planner.planner import PlannerKind
from merge_planner.sim import ConvergenceRow, run_episode, summarize


def run_cli(*args):
    return cli.main([str(a) for a in args])


def files(d):
    return sorted(p.name for p in d.iterdir())


@pytest.fixture(scope="module")
def proposed_log(table_config):
    return run_episode(table_config, PlannerKind.PROPOSED, 0)


# --- exit codes and outputs ----------------------------------------------------

def test_run_minimal_outputs(tmp_path):
    assert run_cli("run", "--planner", "proposed", "--out", tmp_path) == cli.EXIT_OK
    assert files(tmp_path) == ["metrics_proposed.json"]
    m = json.loads((tmp_path / "metrics_proposed.json").read_text())
    assert m["success"] is True and m["merge_class"] == "Ahead"


def test_run_all_planners_with_emits(tmp_path):
    code = run_cli("run", "--emit", "csv", "--emit", "svg", "--seed", "0", "--out", tmp_path)
    assert code == cli.EXIT_OK
    names = files(tmp_path)
    for k in ("proposed", "rmpc", "dmpc"):
        assert f"episode_{k}.csv" in names and f"metrics_{k}.json" in names
        assert f"snapshot_{k}.svg" in names and f"distance_{k}.svg" in names
    assert "comparison.json" in names and "accel_trace.svg" in names
    comp = json.loads((tmp_path / "comparison.json").read_text())
    assert set(comp) == {"proposed", "rmpc", "dmpc"}


def test_invalid_config_exit_1_no_outputs(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(bundled_path().read_text() + "\nfoo = 1\n")
    out = tmp_path / "out"
    assert run_cli("run", "--config", bad, "--out", out) == cli.EXIT_CONFIG
    assert not out.exists()


def test_collision_exit_2(tmp_path):
    assert run_cli("run", "--planner", "dmpc", "--seed", "1", "--out", tmp_path) == cli.EXIT_COLLISION
    assert json.loads((tmp_path / "metrics_dmpc.json").read_text())["collided"] is True


def test_solver_failure_exit_3(tmp_path, monkeypatch):
    def broken(self, x0, ref, obstacles):
        raise ValueError("constraints are inconsistent")
    monkeypatch.setattr("merge_planner.planner.MpcPlanner.plan", broken)
    assert run_cli("run", "--planner", "proposed", "--out", tmp_path) == cli.EXIT_SOLVER
    m = json.loads((tmp_path / "metrics_proposed.json").read_text())
    assert m["outcome"] == "solver_failure"


def test_usage_errors(tmp_path):
    assert run_cli("monte-carlo", "--episodes", "0", "--out", tmp_path) == cli.EXIT_CONFIG
    assert run_cli("convergence", "--repeats", "0", "--out", tmp_path) == cli.EXIT_CONFIG
    assert run_cli("plot", "--kind", "snapshot", "--planner", "proposed",
                   "--snapshot-times", "0,100000", "--out", tmp_path) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit):
        run_cli("run", "--planner", "mystery")


def test_monte_carlo_schema_and_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert run_cli("monte-carlo", "--planner", "proposed", "--episodes", "2", "--seed", "3",
                       "--emit", "csv", "--out", d) == cli.EXIT_OK
    for name in files(a):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    s = json.loads((a / "monte_carlo_proposed.json").read_text())
    assert 0 <= s["success_rate"] <= 1
    assert s["merge_ahead"] + s["merge_between"] + s["merge_after"] + s["merge_none"] == s["n"] == 2
    for key in ("min_d_sv0", "min_d_sv1", "max_abs_accel"):
        assert set(s[key]) == {"mean", "std"}


def test_monte_carlo_single_episode_std_zero(tmp_path):
    assert run_cli("monte-carlo", "--planner", "proposed", "--episodes", "1", "--out", tmp_path) == 0
    s = json.loads((tmp_path / "monte_carlo_proposed.json").read_text())
    assert s["min_d_sv0"]["std"] == 0 and s["max_abs_accel"]["std"] == 0


def test_convergence_single_size(tmp_path):
    assert run_cli("convergence", "--sizes", "4", "--repeats", "1", "--out", tmp_path) == 0
    lines = (tmp_path / "convergence.csv").read_text().splitlines()
    assert lines[0].split(",") == list(outputs.CONVERGENCE_COLUMNS)
    assert len(lines) == 2 and lines[1].startswith("4,1,")
    assert (tmp_path / "convergence_bars.svg").read_text().startswith("<?xml")


def test_threads_env_caps_workers(monkeypatch):
    from merge_planner.sim import THREADS_ENV, worker_count
    monkeypatch.setenv(THREADS_ENV, "3")
    assert worker_count() == 3
    assert worker_count(1) == 1


# --- CSV / JSON -------------------------------------------------------------------

def test_csv_parses_back(proposed_log):
    log, _ = proposed_log
    rows = outputs.read_episode_csv(outputs.episode_csv(log))
    assert len(rows) == len(log)
    for row, r in zip(rows, log.records):
        assert row["t"] == r.t and row["ev.p_x"] == r.ev.p_x and row["ev.a"] == r.ev.a
        assert row["u.delta"] == r.control.delta and row["u.eta"] == r.control.eta
        assert row["maneuver"] == r.maneuver and row["solver_status"] == r.status
        assert (row["sv0.p_x"], row["sv1.v"]) == (r.svs[0].p_x, r.svs[1].v_x)
        assert (row["sv0.a_applied"], row["sv1.a_min"]) == (r.sv_accels[0], r.bounds[1].a_min)
        assert (row["d_sv0"], row["d_sv1"]) == r.distances
        assert row["solve_time_s"] is None


def test_csv_header_is_fixed(proposed_log):
    head = outputs.episode_csv(proposed_log[0]).splitlines()[0]
    assert head == ("t,ev.p_x,ev.p_y,ev.phi,ev.v,ev.a,u.delta,u.eta,maneuver,v_ref,p_y_ref,"
                    "sv0.p_x,sv0.v,sv0.a_applied,sv0.a_min,sv0.a_max,sv1.p_x,sv1.v,sv1.a_applied,"
                    "sv1.a_min,sv1.a_max,d_sv0,d_sv1,solver_status,solve_time_s")


def test_csv_timing_opt_in(proposed_log):
    rows = outputs.read_episode_csv(outputs.episode_csv(proposed_log[0], record_timing=True))
    assert all(r["solve_time_s"] > 0 for r in rows)


def test_json_nan_is_null():
    assert json.loads(outputs.to_json({"x": math.nan, "y": [1.0, math.inf]})) == {"x": None, "y": [1.0, None]}


# --- SVG ----------------------------------------------------------------------------

def test_svg_deterministic(table_config, proposed_log):
    log, _ = proposed_log
    again, _ = run_episode(table_config, PlannerKind.PROPOSED, 0)
    assert svg.snapshot(log, table_config, [0, 5]) == svg.snapshot(again, table_config, [0, 5])
    assert svg.accel_trace([log]) == svg.accel_trace([again])


def test_snapshot_initial_layout(table_config, proposed_log):
    text = svg.snapshot(proposed_log[0], table_config, [0])
    assert "EV" in text and "SV0" in text and "SV1" in text
    boxes = {}
    for fill in (svg.COLORS["ev"], svg.COLORS["sv0"], svg.COLORS["sv1"]):
        m = re.search(rf'<rect x="([\d.]+)" y="([\d.]+)" width="([\d.]+)" height="([\d.]+)" fill="{fill}"', text)
        x, y, w, h = map(float, m.groups())
        boxes[fill] = (x + w / 2, y + h / 2)
    ev, sv0, sv1 = boxes[svg.COLORS["ev"]], boxes[svg.COLORS["sv0"]], boxes[svg.COLORS["sv1"]]
    # EV in lane 1 (drawn lower), ahead of SV0 which is ahead of SV1
    assert ev[1] > sv0[1] == pytest.approx(sv1[1])
    assert ev[0] > sv0[0] > sv1[0]


def test_snapshot_rejects_bad_index(table_config, proposed_log):
    n = len(proposed_log[0])
    with pytest.raises(ValueError, match=f"0..{n - 1}"):
        svg.snapshot(proposed_log[0], table_config, [n])


def test_accel_trace_constant_speed_is_flat(constant_speed_config):
    cfg = constant_speed_config
    from dataclasses import replace
    from merge_planner.models import EvState, SvState
    cfg = replace(cfg, ev=replace(cfg.ev, initial=EvState(800, 6, 0, 30, 0)),
                  sv0=replace(cfg.sv0, initial=SvState(600, 30)),
                  sv1=replace(cfg.sv1, initial=SvState(550, 30)))
    log, _ = run_episode(cfg, PlannerKind.PROPOSED, 0)
    lines = svg.distance_series(svg.accel_trace([log]))
    ys = {y for _, y in lines[0]}
    assert len(ys) == 1


def test_distance_trace_fidelity(proposed_log):
    log, _ = proposed_log
    text = svg.distance_trace(log)
    series = svg.distance_series(text)
    assert len(series) == 2
    t = np.array([r.t for r in log.records])
    for j, pts in enumerate(series):
        px = np.array(pts)
        d = np.array([r.distances[j] for r in log.records])
        assert len(px) == len(d)
        # pixel coordinates are an affine image of the logged values
        for raw, pix in ((t, px[:, 0]), (d, px[:, 1])):
            A = np.column_stack([raw, np.ones_like(raw)])
            coef, *_ = np.linalg.lstsq(A, pix, rcond=None)
            assert np.max(np.abs(A @ coef - pix)) <= 0.006
    # the CSV carries the same values the plot was drawn from
    rows = outputs.read_episode_csv(outputs.episode_csv(log))
    assert [r["d_sv0"] for r in rows] == [r.distances[0] for r in log.records]


def test_convergence_bars_and_render_dispatch(proposed_log, table_config):
    _, m = proposed_log
    rows = [ConvergenceRow(4, summarize([m])), ConvergenceRow(16, summarize([m, m]))]
    text = svg.render_svg(rows, svg.PlotSpec("convergence_bars", height=300))
    assert text == svg.convergence_bars(rows)
    with pytest.raises(ValueError):
        svg.PlotSpec("pie")
    with pytest.raises(ValueError):
        svg.render_svg(proposed_log[0], svg.PlotSpec("snapshot", (0,)))
