"""CSV and JSON serialization of episode logs and batch metrics."""
from __future__ import annotations

import csv
import io
import json
import math

from .sim import EpisodeLog, EpisodeMetrics, MetricsSummary

CSV_COLUMNS = (
    "t", "ev.p_x", "ev.p_y", "ev.phi", "ev.v", "ev.a", "u.delta", "u.eta", "maneuver", "v_ref",
    "p_y_ref", "sv0.p_x", "sv0.v", "sv0.a_applied", "sv0.a_min", "sv0.a_max", "sv1.p_x", "sv1.v",
    "sv1.a_applied", "sv1.a_min", "sv1.a_max", "d_sv0", "d_sv1", "solver_status", "solve_time_s",
)
TEXT_COLUMNS = {"maneuver", "solver_status"}
CONVERGENCE_COLUMNS = (
    "size", "n", "success_rate", "min_d_sv0_mean", "min_d_sv0_std", "min_d_sv1_mean",
    "min_d_sv1_std", "max_abs_accel_mean", "max_abs_accel_std",
)


def _num(x: float) -> str:
    return repr(float(x))


def record_row(r, record_timing: bool = False) -> list:
    e, u = r.ev, r.control
    row = [_num(r.t), _num(e.p_x), _num(e.p_y), _num(e.phi), _num(e.v), _num(e.a),
           _num(u.delta), _num(u.eta), r.maneuver, _num(r.v_ref), _num(r.p_y_ref)]
    for sv, a, b in zip(r.svs, r.sv_accels, r.bounds):
        row += [_num(sv.p_x), _num(sv.v_x), _num(a), _num(b.a_min), _num(b.a_max)]
    row += [_num(d) for d in r.distances]
    row += [r.status, _num(r.plan_time) if record_timing else ""]
    return row


def episode_csv(log: EpisodeLog, record_timing: bool = False) -> str:
    """Per-step log; the timing column stays empty unless requested so that
    seeded runs are byte-identical."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in log.records:
        w.writerow(record_row(r, record_timing))
    return buf.getvalue()


def read_episode_csv(text: str) -> list:
    """Rows of an episode CSV as dicts with floats (None for empty cells)."""
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
        raise ValueError(f"unexpected CSV header {reader.fieldnames}")
    out = []
    for row in reader:
        out.append({k: (v if k in TEXT_COLUMNS else (float(v) if v != "" else None))
                    for k, v in row.items()})
    return out


def _clean(x):
    """JSON-safe value: non-finite floats become null."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


def episode_metrics_dict(m: EpisodeMetrics) -> dict:
    return {
        "success": m.success,
        "collided": m.collided,
        "merge_class": m.merge_class.value,
        "min_d_sv0": m.min_d_sv0,
        "min_d_sv1": m.min_d_sv1,
        "max_abs_accel": m.max_abs_accel,
    }


def summary_dict(s: MetricsSummary) -> dict:
    c = s.merge_counts
    return {
        "n": s.n,
        "success_rate": s.success_rate,
        "collisions": s.collisions,
        "merge_ahead": c["Ahead"],
        "merge_between": c["Between"],
        "merge_after": c["After"],
        "merge_none": c["NoMerge"],
        "min_d_sv0": {"mean": s.min_d_sv0.mean, "std": s.min_d_sv0.std},
        "min_d_sv1": {"mean": s.min_d_sv1.mean, "std": s.min_d_sv1.std},
        "max_abs_accel": {"mean": s.max_abs_accel.mean, "std": s.max_abs_accel.std},
    }


def to_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def convergence_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONVERGENCE_COLUMNS)
    for row in rows:
        s: MetricsSummary = row.summary
        w.writerow([row.size, s.n, _num(s.success_rate),
                    _num(s.min_d_sv0.mean), _num(s.min_d_sv0.std),
                    _num(s.min_d_sv1.mean), _num(s.min_d_sv1.std),
                    _num(s.max_abs_accel.mean), _num(s.max_abs_accel.std)])
    return buf.getvalue()


def episode_index_csv(seeds, metrics) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "seed", "success", "collided", "merge_class", "min_d_sv0",
                "min_d_sv1", "max_abs_accel"])
    for k, (seed, m) in enumerate(zip(seeds, metrics)):
        w.writerow([k, seed, int(m.success), int(m.collided), m.merge_class.value,
                    _num(m.min_d_sv0), _num(m.min_d_sv1), _num(m.max_abs_accel)])
    return buf.getvalue()

