"""Self-contained SVG figures for episode logs and convergence tables.

Output is a pure function of the inputs (fixed float formatting, no
timestamps) so repeated renders are byte-identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

from .planner import occupancy_for_planner
from .sim import EpisodeLog, ScenarioConfig

COLORS = {"ev": "#1f77b4", "sv0": "#d62728", "sv1": "#2ca02c", "occ": "#ff7f0e"}
SERIES = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"]


@dataclass(frozen=True)
class PlotSpec:
    kind: str
    times: tuple = ()
    width: int = 720
    height: int = 260
    title: str = ""

    def __post_init__(self):
        if self.kind not in ("snapshot", "accel_trace", "distance_trace", "convergence_bars"):
            raise ValueError(f"unknown plot kind {self.kind!r}")


def _f(x: float) -> str:
    return f"{x:.2f}"


@dataclass
class _Doc:
    width: int
    height: int
    parts: list = field(default_factory=list)

    def add(self, s: str):
        self.parts.append(s)

    def line(self, x1, y1, x2, y2, color="#000", width=1.0, dash=None):
        d = f' stroke-dasharray="{dash}"' if dash else ""
        self.add(f'<line x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                 f'stroke="{color}" stroke-width="{_f(width)}"{d}/>')

    def rect(self, x, y, w, h, fill="none", stroke="#000", opacity=1.0):
        self.add(f'<rect x="{_f(x)}" y="{_f(y)}" width="{_f(w)}" height="{_f(h)}" '
                 f'fill="{fill}" stroke="{stroke}" fill-opacity="{_f(opacity)}"/>')

    def polygon(self, pts, stroke, dash="4,2"):
        s = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.add(f'<polygon points="{s}" fill="none" stroke="{stroke}" stroke-dasharray="{dash}"/>')

    def polyline(self, pts, color, width=1.5):
        s = " ".join(f"{_f(x)},{_f(y)}" for x, y in pts)
        self.add(f'<polyline points="{s}" fill="none" stroke="{color}" stroke-width="{_f(width)}"/>')

    def text(self, x, y, s, size=11, anchor="start"):
        self.add(f'<text x="{_f(x)}" y="{_f(y)}" font-size="{size}" font-family="sans-serif" '
                 f'text-anchor="{anchor}">{escape(s)}</text>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" '
                f'height="{self.height}" viewBox="0 0 {self.width} {self.height}">')
        body = "\n".join(self.parts)
        return f'<?xml version="1.0" encoding="UTF-8"?>\n{head}\n' \
               f'<rect width="100%" height="100%" fill="#fff"/>\n{body}\n</svg>\n'


class _Axes:
    """Linear data-to-pixel mapping inside a margin box."""

    def __init__(self, x0, x1, y0, y1, width, height, margin=(50, 20, 20, 35)):
        left, right, top, bottom = margin
        if x1 <= x0:
            x1 = x0 + 1.0
        if y1 <= y0:
            y0, y1 = y0 - 0.5, y1 + 0.5
        self.x0, self.x1, self.y0, self.y1 = x0, x1, y0, y1
        self.px0, self.px1 = left, width - right
        self.py0, self.py1 = height - bottom, top

    def x(self, v):
        return self.px0 + (v - self.x0) / (self.x1 - self.x0) * (self.px1 - self.px0)

    def y(self, v):
        return self.py0 + (v - self.y0) / (self.y1 - self.y0) * (self.py1 - self.py0)

    def frame(self, doc: _Doc, xlabel: str, ylabel: str, ticks=5):
        doc.line(self.px0, self.py0, self.px1, self.py0)
        doc.line(self.px0, self.py0, self.px0, self.py1)
        for k in range(ticks + 1):
            xv = self.x0 + k * (self.x1 - self.x0) / ticks
            yv = self.y0 + k * (self.y1 - self.y0) / ticks
            doc.text(self.x(xv), self.py0 + 14, f"{xv:.4g}", 9, "middle")
            doc.text(self.px0 - 4, self.y(yv) + 3, f"{yv:.4g}", 9, "end")
        doc.text((self.px0 + self.px1) / 2, self.py0 + 28, xlabel, 10, "middle")
        doc.text(12, (self.py0 + self.py1) / 2, ylabel, 10, "middle")


def _legend(doc: _Doc, items, x, y):
    for k, (label, color) in enumerate(items):
        doc.line(x, y + 14 * k, x + 18, y + 14 * k, color, 2)
        doc.text(x + 22, y + 14 * k + 4, label, 10)


def _series_range(values):
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    return min(vals), max(vals)


# ---------------------------------------------------------------- plots

def snapshot(log: EpisodeLog, config: ScenarioConfig, times, spec: PlotSpec | None = None) -> str:
    """Road, vehicles and predicted occupancy outlines at the given step
    indices, one lane strip per time."""
    n = len(log.records)
    if n == 0:
        raise ValueError("log has no records")
    times = list(times) or [0]
    for k in times:
        if not isinstance(k, int) or not 0 <= k < n:
            raise ValueError(f"snapshot time index {k!r} outside valid range 0..{n - 1}")
    spec = spec or PlotSpec("snapshot", tuple(times))
    sc = config.scenario
    geom = config.vehicle
    strip = 90
    height = 30 + strip * len(times)
    doc = _Doc(spec.width, height)
    xs = [r.ev.p_x for r in log.records] + [s.p_x for r in log.records for s in r.svs]
    x0 = min(min(xs), sc.p_x_ter) - 20
    x1 = max(max(xs), sc.p_x_ter) + 20
    for row, k in enumerate(times):
        r = log.records[k]
        top = 25 + row * strip
        ax = _Axes(x0, x1, 0.0, 2 * sc.w_lane, spec.width, top + strip - 10,
                   margin=(50, 20, top, 10))
        doc.text(8, top + 12, f"t = {r.t:.2f} s", 10)
        doc.line(ax.px0, ax.y(0), ax.px1, ax.y(0), "#000", 1.5)
        doc.line(ax.px0, ax.y(2 * sc.w_lane), ax.px1, ax.y(2 * sc.w_lane), "#000", 1.5)
        doc.line(ax.px0, ax.y(sc.w_lane), ax.x(sc.p_x_ter), ax.y(sc.w_lane), "#777", 1, "6,4")
        doc.line(ax.x(sc.p_x_ter), ax.y(0), ax.x(sc.p_x_ter), ax.y(sc.w_lane), "#000", 2)
        preds = occupancy_for_planner(log.planner_kind, r.svs, r.bounds, config.worst_case(),
                                      sc.N, sc.v_adm, sc.T, geom, config.sv_lateral)
        for p in preds:
            for occ in p.steps[:config.planner.n_p]:
                doc.polygon([(ax.x(v[0]), ax.y(v[1])) for v in occ.vertices], COLORS["occ"])
        boxes = [("ev", r.ev.p_x, r.ev.p_y)] + [
            (f"sv{j}", s.p_x, config.sv_lateral) for j, s in enumerate(r.svs)]
        for name, cx, cy in boxes:
            x_a, x_b = ax.x(cx - geom.l_veh / 2), ax.x(cx + geom.l_veh / 2)
            y_a, y_b = ax.y(cy + geom.w_veh / 2), ax.y(cy - geom.w_veh / 2)
            doc.rect(x_a, y_a, x_b - x_a, y_b - y_a, COLORS[name], COLORS[name], 0.6)
            doc.text((x_a + x_b) / 2, y_a - 2, name.upper(), 8, "middle")
    title = spec.title or f"{log.planner_kind.value} merge snapshots"
    doc.text(spec.width / 2, 14, title, 12, "middle")
    return doc.render()


def _trace(t, series, ylabel, title, spec: PlotSpec) -> str:
    doc = _Doc(spec.width, spec.height)
    lo, hi = _series_range([v for _, vals in series for v in vals])
    pad = 0.05 * (hi - lo) if hi > lo else 0.5
    ax = _Axes(t[0] if t else 0.0, t[-1] if t else 1.0, lo - pad, hi + pad, spec.width, spec.height)
    ax.frame(doc, "t [s]", ylabel)
    for k, (label, vals) in enumerate(series):
        color = SERIES[k % len(SERIES)]
        # NaN samples split the line
        seg = []
        for tt, v in zip(t, vals):
            if math.isfinite(v):
                seg.append((ax.x(tt), ax.y(v)))
            elif seg:
                doc.polyline(seg, color)
                seg = []
        if seg:
            doc.polyline(seg, color)
    _legend(doc, [(label, SERIES[k % len(SERIES)]) for k, (label, _) in enumerate(series)],
            ax.px1 - 120, 20)
    doc.text(spec.width / 2, 14, spec.title or title, 12, "middle")
    return doc.render()


def accel_trace(logs, spec: PlotSpec | None = None) -> str:
    """EV longitudinal acceleration of one or more episodes."""
    logs = [logs] if isinstance(logs, EpisodeLog) else list(logs)
    if not logs or not any(len(lg) for lg in logs):
        raise ValueError("logs are empty")
    spec = spec or PlotSpec("accel_trace")
    longest = max(logs, key=len)
    t = [r.t for r in longest.records]
    series = [(lg.planner_kind.value, [r.ev.a for r in lg.records] + [math.nan] * (len(t) - len(lg)))
              for lg in logs]
    return _trace(t, series, "a [m/s^2]", "EV acceleration", spec)


def distance_trace(log: EpisodeLog, spec: PlotSpec | None = None) -> str:
    """Logged footprint distances from the EV to each SV."""
    if not len(log):
        raise ValueError("log is empty")
    spec = spec or PlotSpec("distance_trace")
    t = [r.t for r in log.records]
    series = [(f"sv{j}", [r.distances[j] for r in log.records]) for j in range(len(log.records[0].distances))]
    return _trace(t, series, "distance [m]", f"{log.planner_kind.value} EV-SV distance", spec)


def distance_series(svg_text: str) -> list:
    """Pixel polylines of a trace document, for fidelity checks."""
    out = []
    for chunk in svg_text.split('<polyline points="')[1:]:
        pts = chunk.split('"', 1)[0].split()
        out.append([tuple(float(c) for c in p.split(",")) for p in pts])
    return out


def convergence_bars(rows, spec: PlotSpec | None = None) -> str:
    """Mean with one-std whiskers per information-set size for the three
    episode metrics."""
    rows = list(rows)
    if not rows:
        raise ValueError("no convergence rows")
    spec = spec or PlotSpec("convergence_bars", height=300)
    metrics = [("min_d_sv0", "min d sv0 [m]"), ("min_d_sv1", "min d sv1 [m]"),
               ("max_abs_accel", "max |a| [m/s^2]")]
    panel_w = spec.width / len(metrics)
    doc = _Doc(spec.width, spec.height)
    for m, (attr, label) in enumerate(metrics):
        stats = [getattr(r.summary, attr) for r in rows]
        tops = [s.mean + s.std for s in stats if math.isfinite(s.mean)]
        hi = max(tops) if tops else 1.0
        ax = _Axes(-0.5, len(rows) - 0.5, 0.0, hi * 1.1 if hi > 0 else 1.0, int(panel_w), spec.height,
                   margin=(45, 10, 30, 35))
        off = m * panel_w
        doc.add(f'<g transform="translate({_f(off)},0)">')
        doc.line(ax.px0, ax.py0, ax.px1, ax.py0)
        doc.line(ax.px0, ax.py0, ax.px0, ax.py1)
        for k in range(5):
            yv = ax.y1 * k / 4
            doc.text(ax.px0 - 3, ax.y(yv) + 3, f"{yv:.3g}", 9, "end")
        bw = 0.6 * (ax.x(1) - ax.x(0))
        for i, (row, s) in enumerate(zip(rows, stats)):
            cx = ax.x(i)
            doc.text(cx, ax.py0 + 13, str(row.size), 9, "middle")
            if not math.isfinite(s.mean):
                continue
            doc.rect(cx - bw / 2, ax.y(s.mean), bw, ax.py0 - ax.y(s.mean), SERIES[m], SERIES[m], 0.7)
            doc.line(cx, ax.y(max(s.mean - s.std, 0.0)), cx, ax.y(s.mean + s.std), "#000", 1)
        doc.text((ax.px0 + ax.px1) / 2, 20, label, 11, "middle")
        doc.text((ax.px0 + ax.px1) / 2, ax.py0 + 28, "|I_0|", 10, "middle")
        doc.add("</g>")
    return doc.render()


def render_svg(logs, spec: PlotSpec, config: ScenarioConfig | None = None) -> str:
    if spec.kind == "snapshot":
        log = logs if isinstance(logs, EpisodeLog) else list(logs)[0]
        if config is None:
            raise ValueError("snapshot plots need the scenario config")
        return snapshot(log, config, spec.times, spec)
    if spec.kind == "accel_trace":
        return accel_trace(logs, spec)
    if spec.kind == "distance_trace":
        log = logs if isinstance(logs, EpisodeLog) else list(logs)[0]
        return distance_trace(log, spec)
    return convergence_bars(logs, spec)

