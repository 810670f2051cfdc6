"""Command-line entry point: single runs, Monte-Carlo batches, the
information-set convergence study and plot rendering."""
from __future__ import annotations

import argparse
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import outputs, svg
from .config import ConfigFileError, bundled_path, load_config
from .planner import PlannerKind
from .sim import (ConfigError, convergence_study, episode_seeds, run_batch, run_episode,
                  summarize)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_COLLISION = 2
EXIT_SOLVER = 3
EMITS = ("csv", "json", "svg")


@dataclass
class RunManifest:
    config_path: Path
    planners: list
    seed: int = 0
    out_dir: Path = Path("out")
    emit: set = field(default_factory=set)
    snapshot_times: tuple = ()
    record_timing: bool = False
    workers: int | None = None

    def __post_init__(self):
        if not self.planners:
            raise ConfigError("at least one planner kind is required")


class _Writer:
    """Collects output documents and writes them once all work is done."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        self.files = {}

    def add(self, name: str, text: str):
        self.files[name] = text

    def flush(self) -> list:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        paths = []
        for name in sorted(self.files):
            p = self.out_dir / name
            with open(p, "w", encoding="utf-8", newline="") as fh:
                fh.write(self.files[name])
            paths.append(p)
        return paths


def _snapshot_indices(times, n):
    if times:
        return [t for t in times]
    return sorted({0, n // 2, n - 1})


def cmd_run(manifest: RunManifest) -> int:
    config = load_config(manifest.config_path)
    w = _Writer(manifest.out_dir)
    comparison = {}
    logs = []
    code = EXIT_OK
    for kind in manifest.planners:
        log, metrics = run_episode(config, kind, manifest.seed)
        logs.append(log)
        md = outputs.episode_metrics_dict(metrics)
        md.update(seed=manifest.seed, steps=len(log), outcome=log.reason)
        comparison[kind.value] = md
        w.add(f"metrics_{kind.value}.json", outputs.to_json(md))
        if "csv" in manifest.emit:
            w.add(f"episode_{kind.value}.csv", outputs.episode_csv(log, manifest.record_timing))
        if "svg" in manifest.emit:
            times = _snapshot_indices(manifest.snapshot_times, len(log))
            w.add(f"snapshot_{kind.value}.svg", svg.snapshot(log, config, times))
            w.add(f"distance_{kind.value}.svg", svg.distance_trace(log))
        if log.solver_failure:
            code = max(code, EXIT_SOLVER)
        elif log.collided:
            code = max(code, EXIT_COLLISION)
    if len(manifest.planners) > 1:
        w.add("comparison.json", outputs.to_json(comparison))
    if "svg" in manifest.emit:
        w.add("accel_trace.svg", svg.accel_trace(logs))
    w.flush()
    return code


def cmd_monte_carlo(manifest: RunManifest, n: int) -> int:
    if n < 1:
        raise ConfigError("--episodes must be at least 1")
    config = load_config(manifest.config_path)
    w = _Writer(manifest.out_dir)
    seeds = episode_seeds(manifest.seed, n)
    table = {}
    code = EXIT_OK
    for kind in manifest.planners:
        metrics, logs = run_batch(config, kind, seeds, manifest.workers, keep_logs=True)
        summary = summarize(metrics)
        sd = outputs.summary_dict(summary)
        sd.update(base_seed=manifest.seed, planner=kind.value)
        table[kind.value] = sd
        w.add(f"monte_carlo_{kind.value}.json", outputs.to_json(sd))
        if "csv" in manifest.emit:
            w.add(f"episodes_{kind.value}.csv", outputs.episode_index_csv(seeds, metrics))
        if "svg" in manifest.emit:
            w.add(f"accel_trace_{kind.value}.svg", svg.accel_trace(logs[:5]))
        if any(lg.solver_failure for lg in logs):
            code = max(code, EXIT_SOLVER)
        elif summary.collisions:
            code = max(code, EXIT_COLLISION)
    if len(manifest.planners) > 1:
        w.add("monte_carlo.json", outputs.to_json(table))
    w.flush()
    return code


def cmd_convergence(manifest: RunManifest, sizes, repeats: int) -> int:
    if repeats < 1:
        raise ConfigError("--repeats must be at least 1")
    if not sizes:
        raise ConfigError("--sizes must list at least one size")
    config = load_config(manifest.config_path)
    w = _Writer(manifest.out_dir)
    kind = manifest.planners[0]
    rows = convergence_study(config, sizes, repeats, manifest.seed, kind, manifest.workers)
    w.add("convergence.csv", outputs.convergence_csv(rows))
    w.add("convergence.json", outputs.to_json(
        {str(r.size): outputs.summary_dict(r.summary) for r in rows}))
    w.add("convergence_bars.svg", svg.convergence_bars(rows))
    w.flush()
    return EXIT_OK


def cmd_plot(manifest: RunManifest, kinds) -> int:
    config = load_config(manifest.config_path)
    w = _Writer(manifest.out_dir)
    logs = [run_episode(config, k, manifest.seed)[0] for k in manifest.planners]
    for plot in kinds:
        if plot == "accel_trace":
            w.add("accel_trace.svg", svg.accel_trace(logs))
            continue
        for log in logs:
            name = log.planner_kind.value
            if plot == "snapshot":
                times = _snapshot_indices(manifest.snapshot_times, len(log))
                w.add(f"snapshot_{name}.svg", svg.snapshot(log, config, times))
            else:
                w.add(f"distance_{name}.svg", svg.distance_trace(log))
    w.flush()
    return EXIT_OK


# ---------------------------------------------------------------- parsing

def _int_list(text: str) -> list:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, default=None,
                        help="scenario file (default: bundled table1_table2.cfg)")
    common.add_argument("--planner", action="append", choices=[k.value for k in PlannerKind],
                        help="planner kind; repeatable")
    common.add_argument("--seed", type=_seed, default=0)
    common.add_argument("--out", type=Path, default=Path("out"))
    common.add_argument("--emit", action="append", choices=EMITS, default=[],
                        help="extra outputs; repeatable")
    common.add_argument("--snapshot-times", type=_int_list, default=(),
                        help="comma-separated step indices for snapshot plots")
    common.add_argument("--record-timing", action="store_true",
                        help="fill the solve_time_s CSV column (breaks byte-identical reruns)")

    p = argparse.ArgumentParser(prog="merge-planner", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="one episode per planner")
    mc = sub.add_parser("monte-carlo", parents=[common], help="seeded batch statistics")
    mc.add_argument("--episodes", type=int, default=50)
    cv = sub.add_parser("convergence", parents=[common], help="information-set size study")
    cv.add_argument("--sizes", type=_int_list, default=[4, 16, 64, 256, 1024])
    cv.add_argument("--repeats", type=int, default=20)
    pl = sub.add_parser("plot", parents=[common], help="render SVG figures of single runs")
    pl.add_argument("--kind", action="append", choices=("snapshot", "accel_trace", "distance_trace"),
                    help="plot kind; repeatable (default: all)")
    return p


def _manifest(args, default_planners) -> RunManifest:
    planners = [PlannerKind(p) for p in dict.fromkeys(args.planner or default_planners)]
    return RunManifest(args.config or bundled_path(), planners, args.seed, args.out,
                       set(args.emit), tuple(args.snapshot_times), args.record_timing)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(_manifest(args, [k.value for k in PlannerKind]))
        if args.command == "monte-carlo":
            return cmd_monte_carlo(_manifest(args, [PlannerKind.PROPOSED.value]), args.episodes)
        if args.command == "convergence":
            return cmd_convergence(_manifest(args, [PlannerKind.PROPOSED.value]), args.sizes, args.repeats)
        kinds = args.kind or ["snapshot", "accel_trace", "distance_trace"]
        return cmd_plot(_manifest(args, [k.value for k in PlannerKind]), kinds)
    except (ConfigFileError, ConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        # invalid plot requests such as out-of-range snapshot indices
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
