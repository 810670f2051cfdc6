"""Closed-loop forced-merge simulation: SV behaviour, the
observe/estimate/decide/plan/act loop, collision checks, metrics and batches."""
from __future__ import annotations

import enum
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.stats import truncnorm

from .decision import DecisionParams, Maneuver, decide
from .estimator import AccelBounds, BoundEstimator, saturate_accel, worst_case_bounds
from .models import EvControl, EvState, FeedbackGains, SvState, VehicleGeometry, ev_step_rk4, sv_step
from .planner import (INFEASIBLE_RELAXED, MpcPlanner, PlannerKind, PlannerParams, SqpSettings,
                      brake_control, inflate_obstacle, occupancy_for_planner)
from .polytope import distance_polytopes, from_box

THREADS_ENV = "MERGE_PLANNER_THREADS"
SOLVER_ERROR = "solver_error"
MAX_SOLVER_ERRORS = 3


class ConfigError(ValueError):
    pass


class ProfileKind(enum.Enum):
    NOMINAL = "nominal"
    SUDDEN_ACCEL = "sudden_accel"


class MergeClass(enum.Enum):
    AHEAD = "Ahead"
    BETWEEN = "Between"
    AFTER = "After"
    NO_MERGE = "NoMerge"


# ------------------------------------------------------------------ config

@dataclass(frozen=True)
class BehaviorProfile:
    """Truncated-Gaussian SV accelerations with an optional burst that fires
    while the EV is changing lanes close to the SV near the lane end."""

    kind: ProfileKind = ProfileKind.NOMINAL
    mean: float = 0.0
    std: float = 0.3
    burst_mean: float = 2.0
    burst_std: float = 0.3
    window: float = 30.0
    terminal_zone: float = 250.0
    lateral_margin: float = 0.25
    a_limit: float = 0.71 * 9.8

    def __post_init__(self):
        if not isinstance(self.kind, ProfileKind):
            object.__setattr__(self, "kind", ProfileKind(self.kind))
        if self.std < 0 or self.burst_std < 0:
            raise ConfigError("profile standard deviations must be nonnegative")
        if self.a_limit <= 0 or self.window <= 0 or self.terminal_zone <= 0:
            raise ConfigError("profile a_limit, window and terminal_zone must be positive")


@dataclass(frozen=True)
class ScenarioSettings:
    p_x_ter: float = 1000.0
    w_lane: float = 4.0
    T: float = 0.25
    N: int = 20
    v_adm: float = 50.0
    mu: float = 0.71
    g: float = 9.8
    horizon_steps: int = 400
    settle_steps: int = 20
    stop_steps: int = 8
    stop_speed: float = 0.1
    seed: int = 0

    def __post_init__(self):
        for name in ("p_x_ter", "w_lane", "T", "v_adm", "mu", "g"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"scenario.{name} must be positive")
        for name in ("N", "horizon_steps", "settle_steps", "stop_steps"):
            if getattr(self, name) < 1:
                raise ConfigError(f"scenario.{name} must be at least 1")
        if self.stop_speed < 0 or self.seed < 0:
            raise ConfigError("scenario.stop_speed and scenario.seed must be nonnegative")


@dataclass(frozen=True)
class EvSpec:
    initial: EvState


@dataclass(frozen=True)
class SvSpec:
    initial: SvState
    profile: BehaviorProfile = field(default_factory=BehaviorProfile)


@dataclass(frozen=True)
class DecisionSettings:
    d_min: float = 0.5
    W_x: float = 0.1
    W_y: float = 0.1
    W_v: float = 0.7
    W_l: float = 0.1
    k_lon: tuple = (0.0, 0.3847, 0.8663)
    k_lat: tuple = (0.5681, 1.4003, 1.7260)

    def __post_init__(self):
        if self.d_min < 0:
            raise ConfigError("d_min must be nonnegative")
        for name in ("W_x", "W_y", "W_v", "W_l"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if len(self.k_lon) != 3 or len(self.k_lat) != 3:
            raise ConfigError("k_lon and k_lat must have three entries")


@dataclass(frozen=True)
class PlannerSettings:
    n_p: int = 10
    q1: float = 100.0
    q2: float = 0.001
    q3: tuple = (1.0, 1.0)
    u_lower: tuple = (0.0, -5.0, -0.1)
    u_upper: tuple = (50.0, 2.5, 0.1)
    d_min: float = 0.1

    def __post_init__(self):
        if self.n_p < 1:
            raise ConfigError("n_p must be at least 1")
        if self.d_min < 0:
            raise ConfigError("d_min must be nonnegative")
        if min(self.q1, self.q2, *self.q3) < 0 or len(self.q3) != 2:
            raise ConfigError("q1, q2 and the two q3 entries must be nonnegative")
        if len(self.u_lower) != 3 or len(self.u_upper) != 3:
            raise ConfigError("u_lower and u_upper must have three entries")
        if any(lo >= hi for lo, hi in zip(self.u_lower, self.u_upper)):
            raise ConfigError("u_lower must be below u_upper componentwise")


@dataclass(frozen=True)
class EstimatorSettings:
    """``i0_size`` draws from each SV's nominal distribution seed the
    information set; zero means the singleton ``{0}``."""

    i0_size: int = 0

    def __post_init__(self):
        if self.i0_size < 0:
            raise ConfigError("estimator.i0_size must be nonnegative")


@dataclass(frozen=True)
class ScenarioConfig:
    ev: EvSpec
    sv0: SvSpec
    sv1: SvSpec
    scenario: ScenarioSettings = field(default_factory=ScenarioSettings)
    vehicle: VehicleGeometry = field(default_factory=VehicleGeometry)
    decision: DecisionSettings = field(default_factory=DecisionSettings)
    planner: PlannerSettings = field(default_factory=PlannerSettings)
    sqp: SqpSettings = field(default_factory=SqpSettings)
    estimator: EstimatorSettings = field(default_factory=EstimatorSettings)

    def __post_init__(self):
        if self.sv1.initial.p_x > self.sv0.initial.p_x:
            raise ConfigError("SV1 must start behind SV0 (sv1.initial.p_x <= sv0.initial.p_x)")
        if self.planner.n_p > self.scenario.N:
            raise ConfigError("planner.n_p must not exceed scenario.N")
        limit = self.scenario.mu * self.scenario.g
        for s in self.svs:
            if s.profile.a_limit > limit + 1e-12:
                raise ConfigError(f"profile a_limit {s.profile.a_limit} exceeds mu*g = {limit}")
            if not 0 <= s.initial.v_x <= self.scenario.v_adm:
                raise ConfigError("SV initial speed outside [0, v_adm]")
        # builds and validates the derived parameter sets
        self.decision_params()
        self.planner_params()

    @property
    def svs(self) -> tuple:
        return (self.sv0, self.sv1)

    @property
    def sv_lateral(self) -> float:
        return 1.5 * self.scenario.w_lane

    def worst_case(self) -> AccelBounds:
        return worst_case_bounds(self.scenario.mu, self.scenario.g)

    def decision_params(self) -> DecisionParams:
        d, s = self.decision, self.scenario
        try:
            return DecisionParams(d.d_min, self.vehicle.l_veh, d.W_x, d.W_y, d.W_v, d.W_l,
                                  FeedbackGains(d.k_lon, d.k_lat, s.T), s.T, s.N, s.w_lane,
                                  s.p_x_ter, s.v_adm)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def planner_params(self) -> PlannerParams:
        p, s = self.planner, self.scenario
        try:
            return PlannerParams(p.n_p, p.q1, p.q2, tuple(p.q3), tuple(p.u_lower), tuple(p.u_upper),
                                 p.d_min, s.w_lane, s.p_x_ter, s.T, self.vehicle, self.sqp)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


# -------------------------------------------------------------- behaviour

def truncated_gaussian(rng, mean: float, std: float, lo: float, hi: float) -> float:
    if std == 0.0:
        return float(min(max(mean, lo), hi))
    a, b = (lo - mean) / std, (hi - mean) / std
    return float(truncnorm.rvs(a, b, loc=mean, scale=std, random_state=rng))


def burst_active(profile: BehaviorProfile, sv: SvState, ev: EvState,
                 p_x_ter: float = 1000.0, w_lane: float = 4.0) -> bool:
    if profile.kind is not ProfileKind.SUDDEN_ACCEL:
        return False
    lane_change = 0.5 * w_lane + profile.lateral_margin < ev.p_y < 1.5 * w_lane - profile.lateral_margin
    return (lane_change and abs(ev.p_x - sv.p_x) < profile.window
            and abs(p_x_ter - ev.p_x) <= profile.terminal_zone)


def sample_sv_accel(profile: BehaviorProfile, sv: SvState, ev: EvState, t: int, rng,
                    p_x_ter: float = 1000.0, w_lane: float = 4.0) -> float:
    """Acceleration command of one SV at step ``t``, inside ``[-a_limit, a_limit]``."""
    lim = profile.a_limit
    if burst_active(profile, sv, ev, p_x_ter, w_lane):
        return truncated_gaussian(rng, profile.burst_mean, profile.burst_std, -lim, lim)
    return truncated_gaussian(rng, profile.mean, profile.std, -lim, lim)


def initial_information(profile: BehaviorProfile, size: int, rng) -> list:
    if size == 0:
        return [0.0]
    lim = profile.a_limit
    if profile.std == 0.0:
        return [float(min(max(profile.mean, -lim), lim))] * size
    a, b = (-lim - profile.mean) / profile.std, (lim - profile.mean) / profile.std
    draws = truncnorm.rvs(a, b, loc=profile.mean, scale=profile.std, size=size, random_state=rng)
    return [float(x) for x in draws]


# -------------------------------------------------------------- geometry

def ev_box(ev: EvState, geom: VehicleGeometry):
    return from_box((ev.p_x, ev.p_y), (geom.l_veh / 2, geom.w_veh / 2))


def sv_box(sv: SvState, geom: VehicleGeometry, lateral: float):
    return from_box((sv.p_x, lateral), (geom.l_veh / 2, geom.w_veh / 2))


def in_target_lane(ev: EvState, geom: VehicleGeometry, w_lane: float) -> bool:
    """Footprint entirely inside lane 2."""
    return ev.p_y - geom.w_veh / 2 >= w_lane


def touches_target_lane(ev: EvState, geom: VehicleGeometry, w_lane: float) -> bool:
    return ev.p_y + geom.w_veh / 2 > w_lane


def check_collision(ev: EvState, svs, geom: VehicleGeometry, w_lane: float = 4.0,
                    p_x_ter: float = 1000.0, sv_lateral: float | None = None,
                    at_end: bool = False) -> bool:
    """Footprint overlap with any SV or leaving the road laterally.  With
    ``at_end`` an EV still in lane 1 past the lane end and moving also counts."""
    lat = 1.5 * w_lane if sv_lateral is None else sv_lateral
    for sv in svs:
        if abs(ev.p_x - sv.p_x) < geom.l_veh and abs(ev.p_y - lat) < geom.w_veh:
            return True
    half_w = geom.w_veh / 2
    if ev.p_y - half_w < 0.0 or ev.p_y + half_w > 2 * w_lane:
        return True
    return at_end and ev.p_y < w_lane and ev.p_x > p_x_ter and ev.v > 0


# ------------------------------------------------------------ episode

@dataclass(frozen=True)
class StepRecord:
    t: float
    ev: EvState
    control: EvControl
    maneuver: str
    v_ref: float
    p_y_ref: float
    svs: tuple
    sv_accels: tuple
    bounds: tuple
    distances: tuple
    status: str
    plan_time: float = field(default=0.0, compare=False)


@dataclass
class EpisodeLog:
    planner_kind: PlannerKind
    seed: int
    T: float
    records: list = field(default_factory=list)
    final_ev: EvState | None = None
    final_svs: tuple = ()
    collided: bool = False
    merge_step: int | None = None
    stopped: bool = False
    solver_failure: bool = False
    reason: str = ""

    def __len__(self):
        return len(self.records)


@dataclass(frozen=True)
class EpisodeMetrics:
    success: bool
    merge_class: MergeClass
    min_d_sv0: float
    min_d_sv1: float
    max_abs_accel: float
    collided: bool = False


@dataclass(frozen=True)
class Stat:
    mean: float
    std: float

    @classmethod
    def of(cls, values) -> "Stat":
        v = np.array([x for x in values if math.isfinite(x)], dtype=float)
        if len(v) == 0:
            return cls(math.nan, math.nan)
        return cls(float(np.mean(v)), float(np.std(v)))


@dataclass(frozen=True)
class MetricsSummary:
    n: int
    success_rate: float
    merge_counts: dict
    min_d_sv0: Stat
    min_d_sv1: Stat
    max_abs_accel: Stat
    collisions: int = 0


def summarize(metrics) -> MetricsSummary:
    metrics = list(metrics)
    if not metrics:
        raise ValueError("cannot summarize an empty batch")
    counts = {c.value: 0 for c in MergeClass}
    for m in metrics:
        counts[m.merge_class.value] += 1
    return MetricsSummary(
        n=len(metrics),
        success_rate=sum(m.success for m in metrics) / len(metrics),
        merge_counts=counts,
        min_d_sv0=Stat.of(m.min_d_sv0 for m in metrics),
        min_d_sv1=Stat.of(m.min_d_sv1 for m in metrics),
        max_abs_accel=Stat.of(m.max_abs_accel for m in metrics),
        collisions=sum(m.collided for m in metrics),
    )


@dataclass
class EpisodeState:
    """Mutable closed-loop state of one episode."""

    t: int
    ev: EvState
    svs: list
    last_accels: list
    estimators: list
    planner: MpcPlanner
    rng: np.random.Generator
    solver_errors: int = 0


def start_episode(config: ScenarioConfig, seed: int) -> EpisodeState:
    rng = np.random.default_rng(seed)
    # a separate stream keeps SV behaviour identical across |I_0| sizes
    info_rng = np.random.default_rng([seed, 1])
    size = config.estimator.i0_size
    estimators = [BoundEstimator(initial_information(s.profile, size, info_rng)) for s in config.svs]
    return EpisodeState(0, config.ev.initial, [s.initial for s in config.svs], [None] * len(config.svs),
                        estimators, MpcPlanner(config.planner_params()), rng)


def step_episode(state: EpisodeState, planner_kind: PlannerKind, config: ScenarioConfig,
                 decision_params: DecisionParams | None = None) -> StepRecord:
    """Advance ``state`` by one sampling interval and return the record of
    the tick that was executed."""
    sc = config.scenario
    geom = config.vehicle
    dp = decision_params or config.decision_params()
    pp = state.planner.params
    t0 = time.perf_counter()

    for est, a in zip(state.estimators, state.last_accels):
        if a is not None:
            est.observe(a)
    bounds = tuple(est.bounds for est in state.estimators)
    preds = occupancy_for_planner(planner_kind, state.svs, bounds, config.worst_case(), sc.N,
                                  sc.v_adm, sc.T, geom, config.sv_lateral)
    dec = decide(state.ev, state.svs[0], state.svs[1], preds[0].steps, preds[1].steps, dp)
    obstacles = [[inflate_obstacle(o, geom) for o in p.steps[:pp.n_p]] for p in preds]
    try:
        sol = state.planner.plan(state.ev, dec.reference, obstacles)
        status = sol.status
        control = state.planner.first_control(state.ev, sol)
        state.solver_errors = 0
    except ValueError:
        # numerical breakdown of the inner QP; brake like an infeasible plan
        status = SOLVER_ERROR
        control = brake_control(state.ev, pp)
        state.planner = MpcPlanner(pp)
        state.solver_errors += 1
    plan_time = time.perf_counter() - t0

    distances = tuple(
        distance_polytopes(ev_box(state.ev, geom), sv_box(sv, geom, config.sv_lateral))
        for sv in state.svs)
    accels = []
    new_svs = []
    for spec, sv in zip(config.svs, state.svs):
        a = sample_sv_accel(spec.profile, sv, state.ev, state.t, state.rng, sc.p_x_ter, sc.w_lane)
        a = saturate_accel(sv.v_x, a, sc.v_adm, sc.T)
        nxt = sv_step(sv, a, sc.T)
        new_svs.append(SvState(nxt.p_x, min(max(nxt.v_x, 0.0), sc.v_adm)))
        accels.append(a)
    record = StepRecord(state.t * sc.T, state.ev, control, dec.reference.maneuver.value,
                        dec.reference.v_x_ref, dec.reference.p_y_ref, tuple(state.svs), tuple(accels),
                        bounds, distances, status, plan_time)

    state.ev = ev_step_rk4(state.ev, control, geom, sc.T)
    state.svs = new_svs
    state.last_accels = accels
    state.t += 1
    return record


def run_episode(config: ScenarioConfig, planner_kind: PlannerKind, seed: int | None = None
                ) -> tuple[EpisodeLog, EpisodeMetrics]:
    sc = config.scenario
    geom = config.vehicle
    seed = sc.seed if seed is None else seed
    dp = config.decision_params()
    state = start_episode(config, seed)
    log = EpisodeLog(planner_kind, seed, sc.T)
    stopped_for = 0
    while True:
        log.records.append(step_episode(state, planner_kind, config, dp))
        ev = state.ev
        if check_collision(ev, state.svs, geom, sc.w_lane, sc.p_x_ter, config.sv_lateral):
            log.collided = True
            log.reason = "collision"
            break
        if log.merge_step is None and in_target_lane(ev, geom, sc.w_lane):
            log.merge_step = state.t
        if log.merge_step is not None and state.t - log.merge_step >= sc.settle_steps:
            log.reason = "merged"
            break
        if log.merge_step is None and ev.v <= sc.stop_speed and not touches_target_lane(ev, geom, sc.w_lane):
            stopped_for += 1
            if stopped_for >= sc.stop_steps:
                log.stopped = True
                log.reason = "stopped"
                break
        else:
            stopped_for = 0
        if state.solver_errors >= MAX_SOLVER_ERRORS:
            log.solver_failure = True
            log.reason = "solver_failure"
            break
        if state.t >= sc.horizon_steps:
            log.reason = "step_limit"
            break
    if not log.collided and check_collision(state.ev, state.svs, geom, sc.w_lane, sc.p_x_ter,
                                            config.sv_lateral, at_end=True):
        log.collided = True
        log.reason = "lane_end"
    log.final_ev = state.ev
    log.final_svs = tuple(state.svs)
    return log, episode_metrics(log, config)


def classify_merge(log: EpisodeLog, config: ScenarioConfig) -> MergeClass:
    """Longitudinal order at the first instant the EV is fully in lane 2."""
    if log.merge_step is None:
        return MergeClass.NO_MERGE
    ev, svs = _state_at(log, log.merge_step)
    if ev.p_x > svs[0].p_x:
        return MergeClass.AHEAD
    if ev.p_x > svs[1].p_x:
        return MergeClass.BETWEEN
    return MergeClass.AFTER


def _state_at(log: EpisodeLog, k: int):
    if k < len(log.records):
        return log.records[k].ev, log.records[k].svs
    return log.final_ev, log.final_svs


def lane2_distances(log: EpisodeLog, config: ScenarioConfig) -> tuple[float, float]:
    """Minimum footprint distances to SV0 and SV1 while the EV footprint
    reaches into lane 2; NaN if it never does."""
    geom = config.vehicle
    w = config.scenario.w_lane
    best = [math.inf, math.inf]
    for r in log.records:
        if touches_target_lane(r.ev, geom, w):
            best = [min(b, d) for b, d in zip(best, r.distances)]
    return tuple(b if math.isfinite(b) else math.nan for b in best)


def episode_metrics(log: EpisodeLog, config: ScenarioConfig) -> EpisodeMetrics:
    sc = config.scenario
    geom = config.vehicle
    safe_stop = (log.stopped and log.final_ev.v <= sc.stop_speed
                 and log.final_ev.p_x + geom.l_veh / 2 <= sc.p_x_ter)
    success = (not log.collided and not log.solver_failure
               and (log.reason == "merged" or safe_stop))
    d0, d1 = lane2_distances(log, config)
    accels = [abs(r.ev.a) for r in log.records]
    if log.final_ev is not None:
        accels.append(abs(log.final_ev.a))
    return EpisodeMetrics(success, classify_merge(log, config), d0, d1, max(accels), log.collided)


# ------------------------------------------------------------- batches

def episode_seeds(base_seed: int, n: int) -> list:
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(base_seed).spawn(n)]


def worker_count(requested: int | None = None) -> int:
    if requested is None:
        env = os.environ.get(THREADS_ENV)
        requested = int(env) if env else (os.cpu_count() or 1)
    return max(1, requested)


def _episode_task(args):
    config, kind, seed = args
    log, metrics = run_episode(config, kind, seed)
    return metrics, log


def run_batch(config: ScenarioConfig, planner_kind: PlannerKind, seeds, workers: int | None = None,
              keep_logs: bool = False) -> tuple[list, list]:
    """Episodes for ``seeds`` in order; parallel across processes."""
    tasks = [(config, planner_kind, s) for s in seeds]
    workers = min(worker_count(workers), len(tasks))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_episode_task, tasks))
    else:
        results = [_episode_task(t) for t in tasks]
    metrics = [m for m, _ in results]
    logs = [lg for _, lg in results] if keep_logs else []
    return metrics, logs


def run_monte_carlo(config: ScenarioConfig, planner_kind: PlannerKind, n: int, base_seed: int,
                    workers: int | None = None) -> MetricsSummary:
    if n < 1:
        raise ValueError("Monte-Carlo batch needs at least one episode")
    metrics, _ = run_batch(config, planner_kind, episode_seeds(base_seed, n), workers)
    return summarize(metrics)


@dataclass(frozen=True)
class ConvergenceRow:
    size: int
    summary: MetricsSummary


def convergence_study(config: ScenarioConfig, sizes, repeats: int, base_seed: int,
                      planner_kind: PlannerKind = PlannerKind.PROPOSED,
                      workers: int | None = None) -> list:
    """Metrics per initial information-set size, with shared episode seeds."""
    sizes = list(sizes)
    if not sizes:
        raise ValueError("sizes must be nonempty")
    if repeats < 1:
        raise ValueError("repeats must be at least 1")
    if any(s < 1 for s in sizes):
        raise ValueError("information-set sizes must be positive")
    seeds = episode_seeds(base_seed, repeats)
    rows = []
    for size in sizes:
        cfg = replace(config, estimator=replace(config.estimator, i0_size=size))
        metrics, _ = run_batch(cfg, planner_kind, seeds, workers)
        rows.append(ConvergenceRow(size, summarize(metrics)))
    return rows


def planning_times(log: EpisodeLog) -> np.ndarray:
    return np.array([r.plan_time for r in log.records])


def fallback_steps(log: EpisodeLog) -> int:
    return sum(r.status in (INFEASIBLE_RELAXED, SOLVER_ERROR) for r in log.records)


def maneuvers(log: EpisodeLog) -> list:
    return [Maneuver(r.maneuver) for r in log.records]
