"""Rule-based maneuver decision: safe reference velocities per lane from a
one-dimensional QP over the point-mass model, maneuver costs, selection."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numpy as np

from .models import EvState, FeedbackGains, SvState, pointmass_matrices, pointmass_rollout
from .polytope import EmptySetError, project_axis

INFEASIBLE_PENALTY = 1e6
COST_FLOOR = 1e-12


class Maneuver(enum.Enum):
    VT1 = "VT1"
    VT2 = "VT2"


@dataclass(frozen=True)
class Reference:
    v_x_ref: float
    p_y_ref: float
    maneuver: Maneuver


@dataclass(frozen=True)
class CorridorBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("corridor bounds must be equal-length sequences")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def constant(cls, lower: float, upper: float, n: int) -> "CorridorBounds":
        return cls(np.full(n, float(lower)), np.full(n, float(upper)))

    def __len__(self):
        return len(self.lower)


@dataclass(frozen=True)
class DecisionParams:
    d_min: float = 0.5
    l_veh: float = 4.3
    W_x: float = 0.1
    W_y: float = 0.1
    W_v: float = 0.7
    W_l: float = 0.1
    gains: FeedbackGains = field(default_factory=FeedbackGains)
    T: float = 0.25
    N: int = 20
    w_lane: float = 4.0
    p_x_ter: float = 1000.0
    v_adm: float = 50.0

    def __post_init__(self):
        if self.d_min_qp <= 0:
            raise ValueError("d_min + l_veh must be positive")
        if self.N < 1:
            raise ValueError("prediction horizon N must be >= 1")
        if min(self.W_x, self.W_y, self.W_v, self.W_l) < 0:
            raise ValueError("maneuver weights must be nonnegative")
        if self.gains.T != self.T:
            object.__setattr__(self, "gains", FeedbackGains(self.gains.k_lon, self.gains.k_lat, self.T))

    @property
    def d_min_qp(self) -> float:
        return self.d_min + self.l_veh

    def lane_center(self, maneuver: Maneuver) -> float:
        return (0.5 if maneuver is Maneuver.VT1 else 1.5) * self.w_lane


def pointmass_state(ev: EvState) -> np.ndarray:
    """Decision-level state of the ego vehicle; lateral rates are not measured."""
    return np.array([ev.p_x, ev.v, ev.a, ev.p_y, 0.0, 0.0])


def occupancy_extremes(occ) -> tuple[np.ndarray, np.ndarray]:
    lows, highs = [], []
    for o in occ:
        if o.is_empty:
            raise EmptySetError("occupancy step is empty")
        lo, hi = project_axis(o, 0)
        lows.append(lo)
        highs.append(hi)
    return np.array(lows), np.array(highs)


def _affine_rollout(z0, p_y_ref, params: DecisionParams):
    """Predicted states as ``alpha + beta * v_ref``, each ``(N, 6)``."""
    A, B = pointmass_matrices(params.T)
    K = params.gains.matrix()
    Phi = A - B @ K
    BK = B @ K
    drive0 = BK @ np.array([0.0, 0.0, 0.0, p_y_ref, 0.0, 0.0])
    drive1 = BK @ np.array([0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    alpha = np.empty((params.N, 6))
    beta = np.empty((params.N, 6))
    za = np.asarray(z0, dtype=float)
    zb = np.zeros(6)
    for i in range(params.N):
        za = Phi @ za + drive0
        zb = Phi @ zb + drive1
        alpha[i] = za
        beta[i] = zb
    return alpha, beta


def qp_objective(v_ref: float, z0, p_y_ref: float, params: DecisionParams) -> float:
    z = pointmass_rollout(z0, [0.0, v_ref, 0.0, p_y_ref, 0.0, 0.0], params.gains, params.N)
    return float(np.sum((z[:, 1] - v_ref) ** 2))


def feasible_interval(z0, corridor: CorridorBounds, p_y_ref: float,
                      params: DecisionParams) -> tuple[float, float]:
    """Exact set of reference velocities meeting every corridor constraint,
    intersected with ``[0, v_adm]``; ``lb > ub`` when empty."""
    if len(corridor) != params.N:
        raise ValueError(f"corridor length {len(corridor)} != N={params.N}")
    alpha, beta = _affine_rollout(z0, p_y_ref, params)
    ap, bp = alpha[:, 0], beta[:, 0]
    lb, ub = 0.0, params.v_adm
    d = params.d_min_qp
    for i in range(params.N):
        lo = corridor.lower[i] + d
        hi = corridor.upper[i] - d
        if lo > hi:
            return math.inf, -math.inf
        # lo <= ap + bp * v <= hi
        if abs(bp[i]) < 1e-14:
            if not lo <= ap[i] <= hi:
                return math.inf, -math.inf
            continue
        a1 = (lo - ap[i]) / bp[i]
        a2 = (hi - ap[i]) / bp[i]
        if bp[i] < 0:
            a1, a2 = a2, a1
        lb = max(lb, a1)
        ub = min(ub, a2)
    return lb, ub


def ref_velocity_qp(z0, corridor: CorridorBounds, p_y_ref: float,
                    params: DecisionParams) -> float | None:
    """Reference velocity minimizing the predicted speed-tracking error,
    or ``None`` when no admissible value satisfies the corridor."""
    lb, ub = feasible_interval(z0, corridor, p_y_ref, params)
    if lb > ub:
        return None
    alpha, beta = _affine_rollout(z0, p_y_ref, params)
    # sum_i (alpha_v + (beta_v - 1) v)^2
    c = beta[:, 1] - 1.0
    den = float(c @ c)
    if den < 1e-14:
        v = lb
    else:
        v = -float(alpha[:, 1] @ c) / den
    return min(max(v, lb), ub)


@dataclass(frozen=True)
class ReferenceVelocities:
    v_vt1: float
    v_vt2: float
    branch: str
    infeasible: frozenset = frozenset()

    def __iter__(self):
        return iter((self.v_vt1, self.v_vt2))


def algorithm1(ev: EvState, sv0: SvState, sv1: SvState, occ0, occ1,
               params: DecisionParams) -> ReferenceVelocities:
    """Reference velocities for both lanes given SV0 (ahead) and SV1 occupancies.

    Branches on the ego position relative to the two vehicles: ahead of SV0,
    between SV0 and SV1, or behind SV1.  An infeasible QP yields zero speed
    and marks the maneuver in ``infeasible``.
    """
    n = params.N
    z0 = pointmass_state(ev)
    y1 = params.lane_center(Maneuver.VT1)
    y2 = params.lane_center(Maneuver.VT2)
    infeasible = set()

    v1 = ref_velocity_qp(z0, CorridorBounds.constant(-math.inf, params.p_x_ter, n), y1, params)
    if v1 is None:
        v1 = 0.0
        infeasible.add(Maneuver.VT1)

    lo0, hi0 = occupancy_extremes(occ0)
    lo1, hi1 = occupancy_extremes(occ1)
    if sv0.p_x <= ev.p_x:
        branch = "ahead"
        corridor = CorridorBounds(hi0, np.full(n, math.inf))
    elif sv1.p_x <= ev.p_x < sv0.p_x:
        branch = "between"
        corridor = CorridorBounds(hi1, lo0)
    else:
        branch = "behind"
        corridor = CorridorBounds(np.full(n, -math.inf), lo1)

    if branch == "between" and np.min(corridor.upper - corridor.lower) <= 2 * params.d_min_qp:
        v2 = 0.0
    else:
        v2 = ref_velocity_qp(z0, corridor, y2, params)
        if v2 is None:
            v2 = 0.0
            infeasible.add(Maneuver.VT2)
    return ReferenceVelocities(v1, v2, branch, frozenset(infeasible))


def maneuver_cost(z0, v_m: float, p_y_m: float, params: DecisionParams) -> float:
    z = pointmass_rollout(z0, [0.0, v_m, 0.0, p_y_m, 0.0, 0.0], params.gains, params.N)
    z0 = np.asarray(z0, dtype=float)
    accel = params.W_x * float(np.sum(z[:, 2] ** 2)) + params.W_y * float(np.sum(z[:, 5] ** 2))
    return accel + params.W_v * (z0[1] - v_m) ** 2 + params.W_l * (z0[3] - p_y_m) ** 2


def maneuver_probabilities(j_vt1: float, j_vt2: float) -> tuple[float, float]:
    w1 = 1.0 / math.sqrt(max(j_vt1, COST_FLOOR))
    w2 = 1.0 / math.sqrt(max(j_vt2, COST_FLOOR))
    return w1 / (w1 + w2), w2 / (w1 + w2)


def select_maneuver(j_vt1: float, j_vt2: float, refs: dict) -> Reference:
    """Pick the more probable maneuver; ties go to the target lane."""
    if j_vt1 < 0 or j_vt2 < 0:
        raise ValueError("maneuver costs must be nonnegative")
    p1, p2 = maneuver_probabilities(j_vt1, j_vt2)
    return refs[Maneuver.VT1] if p1 > p2 else refs[Maneuver.VT2]


@dataclass(frozen=True)
class Decision:
    reference: Reference
    velocities: ReferenceVelocities
    costs: dict
    probabilities: tuple


def decide(ev: EvState, sv0: SvState, sv1: SvState, occ0, occ1,
           params: DecisionParams) -> Decision:
    vel = algorithm1(ev, sv0, sv1, occ0, occ1, params)
    z0 = pointmass_state(ev)
    refs, costs = {}, {}
    for m, v in ((Maneuver.VT1, vel.v_vt1), (Maneuver.VT2, vel.v_vt2)):
        y = params.lane_center(m)
        refs[m] = Reference(v, y, m)
        costs[m] = maneuver_cost(z0, v, y, params)
        if m in vel.infeasible:
            costs[m] += INFEASIBLE_PENALTY
    ref = select_maneuver(costs[Maneuver.VT1], costs[Maneuver.VT2], refs)
    return Decision(ref, vel, costs, maneuver_probabilities(costs[Maneuver.VT1], costs[Maneuver.VT2]))
