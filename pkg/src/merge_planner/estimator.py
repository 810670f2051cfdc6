"""Online acceleration-bound estimation and forward occupancy prediction
for surrounding vehicles."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .models import SvState, as_footprint, sv_matrices
from .polytope import Polytope2, from_box, intersect_halfspace, minkowski_sum, project_axis


class EstimatorError(ValueError):
    pass


@dataclass(frozen=True)
class AccelBounds:
    a_min: float
    a_max: float

    def __post_init__(self):
        if not self.a_min <= self.a_max:
            raise EstimatorError(f"a_min {self.a_min} exceeds a_max {self.a_max}")

    def contains(self, a: float, tol: float = 0.0) -> bool:
        return self.a_min - tol <= a <= self.a_max + tol

    def is_subset(self, other: "AccelBounds") -> bool:
        return other.a_min <= self.a_min and self.a_max <= other.a_max


@dataclass
class InformationSet:
    """Observed accelerations of one surrounding vehicle."""

    samples: list = field(default_factory=list)

    def add(self, a: float) -> None:
        self.samples.append(float(a))

    def __len__(self):
        return len(self.samples)


def init_bounds(info: InformationSet) -> AccelBounds:
    if len(info) == 0:
        raise EstimatorError("information set is empty")
    return AccelBounds(min(info.samples), max(info.samples))


def update_bounds(bounds: AccelBounds, observed: float) -> AccelBounds:
    if not math.isfinite(observed):
        raise EstimatorError(f"non-finite acceleration observation {observed!r}")
    if bounds.contains(observed):
        return bounds
    return AccelBounds(min(bounds.a_min, observed), max(bounds.a_max, observed))


def worst_case_bounds(mu: float, g: float) -> AccelBounds:
    if mu <= 0 or g <= 0:
        raise EstimatorError("friction coefficient and gravity must be positive")
    return AccelBounds(-mu * g, mu * g)


class BoundEstimator:
    """Running min/max of one vehicle's observed accelerations.

    ``keep_samples`` retains the full information set, which is only needed
    when its cardinality matters (convergence studies).
    """

    def __init__(self, initial_info, keep_samples: bool = False):
        info = InformationSet(list(initial_info))
        self.bounds = init_bounds(info)
        self.info = info if keep_samples else None

    def observe(self, a: float) -> AccelBounds:
        self.bounds = update_bounds(self.bounds, a)
        if self.info is not None:
            self.info.add(a)
        return self.bounds


@dataclass(frozen=True)
class OccupancyPrediction:
    steps: tuple
    reachable: tuple

    def __len__(self):
        return len(self.steps)


def predict_reachable(x: SvState, bounds: AccelBounds, n: int, v_adm: float, T: float) -> list:
    """Reachable (position, speed) sets for steps 1..n.

    Each step maps the previous set through the double integrator, adds the
    input segment and clips the speed to ``[0, v_adm]``.  Position is not
    clipped.
    """
    if n < 1:
        raise EstimatorError("prediction horizon must be at least one step")
    A, B = sv_matrices(T)
    inputs = Polytope2.from_vertices([B * bounds.a_min, B * bounds.a_max])
    R = Polytope2.point(x.as_array())
    out = []
    for _ in range(n):
        prev = R
        R = minkowski_sum(R.linear_map(A), inputs)
        R = intersect_halfspace(R, (0.0, -1.0), 0.0)
        R = intersect_halfspace(R, (0.0, 1.0), v_adm)
        if R.is_empty:
            # input interval excludes zero and every successor saturates
            R = Polytope2.from_vertices([
                rollout_positions(SvState(*v), [a], v_adm, T)[0]
                for v in prev.vertices for a in (bounds.a_min, bounds.a_max)
            ])
        out.append(R)
    return out


def predict_occupancy(reachable, geom, lateral_center: float) -> list:
    """Position occupancies: longitudinal extent of each reachable set
    padded by the footprint, centred laterally on ``lateral_center``."""
    fp = as_footprint(geom)
    out = []
    for R in reachable:
        lo, hi = project_axis(R, 0)
        out.append(from_box(((lo + hi) / 2, lateral_center),
                            ((hi - lo) / 2 + fp.length / 2, fp.width / 2)))
    return out


def predict(x: SvState, bounds: AccelBounds, n: int, v_adm: float, T: float,
            geom, lateral_center: float) -> OccupancyPrediction:
    reach = predict_reachable(x, bounds, n, v_adm, T)
    return OccupancyPrediction(tuple(predict_occupancy(reach, geom, lateral_center)), tuple(reach))


def rollout_positions(x: SvState, accels, v_adm: float, T: float) -> np.ndarray:
    """Simulate with speed saturation; returns ``(len(accels), 2)`` states.

    Saturation adjusts the applied acceleration so the speed lands exactly
    on the bound, keeping the state on the double-integrator model.
    """
    p, v = x.p_x, x.v_x
    out = np.empty((len(accels), 2))
    for i, a in enumerate(accels):
        a = saturate_accel(v, a, v_adm, T)
        p, v = p + T * v + 0.5 * T * T * a, v + T * a
        v = min(max(v, 0.0), v_adm)
        out[i] = p, v
    return out


def saturate_accel(v: float, a: float, v_adm: float, T: float) -> float:
    return min(max(a, -v / T), (v_adm - v) / T)
