"""Vehicle models: ego kinematics, surrounding-vehicle double integrator,
and the point-mass state-feedback model used for decision making."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .polytope import Polytope2, from_box


@dataclass(frozen=True)
class EvState:
    p_x: float
    p_y: float
    phi: float
    v: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y, self.phi, self.v, self.a])

    @classmethod
    def from_array(cls, x) -> "EvState":
        return cls(*(float(c) for c in x))


@dataclass(frozen=True)
class EvControl:
    delta: float
    eta: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta, self.eta])


@dataclass(frozen=True)
class SvState:
    p_x: float
    v_x: float

    def as_array(self) -> np.ndarray:
        return np.array([self.p_x, self.v_x])


@dataclass(frozen=True)
class Footprint:
    """Axis-aligned vehicle rectangle; zero sizes are allowed."""

    length: float
    width: float

    def __post_init__(self):
        if self.length < 0 or self.width < 0:
            raise ValueError("footprint sizes must be nonnegative")

    def box(self, center) -> Polytope2:
        return from_box(center, (self.length / 2, self.width / 2))


@dataclass(frozen=True)
class VehicleGeometry:
    l_f: float = 1.65
    l_r: float = 1.65
    l_veh: float = 4.3
    w_veh: float = 1.8

    def __post_init__(self):
        if min(self.l_f, self.l_r, self.l_veh, self.w_veh) <= 0:
            raise ValueError("vehicle dimensions must be positive")
        if self.l_f + self.l_r > self.l_veh + 1e-12:
            raise ValueError("wheelbase l_f + l_r exceeds vehicle length")

    @property
    def footprint(self) -> Footprint:
        return Footprint(self.l_veh, self.w_veh)


def as_footprint(geom) -> Footprint:
    return geom.footprint if isinstance(geom, VehicleGeometry) else geom


# ---------------------------------------------------------------- ego model

def _deriv(x, delta, eta, lf, lr):
    v, phi = x[3], x[2]
    return np.array([
        v,
        v * (phi + lr / (lf + lr) * delta),
        v * delta / (lf + lr),
        x[4],
        eta,
    ])


def _deriv_jac(x, delta, lf, lr):
    """Jacobians of the kinematic derivative w.r.t. state and control."""
    v, phi = x[3], x[2]
    L = lf + lr
    fx = np.zeros((5, 5))
    fx[0, 3] = 1.0
    fx[1, 2] = v
    fx[1, 3] = phi + lr / L * delta
    fx[2, 3] = delta / L
    fx[3, 4] = 1.0
    fu = np.zeros((5, 2))
    fu[1, 0] = v * lr / L
    fu[2, 0] = v / L
    fu[4, 1] = 1.0
    return fx, fu


def ev_derivative(x: EvState, u: EvControl, geom: VehicleGeometry) -> np.ndarray:
    """Time derivative of the linearized single-track kinematics."""
    return _deriv(x.as_array(), u.delta, u.eta, geom.l_f, geom.l_r)


def rk4_step(x: np.ndarray, u: np.ndarray, lf: float, lr: float, T: float) -> np.ndarray:
    d, e = u[0], u[1]
    k1 = _deriv(x, d, e, lf, lr)
    k2 = _deriv(x + 0.5 * T * k1, d, e, lf, lr)
    k3 = _deriv(x + 0.5 * T * k2, d, e, lf, lr)
    k4 = _deriv(x + T * k3, d, e, lf, lr)
    return x + T / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def rk4_step_jac(x, u, lf, lr, T):
    """One RK4 step and its Jacobians ``(x_next, dx_next/dx, dx_next/du)``."""
    d, e = u[0], u[1]
    I = np.eye(5)
    k1 = _deriv(x, d, e, lf, lr)
    A1, B1 = _deriv_jac(x, d, lf, lr)
    x2 = x + 0.5 * T * k1
    k2 = _deriv(x2, d, e, lf, lr)
    A2, B2 = _deriv_jac(x2, d, lf, lr)
    x3 = x + 0.5 * T * k2
    k3 = _deriv(x3, d, e, lf, lr)
    A3, B3 = _deriv_jac(x3, d, lf, lr)
    x4 = x + T * k3
    k4 = _deriv(x4, d, e, lf, lr)
    A4, B4 = _deriv_jac(x4, d, lf, lr)

    dk1x = A1
    dk2x = A2 @ (I + 0.5 * T * dk1x)
    dk3x = A3 @ (I + 0.5 * T * dk2x)
    dk4x = A4 @ (I + T * dk3x)
    dk1u = B1
    dk2u = A2 @ (0.5 * T * dk1u) + B2
    dk3u = A3 @ (0.5 * T * dk2u) + B3
    dk4u = A4 @ (T * dk3u) + B4

    xn = x + T / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    Jx = I + T / 6.0 * (dk1x + 2 * dk2x + 2 * dk3x + dk4x)
    Ju = T / 6.0 * (dk1u + 2 * dk2u + 2 * dk3u + dk4u)
    return xn, Jx, Ju


def ev_step_rk4(x: EvState, u: EvControl, geom: VehicleGeometry, T: float) -> EvState:
    """Advance the ego vehicle by one sampling interval, control held constant."""
    if T <= 0:
        raise ValueError("step length must be positive")
    xn = rk4_step(x.as_array(), u.as_array(), geom.l_f, geom.l_r, T)
    return EvState.from_array(xn)


# ------------------------------------------------------ surrounding vehicles

def sv_matrices(T: float) -> tuple[np.ndarray, np.ndarray]:
    return np.array([[1.0, T], [0.0, 1.0]]), np.array([T * T / 2, T])


def sv_step(x: SvState, a: float, T: float) -> SvState:
    if T <= 0:
        raise ValueError("step length must be positive")
    return SvState(x.p_x + T * x.v_x + 0.5 * T * T * a, x.v_x + T * a)


# -------------------------------------------------------- point-mass model

def pointmass_matrices(T: float) -> tuple[np.ndarray, np.ndarray]:
    """Block matrices ``A`` (6x6) and ``B`` (6x2) of the point-mass model."""
    chain = np.array([[1.0, T, T * T / 2], [0.0, 1.0, T], [0.0, 0.0, 1.0]])
    A = np.zeros((6, 6))
    A[:3, :3] = chain
    A[3:, 3:] = chain
    B = np.zeros((6, 2))
    B[:3, 0] = [0.0, T * T / 2, T]
    B[3:, 1] = [T ** 3 / 6, T * T / 2, T]
    return A, B


@dataclass(frozen=True)
class FeedbackGains:
    """Point-mass state-feedback gains.

    Stability is checked on the tracked coordinates; with a zero position
    gain the longitudinal position is a free integrator and is excluded.
    """

    k_lon: tuple = (0.0, 0.3847, 0.8663)
    k_lat: tuple = (0.5681, 1.4003, 1.7260)
    T: float = 0.25
    spectral_radius: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "k_lon", tuple(float(k) for k in self.k_lon))
        object.__setattr__(self, "k_lat", tuple(float(k) for k in self.k_lat))
        if len(self.k_lon) != 3 or len(self.k_lat) != 3:
            raise ValueError("feedback gains must be 3-vectors")
        Phi = self.closed_loop()
        if self.k_lon[0] == 0.0:
            # position is not fed back, leaving a decoupled unit eigenvalue
            Phi = Phi[1:, 1:]
        rho = float(np.max(np.abs(np.linalg.eigvals(Phi))))
        if not rho < 1.0:
            raise ValueError(f"closed-loop point-mass model not Schur stable (rho={rho:.4f})")
        object.__setattr__(self, "spectral_radius", rho)

    def matrix(self) -> np.ndarray:
        K = np.zeros((2, 6))
        K[0, :3] = self.k_lon
        K[1, 3:] = self.k_lat
        return K

    def closed_loop(self) -> np.ndarray:
        A, B = pointmass_matrices(self.T)
        return A - B @ self.matrix()


def pointmass_rollout(z0, z_ref, gains: FeedbackGains, n: int, T: float | None = None) -> np.ndarray:
    """Closed-loop point-mass prediction; returns an ``(n, 6)`` array of
    ``[p_x, v_x, a_x, p_y, v_y, a_y]`` for steps 1..n."""
    if n < 1:
        raise ValueError("rollout needs at least one step")
    if T is not None and T != gains.T:
        gains = FeedbackGains(gains.k_lon, gains.k_lat, T)
    A, B = pointmass_matrices(gains.T)
    K = gains.matrix()
    Phi = A - B @ K
    drive = B @ K @ np.asarray(z_ref, dtype=float)
    out = np.empty((n, 6))
    z = np.asarray(z0, dtype=float)
    for i in range(n):
        z = Phi @ z + drive
        out[i] = z
    return out
