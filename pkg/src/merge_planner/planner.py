"""Trajectory planning by nonlinear MPC with dual-form collision constraints.

The optimal-control problem is solved by a dense single-shooting SQP: the
RK4 rollout and its sensitivities are linearized about the incumbent, a
convex QP with elastic slacks is solved, and steps are accepted by an
l1-merit backtracking line search.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
import quadprog

from .decision import Maneuver, Reference
from .estimator import AccelBounds, predict
from .models import EvControl, EvState, VehicleGeometry, as_footprint, rk4_step, rk4_step_jac
from .polytope import Polytope2, from_box, minkowski_sum

OPTIMAL = "optimal"
MAX_ITER = "max_iter"
INFEASIBLE_RELAXED = "infeasible_relaxed"
SLACK_LIMIT = 1e-4
FEAS_TOL = 1e-7


class PlannerKind(enum.Enum):
    PROPOSED = "proposed"
    RMPC = "rmpc"
    DMPC = "dmpc"


@dataclass(frozen=True)
class SqpSettings:
    max_iterations: int = 30
    kkt_tolerance: float = 1e-6
    merit_penalty: float = 1e4
    backtracking: float = 0.5
    slack_penalty: float = 1e4
    warm_start: bool = True
    armijo: float = 1e-4
    min_step: float = 1e-6

    def __post_init__(self):
        if self.max_iterations < 1 or self.kkt_tolerance <= 0:
            raise ValueError("SQP iteration limit and tolerance must be positive")
        if self.merit_penalty <= 0 or self.slack_penalty <= 0:
            raise ValueError("SQP penalties must be positive")
        if not 0 < self.backtracking < 1:
            raise ValueError("backtracking factor must lie in (0, 1)")


@dataclass(frozen=True)
class PlannerParams:
    n_p: int = 10
    q1: float = 100.0
    q2: float = 0.001
    q3: tuple = (1.0, 1.0)
    u_lower: tuple = (0.0, -5.0, -0.1)
    u_upper: tuple = (50.0, 2.5, 0.1)
    d_min: float = 0.1
    w_lane: float = 4.0
    p_x_ter: float = 1000.0
    T: float = 0.25
    geom: VehicleGeometry = field(default_factory=VehicleGeometry)
    sqp: SqpSettings = field(default_factory=SqpSettings)

    def __post_init__(self):
        if self.n_p < 1:
            raise ValueError("MPC horizon must be at least one step")
        if any(lo >= hi for lo, hi in zip(self.u_lower, self.u_upper)):
            raise ValueError("u_lower must be below u_upper componentwise")
        if self.d_min < 0:
            raise ValueError("d_min must be nonnegative")

    @property
    def lateral_limits(self) -> tuple[float, float]:
        half = self.geom.w_veh / 2
        return half, 2 * self.w_lane - half

    @property
    def x_cap(self) -> float:
        return self.p_x_ter - self.geom.l_veh / 2


@dataclass(frozen=True)
class ObstacleStep:
    normals: np.ndarray
    offsets: np.ndarray

    @classmethod
    def from_polytope(cls, p: Polytope2) -> "ObstacleStep":
        H, h = p.hrep
        return cls(np.array(H), np.array(h))

    def polytope(self) -> Polytope2:
        return Polytope2.from_halfspaces(self.normals, self.offsets)


@dataclass
class MpcSolution:
    controls: list
    states: list
    duals: np.ndarray
    status: str
    objective: float
    solve_time: float = 0.0
    iterations: int = 0
    merit_history: list = field(default_factory=list)  # (before, after) per accepted step
    max_slack: float = 0.0

    def control_array(self) -> np.ndarray:
        n = len(self.controls)
        return np.concatenate([[c.delta for c in self.controls], [c.eta for c in self.controls]]) \
            if n else np.empty(0)


# ------------------------------------------------------------- obstacles

def inflate_obstacle(occ: Polytope2, geom) -> ObstacleStep:
    """Occupancy grown by the ego footprint, as normalized halfspaces."""
    fp = as_footprint(geom)
    grown = minkowski_sum(occ, from_box((0.0, 0.0), (fp.length / 2, fp.width / 2)))
    return ObstacleStep.from_polytope(grown)


def dual_certificate(p, normals, offsets) -> tuple[float, np.ndarray]:
    """Best multiplier with ``||H^T lam|| = 1``, ``lam >= 0``.

    The value ``(H p - h)^T lam`` is the signed distance from ``p`` to the
    polygon: positive outside, minus the penetration depth inside.  Optimal
    multipliers are supported on at most two facets in the plane, so the
    facets and facet pairs are enumerated.
    """
    H = np.asarray(normals, dtype=float)
    r = H @ np.asarray(p, dtype=float) - np.asarray(offsets, dtype=float)
    m = len(r)
    j = int(np.argmax(r))
    best, lam = float(r[j]), np.zeros(m)
    lam[j] = 1.0
    if best <= 0.0:
        return best, lam
    for a in range(m):
        for b in range(a + 1, m):
            if r[a] <= 0 and r[b] <= 0:
                continue
            g = H[a] @ H[b]
            det = 1.0 - g * g
            if det < 1e-12:
                continue
            # lam = G^{-1} c / sqrt(c^T G^{-1} c) with G the facet Gram matrix
            ga = (r[a] - g * r[b]) / det
            gb = (r[b] - g * r[a]) / det
            if ga < 0 or gb < 0:
                continue
            q = r[a] * ga + r[b] * gb
            if q <= 0:
                continue
            val = math.sqrt(q)
            if val > best:
                best = val
                lam = np.zeros(m)
                lam[a], lam[b] = ga / val, gb / val
    return best, lam


def dual_distance(p, obs: ObstacleStep) -> float:
    """Distance from ``p`` to the obstacle through its dual program
    (zero when ``p`` is inside)."""
    val, _ = dual_certificate(p, obs.normals, obs.offsets)
    return max(0.0, val)


def occupancy_for_planner(kind: PlannerKind, sv_states, estimated, worst_case: AccelBounds,
                          n: int, v_adm: float, T: float, geom, lateral_center: float) -> list:
    """Per-SV occupancy predictions with the planner kind's input set:
    estimated bounds, the worst case, or zero."""
    out = []
    for x, bounds in zip(sv_states, estimated):
        if kind is PlannerKind.RMPC:
            bounds = worst_case
        elif kind is PlannerKind.DMPC:
            bounds = AccelBounds(0.0, 0.0)
        out.append(predict(x, bounds, n, v_adm, T, geom, lateral_center))
    return out


# ------------------------------------------------------------ rollout

def _rollout(x0, u, n, geom, T, with_jac=True):
    """States 0..n and, optionally, sensitivities d x_i / d u for i = 1..n."""
    X = np.empty((n + 1, 5))
    X[0] = x0
    S = np.zeros((n + 1, 5, 2 * n)) if with_jac else None
    for i in range(n):
        ui = (u[i], u[n + i])
        if with_jac:
            X[i + 1], Jx, Ju = rk4_step_jac(X[i], ui, geom.l_f, geom.l_r, T)
            S[i + 1] = Jx @ S[i]
            S[i + 1][:, i] += Ju[:, 0]
            S[i + 1][:, n + i] += Ju[:, 1]
        else:
            X[i + 1] = rk4_step(X[i], ui, geom.l_f, geom.l_r, T)
    return X, S


class _Problem:
    """Evaluations of one MPC instance at a control vector."""

    def __init__(self, x0, ref: Reference, obstacles, params: PlannerParams):
        self.x0 = np.asarray(x0, dtype=float)
        self.ref = ref
        self.params = params
        n = params.n_p
        self.n = n
        self.obs = [seq[:n] for seq in obstacles]
        for seq in self.obs:
            if len(seq) < n:
                raise ValueError(f"obstacle sequence shorter than horizon {n}")
        self.S = len(self.obs)
        self.m = [[len(o.offsets) for o in seq] for seq in self.obs]
        self.nlam = sum(sum(ms) for ms in self.m)
        self.cap = ref.maneuver is Maneuver.VT1
        q3y, q3v = params.q3
        self.q3 = np.array([q3y, q3v])

    def objective(self, u, X):
        p = self.params
        n = self.n
        e = np.array([X[n, 1] - self.ref.p_y_ref, X[n, 3] - self.ref.v_x_ref])
        return p.q1 * float(u[:n] @ u[:n]) + p.q2 * float(u[n:] @ u[n:]) + float(self.q3 @ (e * e))

    def state_residuals(self, X):
        """Constraint values ``c >= 0`` per step, shape ``(n, k)``."""
        p = self.params
        ylo, yhi = p.lateral_limits
        v, a, y = X[1:, 3], X[1:, 4], X[1:, 1]
        cols = [v - p.u_lower[0], p.u_upper[0] - v, a - p.u_lower[1], p.u_upper[1] - a,
                y - ylo, yhi - y]
        if self.cap:
            cols.append(p.x_cap - X[1:, 0])
        return np.column_stack(cols)

    def state_jacobians(self, S):
        p_rows = [(3, 1.0), (3, -1.0), (4, 1.0), (4, -1.0), (1, 1.0), (1, -1.0)]
        if self.cap:
            p_rows.append((0, -1.0))
        return [sign * S[1:, comp, :] for comp, sign in p_rows]

    def unpack_lam(self, lam):
        out, k = [], 0
        for ms in self.m:
            row = []
            for mi in ms:
                row.append(lam[k:k + mi])
                k += mi
            out.append(row)
        return out

    def collision_values(self, X, lam):
        """Dual constraint values ``(Hp-h)^T lam - d_min`` and cone values
        ``||H^T lam||^2 - 1`` for every SV and step."""
        L = self.unpack_lam(lam)
        g = np.empty((self.S, self.n))
        cone = np.empty((self.S, self.n))
        for s, seq in enumerate(self.obs):
            for i, o in enumerate(seq):
                l = L[s][i]
                g[s, i] = (o.normals @ X[i + 1, :2] - o.offsets) @ l - self.params.d_min
                w = o.normals.T @ l
                cone[s, i] = w @ w - 1.0
        return g, cone

    def violation(self, X, lam):
        c = self.state_residuals(X)
        v_state = np.maximum(0.0, -c.min(axis=1)) if c.size else np.zeros(0)
        if self.S:
            g, cone = self.collision_values(X, lam)
            v_coll = np.maximum(0.0, -g).ravel()
            v_cone = np.maximum(0.0, cone).ravel()
        else:
            v_coll = v_cone = np.zeros(0)
        return v_state, v_coll, v_cone

    def reset_duals(self, X):
        """Signed-distance certificates for the current positions."""
        lam = np.zeros(self.nlam)
        k = 0
        for seq in self.obs:
            for i, o in enumerate(seq):
                _, l = dual_certificate(X[i + 1, :2], o.normals, o.offsets)
                lam[k:k + len(l)] = l
                k += len(l)
        return lam


def _merit_u(prob, u, rho):
    X, _ = _rollout(prob.x0, u, prob.n, prob.params.geom, prob.params.T, with_jac=False)
    lam = prob.reset_duals(X)
    vs, vc, vk = prob.violation(X, lam)
    return prob.objective(u, X) + rho * (vs.sum() + vc.sum() + vk.sum()), lam


def _qp_step(prob: _Problem, u, lam, X, S):
    """Assemble and solve the elastic QP subproblem at ``u``.

    ``lam`` holds the maximizing multipliers of the dual distance programs,
    so each collision constraint is linearized as
    ``(Hp - h)^T lam + lam^T H dp >= d_min`` with ``lam`` fixed.
    """
    p = prob.params
    st = p.sqp
    n, nu = prob.n, 2 * prob.n
    ns_coll = prob.S * n
    nz = nu + n + ns_coll
    iu = slice(0, nu)
    iss = slice(nu, nu + n)
    isc = slice(nu + n, nz)

    # Gauss-Newton model of the tracking objective
    e = np.array([X[n, 1] - prob.ref.p_y_ref, X[n, 3] - prob.ref.v_x_ref])
    JE = S[n][[1, 3], :]
    grad_u = np.concatenate([2 * p.q1 * u[:n], 2 * p.q2 * u[n:]]) + 2 * JE.T @ (prob.q3 * e)
    G = np.zeros((nz, nz))
    G[iu, iu] = np.diag(np.concatenate([np.full(n, 2 * p.q1), np.full(n, 2 * p.q2)])) \
        + 2 * JE.T @ (prob.q3[:, None] * JE)
    G[nu:, nu:] = 1e-6 * np.eye(n + ns_coll)
    lin = np.zeros(nz)
    lin[iu] = -grad_u
    lin[nu:] = -st.slack_penalty

    cols, rhs = [], []

    # steering bounds (hard, linear)
    dlo, dhi = p.u_lower[2], p.u_upper[2]
    Cd = np.zeros((nz, n))
    Cd[np.arange(n), np.arange(n)] = 1.0
    cols += [Cd, -Cd]
    rhs += [dlo - u[:n], u[:n] - dhi]

    # state bounds and drivable area, one shared slack per step
    c = prob.state_residuals(X)
    for k, J in enumerate(prob.state_jacobians(S)):
        C = np.zeros((nz, n))
        C[iu, :] = J.T
        C[nu + np.arange(n), np.arange(n)] = 1.0
        cols.append(C)
        rhs.append(-c[:, k])
    Cs = np.zeros((nz, n + ns_coll))
    Cs[nu + np.arange(n + ns_coll), np.arange(n + ns_coll)] = 1.0
    cols.append(Cs)
    rhs.append(np.zeros(n + ns_coll))

    if ns_coll:
        L = prob.unpack_lam(lam)
        Cg = np.zeros((nz, ns_coll))
        bg = np.zeros(ns_coll)
        for s, seq in enumerate(prob.obs):
            for i, o in enumerate(seq):
                j = s * n + i
                l = L[s][i]
                r = o.normals @ X[i + 1, :2] - o.offsets
                Cg[iu, j] = S[i + 1][:2, :].T @ (o.normals.T @ l)
                Cg[isc.start + j, j] = 1.0
                bg[j] = -(r @ l - p.d_min)
        cols.append(Cg)
        rhs.append(bg)

    sol = quadprog.solve_qp(G, lin, np.hstack(cols), np.concatenate(rhs), 0)
    z = sol[0]
    # multipliers of the linearized nonlinear constraints (state, collision)
    n_lin = 2 * n
    n_state = c.shape[1] * n
    mult = np.concatenate([sol[4][n_lin:n_lin + n_state], sol[4][n_lin + n_state + n + ns_coll:]])
    return z[iu], z[iss], z[isc], grad_u, G[iu, iu], float(np.max(mult, initial=0.0))


def _to_solution(prob, u, lam, X, status, objective, t0, it, history, max_slack):
    n = prob.n
    controls = [EvControl(float(u[i]), float(u[n + i])) for i in range(n)]
    states = [EvState.from_array(X[i + 1]) for i in range(n)]
    duals = np.array(lam).reshape(prob.S, n, -1) if prob.S and len(set(
        m for ms in prob.m for m in ms)) == 1 else np.array(lam)
    return MpcSolution(controls, states, duals, status, objective, time.perf_counter() - t0,
                       it, history, max_slack)


def solve_mpc(x0: EvState, ref: Reference, obstacles, params: PlannerParams,
              warm: MpcSolution | None = None) -> MpcSolution:
    """Track ``ref`` over ``params.n_p`` steps avoiding the inflated obstacles.

    ``obstacles`` holds one ObstacleStep sequence per surrounding vehicle.
    ``warm`` supplies the initial control guess as-is; shifting a previous
    closed-loop solution is the caller's job (see :func:`shift_solution`).
    """
    t0 = time.perf_counter()
    st = params.sqp
    prob = _Problem(x0.as_array(), ref, obstacles, params)
    n = prob.n
    dlo, dhi = params.u_lower[2], params.u_upper[2]
    if warm is not None and len(warm.controls) == n:
        u = warm.control_array().astype(float)
    else:
        u = np.zeros(2 * n)
    u[:n] = np.clip(u[:n], dlo, dhi)
    rho = 1.0

    X, S = _rollout(prob.x0, u, n, params.geom, params.T)
    merit, lam = _merit_u(prob, u, rho)
    history = []
    status = MAX_ITER
    it = 0
    for it in range(1, st.max_iterations + 1):
        du, s_state, s_coll, grad_u, Bu, mu = _qp_step(prob, u, lam, X, S)
        # Han-Powell penalty update: rho must exceed the multipliers
        rho_new = min(st.merit_penalty, max(rho, 2.0 * mu))
        if rho_new != rho:
            rho = rho_new
            merit, lam = _merit_u(prob, u, rho)
        vs, vc, vk = prob.violation(X, lam)
        viol = vs.sum() + vc.sum() + vk.sum()
        resid = max(np.max(np.abs(du)), np.max(np.abs(Bu @ du)), viol)
        if resid < st.kkt_tolerance:
            status = OPTIMAL
            break
        D = grad_u @ du + rho * (s_state.sum() + s_coll.sum() - viol)
        alpha = 1.0
        accepted = False
        while alpha >= st.min_step:
            u_try = u + alpha * du
            u_try[:n] = np.clip(u_try[:n], dlo, dhi)
            # the merit measures clearance by the signed-distance certificate,
            # so lam = 0 cannot mask a penetration
            m_try, lam_try = _merit_u(prob, u_try, rho)
            if m_try <= merit + st.armijo * alpha * min(D, 0.0):
                accepted = True
                break
            alpha *= st.backtracking
        if not accepted:
            # no descent along the QP direction: the incumbent is stationary
            # for the merit function up to line-search resolution
            if np.max(np.abs(du)) < math.sqrt(st.kkt_tolerance):
                status = OPTIMAL
            break
        history.append((merit, m_try))
        u, lam, merit = u_try, lam_try, m_try
        X, S = _rollout(prob.x0, u, n, params.geom, params.T)

    X, _ = _rollout(prob.x0, u, n, params.geom, params.T, with_jac=False)
    vs, vc, vk = prob.violation(X, lam)
    max_slack = float(max(vs.max(initial=0.0), vc.max(initial=0.0), vk.max(initial=0.0)))
    if max_slack > SLACK_LIMIT:
        status = INFEASIBLE_RELAXED
    elif status == OPTIMAL and max_slack > FEAS_TOL:
        status = MAX_ITER
    return _to_solution(prob, u, lam, X, status, prob.objective(u, X), t0, it, history, max_slack)


def shift_solution(sol: MpcSolution) -> MpcSolution:
    """Warm start for the next sampling instant: drop the first control and
    repeat the last one."""
    controls = sol.controls[1:] + sol.controls[-1:]
    return MpcSolution(controls, sol.states, sol.duals, sol.status, sol.objective)


# ---------------------------------------------------------- verification

@dataclass(frozen=True)
class VerificationReport:
    violations: dict

    @property
    def worst(self) -> float:
        return max(self.violations.values())

    def ok(self, tol: float = 1e-6) -> bool:
        return self.worst <= tol


def verify_solution(sol: MpcSolution, x0: EvState, obstacles, params: PlannerParams,
                    ref: Reference | None = None) -> VerificationReport:
    """Independent check of a plan: re-simulate the controls and evaluate
    every constraint family, measuring collision clearance by dual distance."""
    n = len(sol.controls)
    if n == 0:
        raise ValueError("solution has an empty control sequence")
    geom = params.geom
    x = x0.as_array()
    dyn = 0.0
    bounds = 0.0
    area = 0.0
    coll = 0.0
    ylo, yhi = params.lateral_limits
    for i, c in enumerate(sol.controls):
        x = rk4_step(x, c.as_array(), geom.l_f, geom.l_r, params.T)
        if i < len(sol.states):
            dyn = max(dyn, float(np.max(np.abs(x - sol.states[i].as_array()))))
        else:
            dyn = math.inf
        v, a, y = x[3], x[4], x[1]
        bounds = max(bounds, params.u_lower[0] - v, v - params.u_upper[0],
                     params.u_lower[1] - a, a - params.u_upper[1],
                     params.u_lower[2] - c.delta, c.delta - params.u_upper[2])
        area = max(area, ylo - y, y - yhi)
        if ref is not None and ref.maneuver is Maneuver.VT1:
            area = max(area, x[0] - params.x_cap)
        for seq in obstacles:
            coll = max(coll, params.d_min - dual_distance(x[:2], seq[i]))
    return VerificationReport({
        "dynamics": dyn,
        "bounds": max(bounds, 0.0),
        "drivable_area": max(area, 0.0),
        "collision": max(coll, 0.0),
    })


# ------------------------------------------------------- closed-loop use

class MpcPlanner:
    """Receding-horizon wrapper holding the warm start of one episode."""

    def __init__(self, params: PlannerParams):
        self.params = params
        self._warm = None

    def plan(self, x0: EvState, ref: Reference, obstacles) -> MpcSolution:
        warm = None
        if self._warm is not None and self.params.sqp.warm_start:
            warm = shift_solution(self._warm)
        sol = solve_mpc(x0, ref, obstacles, self.params, warm)
        self._warm = None if sol.status == INFEASIBLE_RELAXED else sol
        return sol

    def first_control(self, x0: EvState, sol: MpcSolution) -> EvControl:
        if sol.status != INFEASIBLE_RELAXED:
            return sol.controls[0]
        return brake_control(x0, self.params)


def brake_control(x0: EvState, params: PlannerParams) -> EvControl:
    """Fallback command: straight wheels, jerk toward the braking limit
    without reversing within the step."""
    T = params.T
    a_target = params.u_lower[1]
    # v + T (a + a_target) / 2 >= 0 keeps the speed nonnegative
    a_stop = -2 * x0.v / T - x0.a
    a_target = max(a_target, min(a_stop, 0.0))
    return EvControl(0.0, (a_target - x0.a) / T)
