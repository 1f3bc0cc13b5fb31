"""Constrained NMPC solver: relaxed-barrier costs, SLQ iteration, MPC wrapper.

The solver core is a discrete-time iLQR/SLQ loop (rollout, linearize,
quadratize, backward Riccati pass, backtracking line search) over a generic
problem object, so linear-quadratic instances can be fed to it directly for
verification. ``NmpcProblem`` wraps the kinematic models, pose-tracking
costs, and barrier-penalized limit constraints into that interface.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import Pose, d_ori, d_pos
from .robot_models import (
    KinematicChain,
    ModelIndex,
    base_pose,
    chain_frames,
    control_dim,
    ee_jacobian,
    model_derivative,
    state_dim,
)

log = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Relaxed barrier function
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RbfParams:
    mu: float = 1e-2
    delta: float = 1e-2

    def __post_init__(self):
        if self.mu <= 0.0 or self.delta <= 0.0:
            raise ValueError("barrier weight and relaxation threshold must be > 0")


def rbf(h: float, p: RbfParams) -> float:
    """Relaxed log barrier: -mu*ln(h) above delta, quadratic extension below."""
    if h >= p.delta:
        return -p.mu * np.log(h)
    z = (h - 2.0 * p.delta) / p.delta
    return p.mu * (0.5 * (z * z - 1.0) - np.log(p.delta))


def rbf_derivatives(h: float, p: RbfParams) -> tuple[float, float, float]:
    """(value, d/dh, d2/dh2), continuous through h = delta."""
    if h >= p.delta:
        return -p.mu * np.log(h), -p.mu / h, p.mu / (h * h)
    z = (h - 2.0 * p.delta) / p.delta
    return (p.mu * (0.5 * (z * z - 1.0) - np.log(p.delta)),
            p.mu * (h - 2.0 * p.delta) / (p.delta * p.delta),
            p.mu / (p.delta * p.delta))


# ---------------------------------------------------------------------------
# Costs and constraints
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostSpec:
    """Quadratic control cost plus weighted EE pose-error tracking."""

    r_u: np.ndarray          # positive diagonal, one entry per control dim
    w_pos: float = 10.0      # 1/m^2
    w_ori: float = 2.0       # 1/rad^2
    kappa_pos: float = 5.0   # terminal multiplier on w_pos
    kappa_ori: float = 5.0

    def __post_init__(self):
        object.__setattr__(self, "r_u", np.asarray(self.r_u, dtype=float))
        if np.any(self.r_u <= 0.0):
            raise ValueError("control weights must be positive")
        if min(self.w_pos, self.w_ori, self.kappa_pos, self.kappa_ori) < 0.0:
            raise ValueError("cost weights must be non-negative")


def default_cost(m: ModelIndex, chain: KinematicChain) -> CostSpec:
    return CostSpec(r_u=0.1 * np.ones(control_dim(m, chain)))


class ConstraintKind(str, Enum):
    ARM_POSITION_LIMITS = "arm_position_limits"
    ARM_VELOCITY_LIMITS = "arm_velocity_limits"
    BASE_VELOCITY_LIMITS = "base_velocity_limits"


@dataclass(frozen=True)
class ConstraintGroup:
    kind: ConstraintKind
    lower: np.ndarray
    upper: np.ndarray
    active: bool = True

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float))
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float))
        if np.any(self.lower >= self.upper):
            raise ValueError(f"{self.kind.value}: bounds need min < max")


def constraint_groups(chain: KinematicChain) -> dict[ConstraintKind, ConstraintGroup]:
    """The three limit groups, with bounds taken from the chain."""
    v_max, w_max = chain.base_vel_limits
    return {
        ConstraintKind.ARM_POSITION_LIMITS: ConstraintGroup(
            ConstraintKind.ARM_POSITION_LIMITS,
            chain.joint_pos_limits[:, 0], chain.joint_pos_limits[:, 1]),
        ConstraintKind.ARM_VELOCITY_LIMITS: ConstraintGroup(
            ConstraintKind.ARM_VELOCITY_LIMITS,
            -chain.joint_vel_limits, chain.joint_vel_limits),
        ConstraintKind.BASE_VELOCITY_LIMITS: ConstraintGroup(
            ConstraintKind.BASE_VELOCITY_LIMITS,
            np.array([-v_max, -w_max]), np.array([v_max, w_max])),
    }


def applicable_kinds(m: ModelIndex) -> tuple[ConstraintKind, ...]:
    m = ModelIndex(m)
    if m == ModelIndex.BASE:
        return (ConstraintKind.BASE_VELOCITY_LIMITS,)
    if m == ModelIndex.ARM:
        return (ConstraintKind.ARM_POSITION_LIMITS, ConstraintKind.ARM_VELOCITY_LIMITS)
    return (ConstraintKind.BASE_VELOCITY_LIMITS, ConstraintKind.ARM_POSITION_LIMITS,
            ConstraintKind.ARM_VELOCITY_LIMITS)


# state/control index offsets of each group in the model's layouts
def _group_slices(kind: ConstraintKind, m: ModelIndex,
                  chain: KinematicChain) -> tuple[str, int]:
    """Returns (which vector the bounded variables live in, start offset)."""
    m = ModelIndex(m)
    na = chain.num_joints
    if kind == ConstraintKind.ARM_POSITION_LIMITS:
        return ("x", 0 if m == ModelIndex.ARM else 3)
    if kind == ConstraintKind.ARM_VELOCITY_LIMITS:
        return ("u", 0 if m == ModelIndex.ARM else 2)
    return ("u", 0)


@dataclass(frozen=True)
class SlqSettings:
    horizon: float = 1.0          # seconds
    dt: float = 0.01              # rollout step
    max_iterations: int = 10
    line_search_steps: tuple[float, ...] = tuple(0.5 ** k for k in range(11))
    cost_tol: float = 1e-4        # relative cost decrease
    reg_min: float = 1e-6         # eigenvalue floor on the control Hessian

    def __post_init__(self):
        if self.horizon <= 0.0 or self.dt <= 0.0 or self.max_iterations < 1:
            raise ValueError("horizon, dt must be > 0 and max_iterations >= 1")
        n = self.horizon / self.dt
        if abs(n - round(n)) > 1e-9:
            raise ValueError("horizon must be an integral number of dt steps")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))


@dataclass
class SlqResult:
    controls: np.ndarray   # (N, n_u)
    states: np.ndarray     # (N+1, n_x)
    cost: float
    iterations: int
    solve_time: float      # wall-clock seconds


class SolverDivergedError(RuntimeError):
    """Non-finite cost during a rollout; carries the last finite iterate."""

    def __init__(self, msg: str, last_result: SlqResult | None = None):
        super().__init__(msg)
        self.last_result = last_result


@dataclass
class NmpcProblem:
    """One decoded NMPC instance for a specific model."""

    m: ModelIndex
    chain: KinematicChain
    costs: CostSpec
    constraints: tuple[ConstraintGroup, ...]
    x0: np.ndarray
    target: Pose                      # world frame; base-model targets use z=0
    settings: SlqSettings = field(default_factory=SlqSettings)
    rbf_params: RbfParams = field(default_factory=RbfParams)
    frozen_base: np.ndarray | None = None   # required for m = ARM
    frozen_arm: np.ndarray | None = None    # required for m = BASE

    def __post_init__(self):
        self.m = ModelIndex(self.m)
        self.x0 = np.asarray(self.x0, dtype=float)
        if len(self.x0) != state_dim(self.m, self.chain):
            raise ValueError(
                f"state dim {len(self.x0)} does not match model {self.m.name}")
        if self.m == ModelIndex.ARM and self.frozen_base is None:
            raise ValueError("arm-only problems need the frozen base state")
        if self.m == ModelIndex.BASE and self.frozen_arm is None:
            raise ValueError("base-only problems need the frozen arm state")


# ---------------------------------------------------------------------------
# Dynamics linearization
# ---------------------------------------------------------------------------

def linearize(m: ModelIndex, s: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Analytic continuous-time Jacobians (A, B) of the model derivative."""
    m = ModelIndex(m)
    if m == ModelIndex.ARM:
        n = len(s)
        return np.zeros((n, n)), np.eye(n)
    v, yaw = u[0], s[2]
    a_base = np.zeros((3, 3))
    a_base[0, 2] = -v * np.sin(yaw)
    a_base[1, 2] = v * np.cos(yaw)
    b_base = np.array([[np.cos(yaw), 0.0], [np.sin(yaw), 0.0], [0.0, 1.0]])
    if m == ModelIndex.BASE:
        return a_base, b_base
    na = len(s) - 3
    a = np.zeros((3 + na, 3 + na))
    a[:3, :3] = a_base
    b = np.zeros((3 + na, 2 + na))
    b[:3, :2] = b_base
    b[3:, 2:] = np.eye(na)
    return a, b


def _rk4_step(m: ModelIndex, x: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    # unwrapped yaw: the solver needs a continuous state space
    k1 = model_derivative(m, x, u)
    k2 = model_derivative(m, x + 0.5 * dt * k1, u)
    k3 = model_derivative(m, x + 0.5 * dt * k2, u)
    k4 = model_derivative(m, x + dt * k3, u)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_jacobians(m: ModelIndex, x: np.ndarray, u: np.ndarray,
                   dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact Jacobians of the RK4 map via stage chain rule."""
    n = len(x)
    k1 = model_derivative(m, x, u)
    x2 = x + 0.5 * dt * k1
    k2 = model_derivative(m, x2, u)
    x3 = x + 0.5 * dt * k2
    k3 = model_derivative(m, x3, u)
    x4 = x + dt * k3

    a1, b1 = linearize(m, x, u)
    a2, b2 = linearize(m, x2, u)
    a3, b3 = linearize(m, x3, u)
    a4, b4 = linearize(m, x4, u)

    dk1x, dk1u = a1, b1
    dk2x = a2 @ (np.eye(n) + 0.5 * dt * dk1x)
    dk2u = a2 @ (0.5 * dt * dk1u) + b2
    dk3x = a3 @ (np.eye(n) + 0.5 * dt * dk2x)
    dk3u = a3 @ (0.5 * dt * dk2u) + b3
    dk4x = a4 @ (np.eye(n) + dt * dk3x)
    dk4u = a4 @ (dt * dk3u) + b4

    ad = np.eye(n) + (dt / 6.0) * (dk1x + 2.0 * dk2x + 2.0 * dk3x + dk4x)
    bd = (dt / 6.0) * (dk1u + 2.0 * dk2u + 2.0 * dk3u + dk4u)
    return ad, bd


# ---------------------------------------------------------------------------
# Tracked pose (value + Jacobians) per model
# ---------------------------------------------------------------------------

def _wb_state_of(p: NmpcProblem, x: np.ndarray) -> np.ndarray:
    if p.m == ModelIndex.WHOLE_BODY:
        return x
    if p.m == ModelIndex.ARM:
        return np.concatenate([p.frozen_base, x])
    return np.concatenate([x, p.frozen_arm])


def tracked_pose(p: NmpcProblem, x: np.ndarray) -> Pose:
    """The pose the cost drives toward the target: EE pose, or the base pose
    (z = 0, yaw orientation) for the base-only model."""
    if p.m == ModelIndex.BASE:
        return base_pose(x)
    return chain_frames(p.chain, _wb_state_of(p, x)).ee


def _tracked_pose_jacobians(p: NmpcProblem, x: np.ndarray) -> tuple[Pose, np.ndarray, np.ndarray]:
    """(pose, Jp, Jw) with Jacobian columns matching the model state layout."""
    n = len(x)
    if p.m == ModelIndex.BASE:
        jp = np.zeros((3, 3))
        jp[0, 0] = 1.0
        jp[1, 1] = 1.0
        jw = np.zeros((3, 3))
        jw[2, 2] = 1.0
        return base_pose(x), jp, jw
    wb = _wb_state_of(p, x)
    jp_full, jw_full = ee_jacobian(p.chain, wb)
    pose = chain_frames(p.chain, wb).ee
    if p.m == ModelIndex.ARM:
        return pose, jp_full[:, 3:], jw_full[:, 3:]
    return pose, jp_full, jw_full


def _pose_error_terms(p: NmpcProblem, x: np.ndarray, w_pos: float, w_ori: float):
    """Cost, gradient, and Gauss-Newton Hessian of the weighted pose error."""
    pose, jp, jw = _tracked_pose_jacobians(p, x)
    e = pose.p - p.target.p
    cost = w_pos * float(e @ e)
    grad = 2.0 * w_pos * (jp.T @ e)
    hess = 2.0 * w_pos * (jp.T @ jp)

    q, qt = pose.q, p.target.q
    c_raw = float(np.dot(q, qt))
    c = min(1.0, abs(c_raw))
    d = 2.0 * np.arccos(c)
    cost += w_ori * d * d
    # dq/dx_j = 0.5 * [0, w_j] x q  =>  d(c_raw)/dx = 0.5 * Jw^T m
    w0, qv = q[0], q[1:]
    wt, qtv = qt[0], qt[1:]
    mvec = w0 * qtv - wt * qv + np.cross(qv, qtv)
    g_raw = 0.5 * (jw.T @ mvec)
    s = np.sqrt(max(1.0 - c * c, 1e-16))
    # dd/dx = -2/s * dc/dx; near alignment dc/dx -> 0 at the same rate
    dd_dx = (-2.0 / s) * np.sign(c_raw) * g_raw
    grad += w_ori * 2.0 * d * dd_dx
    hess += 2.0 * w_ori * np.outer(dd_dx, dd_dx)
    return cost, grad, hess


# ---------------------------------------------------------------------------
# Stage costs
# ---------------------------------------------------------------------------

def _barrier_terms(p: NmpcProblem, x: np.ndarray, u: np.ndarray):
    """Sum of barriers over active groups with value/grad/diagonal Hessians.

    Margins are signed distances to each bound (z - lo and hi - z); both
    sides of every bounded variable are penalized.
    """
    val = 0.0
    gx = np.zeros(len(x))
    gu = np.zeros(len(u))
    hx = np.zeros(len(x))
    hu = np.zeros(len(u))
    for grp in p.constraints:
        if not grp.active or grp.kind not in applicable_kinds(p.m):
            continue
        which, off = _group_slices(grp.kind, p.m, p.chain)
        z = (x if which == "x" else u)[off:off + len(grp.lower)]
        g = gx if which == "x" else gu
        h = hx if which == "x" else hu
        for i in range(len(grp.lower)):
            for margin, sgn in ((z[i] - grp.lower[i], 1.0), (grp.upper[i] - z[i], -1.0)):
                v, d1, d2 = rbf_derivatives(margin, p.rbf_params)
                val += v
                g[off + i] += sgn * d1
                h[off + i] += d2
    return val, gx, gu, np.diag(hx), np.diag(hu)


def intermediate_cost(p: NmpcProblem, x: np.ndarray, u: np.ndarray) -> float:
    """Running cost density: control effort + pose error + active barriers."""
    r = p.costs.r_u
    cost = float(u @ (r * u))
    pose = tracked_pose(p, x)
    cost += p.costs.w_pos * d_pos(pose.p, p.target.p) ** 2
    cost += p.costs.w_ori * d_ori(pose.q, p.target.q) ** 2
    cost += _barrier_terms(p, x, u)[0]
    return cost


def terminal_cost(p: NmpcProblem, x: np.ndarray) -> float:
    """Terminal pose error, scaled by the terminal multipliers."""
    pose = tracked_pose(p, x)
    return (p.costs.kappa_pos * p.costs.w_pos * d_pos(pose.p, p.target.p) ** 2
            + p.costs.kappa_ori * p.costs.w_ori * d_ori(pose.q, p.target.q) ** 2)


def intermediate_cost_derivatives(p: NmpcProblem, x: np.ndarray, u: np.ndarray):
    """(cost, lx, lu, lxx, luu) of the running cost density (Gauss-Newton)."""
    r = p.costs.r_u
    cost = float(u @ (r * u))
    lu = 2.0 * r * u
    luu = np.diag(2.0 * r)
    pc, pg, ph = _pose_error_terms(p, x, p.costs.w_pos, p.costs.w_ori)
    bval, bgx, bgu, bhx, bhu = _barrier_terms(p, x, u)
    return (cost + pc + bval, pg + bgx, lu + bgu, ph + bhx, luu + bhu)


def terminal_cost_derivatives(p: NmpcProblem, x: np.ndarray):
    c, g, h = _pose_error_terms(p, x, p.costs.kappa_pos * p.costs.w_pos,
                                p.costs.kappa_ori * p.costs.w_ori)
    return c, g, h


# ---------------------------------------------------------------------------
# Generic discrete-time SLQ core
# ---------------------------------------------------------------------------

@dataclass
class DiscreteOcp:
    """Discrete-time optimal control problem in callback form.

    step(k, x, u) -> x';  step_jacobians(k, x, u) -> (A, B);
    stage_cost(k, x, u) -> float;
    stage_cost_derivatives(k, x, u) -> (l, lx, lu, lxx, luu);
    terminal(x) -> float;  terminal_derivatives(x) -> (l, lx, lxx).
    """

    n_x: int
    n_u: int
    steps: int
    step: callable
    step_jacobians: callable
    stage_cost: callable
    stage_cost_derivatives: callable
    terminal: callable
    terminal_derivatives: callable


def _rollout(ocp: DiscreteOcp, x0, us, last: SlqResult | None = None):
    xs = np.empty((ocp.steps + 1, ocp.n_x))
    xs[0] = x0
    cost = 0.0
    for k in range(ocp.steps):
        cost += ocp.stage_cost(k, xs[k], us[k])
        xs[k + 1] = ocp.step(k, xs[k], us[k])
        if not np.all(np.isfinite(xs[k + 1])):
            raise SolverDivergedError("non-finite state during rollout", last)
    cost += ocp.terminal(xs[-1])
    if not np.isfinite(cost):
        raise SolverDivergedError("non-finite cost during rollout", last)
    return xs, cost


def _tracking_rollout(ocp: DiscreteOcp, x0, us, xs_ref, kff, kfb, alpha):
    xs = np.empty_like(xs_ref)
    us_new = np.empty_like(us)
    xs[0] = x0
    cost = 0.0
    for k in range(ocp.steps):
        us_new[k] = us[k] + alpha * kff[k] + kfb[k] @ (xs[k] - xs_ref[k])
        cost += ocp.stage_cost(k, xs[k], us_new[k])
        xs[k + 1] = ocp.step(k, xs[k], us_new[k])
        if not (np.all(np.isfinite(xs[k + 1])) and np.isfinite(cost)):
            return None, None, np.inf
    cost += ocp.terminal(xs[-1])
    if not np.isfinite(cost):
        return None, None, np.inf
    return xs, us_new, cost


def _regularize(m: np.ndarray, floor: float) -> np.ndarray:
    """Clamp eigenvalues of a symmetric matrix to at least ``floor``."""
    w, v = np.linalg.eigh(0.5 * (m + m.T))
    if w.min() >= floor:
        return m
    return (v * np.maximum(w, floor)) @ v.T


def slq_core(ocp: DiscreteOcp, x0: np.ndarray, u_init: np.ndarray,
             max_iterations: int = 10,
             line_search_steps: tuple[float, ...] = tuple(0.5 ** k for k in range(11)),
             cost_tol: float = 1e-4, reg_min: float = 1e-6) -> SlqResult:
    """SLQ/iLQR iteration on a discrete problem. Accepted costs never increase."""
    t_start = time.perf_counter()
    us = np.array(u_init, dtype=float).reshape(ocp.steps, ocp.n_u)
    xs, cost = _rollout(ocp, x0, us)
    iterations = 0

    for it in range(max_iterations):
        last = SlqResult(us.copy(), xs.copy(), cost, iterations,
                         time.perf_counter() - t_start)
        # quadratize along the nominal trajectory
        kff = np.empty((ocp.steps, ocp.n_u))
        kfb = np.empty((ocp.steps, ocp.n_u, ocp.n_x))
        _, vx, vxx = ocp.terminal_derivatives(xs[-1])
        for k in range(ocp.steps - 1, -1, -1):
            a, b = ocp.step_jacobians(k, xs[k], us[k])
            _, lx, lu, lxx, luu = ocp.stage_cost_derivatives(k, xs[k], us[k])
            qx = lx + a.T @ vx
            qu = lu + b.T @ vx
            qxx = lxx + a.T @ vxx @ a
            quu = _regularize(luu + b.T @ vxx @ b, reg_min)
            qux = b.T @ vxx @ a
            quu_inv = np.linalg.inv(quu)
            kff[k] = -quu_inv @ qu
            kfb[k] = -quu_inv @ qux
            vx = qx + kfb[k].T @ quu @ kff[k] + kfb[k].T @ qu + qux.T @ kff[k]
            vxx = qxx + kfb[k].T @ quu @ kfb[k] + kfb[k].T @ qux + qux.T @ kfb[k]
            vxx = 0.5 * (vxx + vxx.T)

        accepted = False
        for alpha in line_search_steps:
            xs_new, us_new, cost_new = _tracking_rollout(
                ocp, x0, us, xs, kff, kfb, alpha)
            if cost_new < cost:
                log.debug("slq iter=%d alpha=%g cost=%.6g -> %.6g",
                          it, alpha, cost, cost_new)
                decrease = (cost - cost_new) / max(abs(cost), 1e-12)
                xs, us, cost = xs_new, us_new, cost_new
                iterations = it + 1
                accepted = True
                break
        if not accepted:
            break
        if decrease < cost_tol:
            break

    return SlqResult(us, xs, cost, iterations, time.perf_counter() - t_start)


# ---------------------------------------------------------------------------
# NMPC wrapper
# ---------------------------------------------------------------------------

def make_ocp(p: NmpcProblem) -> DiscreteOcp:
    dt = p.settings.dt
    return DiscreteOcp(
        n_x=state_dim(p.m, p.chain),
        n_u=control_dim(p.m, p.chain),
        steps=p.settings.steps,
        step=lambda k, x, u: _rk4_step(p.m, x, u, dt),
        step_jacobians=lambda k, x, u: _rk4_jacobians(p.m, x, u, dt),
        stage_cost=lambda k, x, u: dt * intermediate_cost(p, x, u),
        stage_cost_derivatives=lambda k, x, u: tuple(
            dt * t for t in intermediate_cost_derivatives(p, x, u)),
        terminal=lambda x: terminal_cost(p, x),
        terminal_derivatives=lambda x: terminal_cost_derivatives(p, x),
    )


def slq_solve(p: NmpcProblem, u_init: np.ndarray | None = None) -> SlqResult:
    """Solve one NMPC instance; warm-startable from a prior control sequence."""
    ocp = make_ocp(p)
    if u_init is None:
        u_init = np.zeros((ocp.steps, ocp.n_u))
    return slq_core(ocp, p.x0, u_init,
                    max_iterations=p.settings.max_iterations,
                    line_search_steps=p.settings.line_search_steps,
                    cost_tol=p.settings.cost_tol,
                    reg_min=p.settings.reg_min)


class MpcController:
    """Receding-horizon wrapper around one problem; owns the warm start.

    Single-owner: instances keep the shifted previous solution between calls
    and must not be shared across workers.
    """

    def __init__(self, problem: NmpcProblem):
        self.problem = problem
        self._warm: np.ndarray | None = None

    def step(self, x0: np.ndarray) -> tuple[np.ndarray, float, SlqResult]:
        """Solve from x0; returns (first control, wall-clock seconds, result)."""
        t0 = time.perf_counter()
        self.problem = replace(self.problem, x0=np.asarray(x0, dtype=float))
        result = slq_solve(self.problem, self._warm)
        dt_p = time.perf_counter() - t0
        # shift by one interval, repeating the tail control
        self._warm = np.vstack([result.controls[1:], result.controls[-1:]])
        return result.controls[0].copy(), dt_p, result
