"""Desk-scale kinematic simulation of the conveyor reach task.

Episode lifecycle, sensor-frame observation construction, terminal checks
(success / boundary / collision / rollover / max-step), and the composite
step reward (model penalty, goal progress, target reward).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .geometry import (
    Box,
    Pose,
    closest_point_box,
    d_ori,
    d_pos,
    invert,
    quat_from_yaw,
    segment_segment_distance,
    wrap_angle,
)
from .robot_models import (
    KinematicChain,
    ModelIndex,
    base_pose,
    com_position,
    forward_kinematics,
    integrate,
    link_segments,
    model_dof,
)


class Outcome(str, Enum):
    RUNNING = "running"
    SUCCESS = "success"
    BOUNDARY = "boundary"
    COLLISION = "collision"
    ROLLOVER = "rollover"
    MAX_STEP = "max_step"


class EpisodeDoneError(RuntimeError):
    """step() was called after the episode terminated."""


class WorldConfigError(ValueError):
    """Invalid world configuration or explicit reset placement."""


@dataclass(frozen=True)
class WorldConfig:
    x_limits: tuple[float, float] = (-4.0, 4.0)
    y_limits: tuple[float, float] = (-4.0, 4.0)
    z_limits: tuple[float, float] = (-0.5, 2.5)
    boxes: tuple[Box, ...] = ()
    goal_x_range: tuple[float, float] = (1.5, 2.5)
    goal_y: float = 0.0
    goal_z: float = 0.55
    goal_yaw: float = 0.0               # fixed goal orientation (yaw about z)
    success_threshold: float = 0.3      # combined position [m] + orientation [rad]
    collision_distance: float = 0.02
    ground_height: float = 0.02
    self_pairs: tuple[tuple[int, int], ...] = ((0, 3), (0, 4), (0, 5), (1, 4), (1, 5))
    self_collision_threshold: float = 0.01
    support_half_extents: tuple[float, float] = (0.25, 0.2)
    tilt_limits: tuple[float, float] = (0.35, 0.35)  # (roll, pitch) rad
    com_threshold: float = 0.1          # stable-CoM deviation bound [m]
    spawn_x_range: tuple[float, float] = (-2.0, -0.5)
    spawn_y_range: tuple[float, float] = (-1.5, 1.5)
    spawn_yaw_range: tuple[float, float] = (-np.pi, np.pi)
    arm_home: tuple[float, ...] = (0.0, 0.4, 0.0, 0.6, 0.0, 0.0)
    sub_target_threshold: float = 0.1   # "sub-target reached" distance [m]

    def __post_init__(self):
        for name in ("x_limits", "y_limits", "z_limits", "goal_x_range"):
            lo, hi = getattr(self, name)
            if lo >= hi:
                raise WorldConfigError(f"{name}: min must be < max")
        if self.success_threshold <= 0.0 or self.collision_distance <= 0.0:
            raise WorldConfigError("success and collision thresholds must be > 0")

    @property
    def num_boxes(self) -> int:
        return len(self.boxes)

    @property
    def goal_quat(self) -> np.ndarray:
        return quat_from_yaw(self.goal_yaw)


@dataclass(frozen=True)
class RewardParams:
    tau_success: float = 20.0
    tau_boundary: float = -10.0
    tau_collision: float = -10.0
    tau_roll: float = -10.0
    tau_max_step: float = -5.0
    tau_target: float = 1.0
    gamma_shape: float = -1.0        # negative exponential shape scalar
    alpha_sub: float = 0.4           # sub-goal interpolation fraction, (0, 1]
    w_model: float = 1.0
    w_goal: float = 1.0
    w_target: float = 1.0
    max_rl_steps: int = 50
    target_progress_mode: str = "formula"   # or "remaining_distance"

    def __post_init__(self):
        if self.tau_success <= 0.0 or self.tau_target <= 0.0:
            raise ValueError("tau_success and tau_target must be positive")
        if max(self.tau_boundary, self.tau_collision, self.tau_roll,
               self.tau_max_step) >= 0.0:
            raise ValueError("failure terminal rewards must be negative")
        if not 0.0 < self.alpha_sub <= 1.0:
            raise ValueError("alpha_sub must be in (0, 1]")
        if self.target_progress_mode not in ("formula", "remaining_distance"):
            raise ValueError("target_progress_mode must be formula or remaining_distance")


@dataclass
class RewardBreakdown:
    r_model: float
    r_goal: float
    r_target: float
    r_terminal: float
    total: float
    outcome: Outcome


@dataclass
class SimState:
    """Mutable per-episode state, snapshottable for reward computation."""

    wb: np.ndarray                 # [x, y, yaw, theta...]
    base_u: np.ndarray             # commanded (v, omega)
    arm_u: np.ndarray              # commanded joint rates
    goal: Pose
    com_ref: np.ndarray            # stable-CoM reference, fixed at reset
    d0: float                      # EE-goal distance at reset
    n: int = 0                     # RL step count
    t: float = 0.0
    tilt: tuple[float, float] = (0.0, 0.0)
    com_acc: list = field(default_factory=list)     # CoM deviations this horizon
    sub_target_hit: bool = False   # base reached the sub-target this horizon
    outcome: Outcome = Outcome.RUNNING

    def snapshot(self) -> "SimState":
        return replace(self, wb=self.wb.copy(), base_u=self.base_u.copy(),
                       arm_u=self.arm_u.copy(), com_acc=list(self.com_acc))


# ---------------------------------------------------------------------------
# Observation
# ---------------------------------------------------------------------------

def observation_length(world: WorldConfig, chain: KinematicChain) -> int:
    return 3 + 6 * world.num_boxes + len(world.self_pairs) + 2 + 2 * chain.num_joints


def self_distances(s: SimState, world: WorldConfig, chain: KinematicChain) -> np.ndarray:
    segs = link_segments(chain, s.wb)
    out = np.empty(len(world.self_pairs))
    for k, (i, j) in enumerate(world.self_pairs):
        out[k] = segment_segment_distance(segs[i, 0], segs[i, 1], segs[j, 0], segs[j, 1])
    return out


def build_observation(s: SimState, world: WorldConfig, chain: KinematicChain) -> np.ndarray:
    """Fixed layout [goal(3), boxes(6 each), self pairs, v, omega, theta, theta_dot],
    with all positions expressed in the robot (base) frame."""
    to_robot = invert(base_pose(s.wb[:3]))
    parts = [to_robot.transform_point(s.goal.p)]
    for box in world.boxes:
        parts.append(to_robot.transform_point(box.center))
        parts.append(box.size)
    parts.append(self_distances(s, world, chain))
    parts.append(s.base_u)
    parts.append(s.wb[3:])
    parts.append(s.arm_u)
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# Stability and termination
# ---------------------------------------------------------------------------

def pseudo_tilt(s: SimState, world: WorldConfig,
                chain: KinematicChain) -> tuple[float, float]:
    """Kinematic rollover proxy: CoM overhang beyond the support rectangle.

    Returns (roll-like, pitch-like) angles: atan2 of the lateral/longitudinal
    overhang against the CoM height above ground. Zero overhang means zero tilt.
    """
    com_local = invert(base_pose(s.wb[:3])).transform_point(
        com_position(chain, s.wb))
    hx, hy = world.support_half_extents
    over_lon = max(abs(com_local[0]) - hx, 0.0)
    over_lat = max(abs(com_local[1]) - hy, 0.0)
    height = max(com_local[2], 1e-6)
    return float(np.arctan2(over_lat, height)), float(np.arctan2(over_lon, height))


def collision_points(s: SimState, world: WorldConfig,
                     chain: KinematicChain) -> np.ndarray:
    """Sampled points per actuated link plus the base footprint corners."""
    segs = link_segments(chain, s.wb)
    n = chain.collision_samples_per_link
    fracs = np.arange(1, n + 1) / n
    pts = [segs[:, 0] + f * (segs[:, 1] - segs[:, 0]) for f in fracs]
    pts.append(forward_kinematics(chain, s.wb).p[None, :])
    bp = base_pose(s.wb[:3])
    hx, hy = chain.base_half_extents
    corners = np.array([[sx * hx, sy * hy, 0.05]
                        for sx in (-1, 1) for sy in (-1, 1)])
    pts.append(np.array([bp.transform_point(c) for c in corners]))
    return np.vstack(pts)


def check_terminal(s: SimState, world: WorldConfig, rewards: RewardParams,
                   chain: KinematicChain) -> tuple[Outcome, float]:
    """Evaluate terminal conditions in priority order; (RUNNING, 0) otherwise."""
    ee = forward_kinematics(chain, s.wb)
    if d_pos(ee.p, s.goal.p) + d_ori(ee.q, s.goal.q) < world.success_threshold:
        return Outcome.SUCCESS, rewards.tau_success

    x, y = s.wb[0], s.wb[1]
    if not (world.x_limits[0] <= x <= world.x_limits[1]
            and world.y_limits[0] <= y <= world.y_limits[1]):
        return Outcome.BOUNDARY, rewards.tau_boundary

    pts = collision_points(s, world, chain)
    if np.any(pts[:-4, 2] < world.ground_height):
        return Outcome.COLLISION, rewards.tau_collision
    for box in world.boxes:
        for p in pts:
            if closest_point_box(p, box)[1] < world.collision_distance:
                return Outcome.COLLISION, rewards.tau_collision
    if np.any(self_distances(s, world, chain) < world.self_collision_threshold):
        return Outcome.COLLISION, rewards.tau_collision

    psi, tilt = s.tilt
    if psi > world.tilt_limits[0] or tilt > world.tilt_limits[1]:
        return Outcome.ROLLOVER, rewards.tau_roll

    if s.n > rewards.max_rl_steps:
        return Outcome.MAX_STEP, rewards.tau_max_step

    return Outcome.RUNNING, 0.0


def sub_goal(p_b: np.ndarray, p_g: np.ndarray, alpha_sub: float,
             current_yaw: float = 0.0) -> tuple[np.ndarray, float]:
    """Interpolated 2D sub-goal between robot and goal, facing the goal."""
    p_b = np.asarray(p_b, dtype=float)[:2]
    p_g = np.asarray(p_g, dtype=float)[:2]
    p_sub = p_b + alpha_sub * (p_g - p_b)
    if np.allclose(p_b, p_g):
        return p_sub, current_yaw
    return p_sub, float(np.arctan2(p_g[1] - p_b[1], p_g[0] - p_b[0]))


# ---------------------------------------------------------------------------
# Step reward
# ---------------------------------------------------------------------------

def _target_reward_base(prev: SimState, curr: SimState,
                        r: RewardParams) -> float:
    p_sub, phi_sub = sub_goal(prev.wb[:2], prev.goal.p, r.alpha_sub, prev.wb[2])
    d_prev = d_pos(np.append(prev.wb[:2], 0.0), np.append(p_sub, 0.0))
    d_curr = d_pos(np.append(curr.wb[:2], 0.0), np.append(p_sub, 0.0))
    if r.target_progress_mode == "formula":
        dp = (d_prev - d_curr) / d_prev if d_prev > 1e-12 else 0.0
    else:
        dp = d_curr / d_prev if d_prev > 1e-12 else 0.0
    dp = float(np.clip(dp, 0.0, 1.0))
    d_yaw = abs(wrap_angle(phi_sub - curr.wb[2]))
    dphi = min(d_yaw, np.pi - d_yaw) / np.pi
    if curr.sub_target_hit:
        return -r.tau_target * np.exp(-r.gamma_shape * dp) / np.exp(r.gamma_shape)
    return r.tau_target * np.exp(0.5 * r.gamma_shape * (dp + dphi))


def step_reward(prev: SimState, curr: SimState, m: ModelIndex,
                rewards: RewardParams, chain: KinematicChain,
                terminal_reward: float = 0.0,
                outcome: Outcome = Outcome.RUNNING,
                com_threshold: float = 0.1) -> RewardBreakdown:
    """Composite reward for one RL step (one action horizon)."""
    m = ModelIndex(m)
    r_model = -model_dof(m, chain) / model_dof(ModelIndex.WHOLE_BODY, chain)

    ee_prev = forward_kinematics(chain, prev.wb).p
    ee_curr = forward_kinematics(chain, curr.wb).p
    d_prev = d_pos(ee_prev, prev.goal.p)
    d_curr = d_pos(ee_curr, curr.goal.p)
    r_goal = (d_prev - d_curr) / curr.d0 if curr.d0 > 1e-12 else 0.0

    if m == ModelIndex.ARM:
        omega_com = float(np.mean(curr.com_acc)) if curr.com_acc else 0.0
        r_target = float(np.sign(com_threshold - omega_com)) * rewards.tau_target
    else:
        r_target = _target_reward_base(prev, curr, rewards)

    total = (rewards.w_model * r_model + rewards.w_goal * r_goal
             + rewards.w_target * r_target + terminal_reward)
    return RewardBreakdown(r_model, r_goal, r_target, terminal_reward, total, outcome)


# ---------------------------------------------------------------------------
# Environment
# ---------------------------------------------------------------------------

class Environment:
    """One episode worker. Instances share only the immutable configs."""

    def __init__(self, world: WorldConfig, rewards: RewardParams,
                 chain: KinematicChain):
        if len(world.arm_home) != chain.num_joints:
            raise WorldConfigError("arm_home length must match the chain")
        for i, j in world.self_pairs:
            if not (0 <= i < chain.num_joints and 0 <= j < chain.num_joints):
                raise WorldConfigError("self_pairs indices out of range")
        self.world = world
        self.rewards = rewards
        self.chain = chain
        self.state: SimState | None = None
        self._done = True

    @property
    def done(self) -> bool:
        return self._done

    def reset(self, seed: int | None = None,
              base_pose_init: tuple[float, float, float] | None = None,
              goal_position: np.ndarray | None = None) -> np.ndarray:
        """Start an episode from a seeded sample or an explicit placement."""
        w = self.world
        rng = np.random.default_rng(seed)
        if base_pose_init is None:
            base_pose_init = (rng.uniform(*w.spawn_x_range),
                              rng.uniform(*w.spawn_y_range),
                              rng.uniform(*w.spawn_yaw_range))
        else:
            x, y, _ = base_pose_init
            if not (w.x_limits[0] <= x <= w.x_limits[1]
                    and w.y_limits[0] <= y <= w.y_limits[1]):
                raise WorldConfigError("explicit base pose outside the boundaries")
        if goal_position is None:
            goal_position = np.array([rng.uniform(*w.goal_x_range), w.goal_y, w.goal_z])
        goal = Pose(np.asarray(goal_position, dtype=float), w.goal_quat)

        wb = np.concatenate([[base_pose_init[0], base_pose_init[1],
                              wrap_angle(base_pose_init[2])], w.arm_home])
        na = self.chain.num_joints
        ee = forward_kinematics(self.chain, wb)
        self.state = SimState(
            wb=wb, base_u=np.zeros(2), arm_u=np.zeros(na), goal=goal,
            com_ref=com_position(self.chain, wb), d0=d_pos(ee.p, goal.p))
        self.state.tilt = pseudo_tilt(self.state, w, self.chain)
        self._done = False
        return build_observation(self.state, w, self.chain)

    def begin_action(self):
        """Start a new action horizon: clear the CoM and sub-target trackers."""
        s = self.state
        s.com_acc = []
        s.sub_target_hit = False
        self._p_sub, _ = sub_goal(s.wb[:2], s.goal.p, self.rewards.alpha_sub, s.wb[2])

    def end_action(self) -> tuple[Outcome, float]:
        """Close the RL step: bump the step counter and re-check max-step."""
        self.state.n += 1
        outcome, r_term = check_terminal(self.state, self.world, self.rewards,
                                         self.chain)
        if outcome != Outcome.RUNNING:
            self._done = True
            self.state.outcome = outcome
        return outcome, r_term

    def step(self, u_wb: np.ndarray, dt_ctrl: float) -> tuple[np.ndarray, bool, Outcome]:
        """Clamp, integrate one control interval, update terminal status."""
        if self._done:
            raise EpisodeDoneError("episode already terminated; call reset()")
        s = self.state
        c = self.chain
        u = np.asarray(u_wb, dtype=float).copy()
        v_max, w_max = c.base_vel_limits
        u[0] = np.clip(u[0], -v_max, v_max)
        u[1] = np.clip(u[1], -w_max, w_max)
        u[2:] = np.clip(u[2:], -c.joint_vel_limits, c.joint_vel_limits)

        s.wb = integrate(ModelIndex.WHOLE_BODY, s.wb, u, dt_ctrl)
        s.base_u = u[:2]
        s.arm_u = u[2:]
        s.t += dt_ctrl
        s.com_acc.append(d_pos(com_position(c, s.wb), s.com_ref))
        s.tilt = pseudo_tilt(s, self.world, c)
        if hasattr(self, "_p_sub") and d_pos(
                np.append(s.wb[:2], 0.0),
                np.append(self._p_sub, 0.0)) < self.world.sub_target_threshold:
            s.sub_target_hit = True

        outcome, _ = check_terminal(s, self.world, self.rewards, c)
        if outcome != Outcome.RUNNING:
            self._done = True
            s.outcome = outcome
        return build_observation(s, self.world, c), self._done, outcome
