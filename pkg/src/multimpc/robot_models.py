"""Discrete model set {base, arm, whole-body}: kinematics, integration, FK, CoM.

States are flat numpy vectors:
  base       [x, y, yaw]                 controls [v, omega]
  arm        [theta_1 .. theta_Na]       controls [u_1 .. u_Na]
  whole-body [x, y, yaw, theta_1..Na]    controls [v, omega, u_1..u_Na]
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .geometry import (
    Pose,
    compose,
    quat_from_axis_angle,
    quat_from_yaw,
    wrap_angle,
)


class ModelIndex(IntEnum):
    BASE = 0
    ARM = 1
    WHOLE_BODY = 2


class DimensionError(ValueError):
    """State or control vector length does not match the selected model."""


@dataclass(frozen=True)
class KinematicChain:
    """Serial arm on a skid-steer base, plus the data needed for CoM and limits.

    Joint i applies a rotation about ``joint_axes[i]`` followed by the fixed
    transform ``link_offsets[i]``. Link i's CoM offset is expressed in the
    frame right after joint i's rotation.
    """

    mount: Pose
    joint_axes: np.ndarray            # (Na, 3) unit axes in the local frame
    link_offsets: tuple[Pose, ...]    # (Na,) fixed transforms after each joint
    ee_offset: Pose
    joint_pos_limits: np.ndarray      # (Na, 2) [min, max] rad
    joint_vel_limits: np.ndarray      # (Na,) symmetric bound rad/s
    link_masses: np.ndarray           # (Na,) kg
    link_com_offsets: np.ndarray      # (Na, 3) m, in the post-joint frame
    base_mass: float
    base_com_offset: np.ndarray       # (3,) m, in the base frame
    base_half_extents: np.ndarray     # (2,) footprint half extents (x, y), m
    base_vel_limits: np.ndarray       # (2,) [v_max, omega_max]
    collision_samples_per_link: int = 3

    def __post_init__(self):
        for name in ("joint_axes", "joint_pos_limits", "joint_vel_limits",
                     "link_masses", "link_com_offsets", "base_com_offset",
                     "base_half_extents", "base_vel_limits"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        na = self.num_joints
        if na < 1:
            raise ValueError("chain needs at least one joint")
        if len(self.link_offsets) != na or self.link_masses.shape != (na,):
            raise ValueError("per-joint arrays must all have length Na")
        if np.any(self.link_masses <= 0.0) or self.base_mass <= 0.0:
            raise ValueError("masses must be positive")
        if np.any(self.joint_pos_limits[:, 0] >= self.joint_pos_limits[:, 1]):
            raise ValueError("joint position limits need min < max")

    @property
    def num_joints(self) -> int:
        return self.joint_axes.shape[0]


def default_chain(num_joints: int = 6) -> KinematicChain:
    """Placeholder 6-joint arm: alternating z/y axes, 0.15 m links, 1 kg each."""
    axes = np.array([[0.0, 0.0, 1.0] if i % 2 == 0 else [0.0, 1.0, 0.0]
                     for i in range(num_joints)])
    offsets = tuple(Pose(np.array([0.0, 0.0, 0.15])) for _ in range(num_joints))
    return KinematicChain(
        mount=Pose(np.array([0.15, 0.0, 0.3])),
        joint_axes=axes,
        link_offsets=offsets,
        ee_offset=Pose(np.array([0.0, 0.0, 0.1])),
        joint_pos_limits=np.tile([-2.8, 2.8], (num_joints, 1)),
        joint_vel_limits=np.full(num_joints, 1.5),
        link_masses=np.ones(num_joints),
        link_com_offsets=np.tile([0.0, 0.0, 0.075], (num_joints, 1)),
        base_mass=20.0,
        base_com_offset=np.array([0.0, 0.0, 0.15]),
        base_half_extents=np.array([0.25, 0.2]),
        base_vel_limits=np.array([1.0, 1.5]),
    )


def state_dim(m: ModelIndex, chain: KinematicChain) -> int:
    return {ModelIndex.BASE: 3, ModelIndex.ARM: chain.num_joints,
            ModelIndex.WHOLE_BODY: 3 + chain.num_joints}[ModelIndex(m)]


def control_dim(m: ModelIndex, chain: KinematicChain) -> int:
    return {ModelIndex.BASE: 2, ModelIndex.ARM: chain.num_joints,
            ModelIndex.WHOLE_BODY: 2 + chain.num_joints}[ModelIndex(m)]


def model_dof(m: ModelIndex, chain: KinematicChain) -> int:
    """Degrees of freedom used by the step-reward model penalty."""
    return {ModelIndex.BASE: 3, ModelIndex.ARM: chain.num_joints,
            ModelIndex.WHOLE_BODY: 3 + chain.num_joints}[ModelIndex(m)]


# ---------------------------------------------------------------------------
# Derivatives
# ---------------------------------------------------------------------------

def base_derivative(s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """No-slip skid-steer (unicycle) kinematics."""
    v, omega = u
    yaw = s[2]
    return np.array([v * np.cos(yaw), v * np.sin(yaw), omega])


def arm_derivative(s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Velocity-controlled joints: theta_dot = u."""
    if len(s) != len(u):
        raise DimensionError(f"arm state has {len(s)} joints, control has {len(u)}")
    return np.asarray(u, dtype=float).copy()


def wb_derivative(s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Decoupled concatenation of the base and arm derivatives."""
    return np.concatenate([base_derivative(s[:3], u[:2]), arm_derivative(s[3:], u[2:])])


def model_derivative(m: ModelIndex, s: np.ndarray, u: np.ndarray) -> np.ndarray:
    m = ModelIndex(m)
    if m == ModelIndex.BASE:
        return base_derivative(s, u)
    if m == ModelIndex.ARM:
        return arm_derivative(s, u)
    return wb_derivative(s, u)


def integrate(m: ModelIndex, s: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    """One fixed-step RK4 step of the selected model; yaw re-wrapped."""
    s = np.asarray(s, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = model_derivative(m, s, u)
    k2 = model_derivative(m, s + 0.5 * dt * k1, u)
    k3 = model_derivative(m, s + 0.5 * dt * k2, u)
    k4 = model_derivative(m, s + dt * k3, u)
    out = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if ModelIndex(m) != ModelIndex.ARM:
        out[2] = wrap_angle(out[2])
    return out


# ---------------------------------------------------------------------------
# Forward kinematics
# ---------------------------------------------------------------------------

def base_pose(base_state: np.ndarray) -> Pose:
    return Pose(np.array([base_state[0], base_state[1], 0.0]),
                quat_from_yaw(base_state[2]))


@dataclass
class ChainFrames:
    """World-frame FK intermediates for Jacobians, CoM, and collision sampling."""

    base: Pose
    joint_origins: np.ndarray    # (Na, 3) joint positions before rotation
    joint_axes_world: np.ndarray  # (Na, 3)
    link_poses: tuple[Pose, ...]  # (Na,) frames right after each joint rotation
    link_ends: np.ndarray        # (Na, 3) positions after each link offset
    ee: Pose


def chain_frames(chain: KinematicChain, wb_state: np.ndarray) -> ChainFrames:
    bp = base_pose(wb_state[:3])
    theta = wb_state[3:]
    t = compose(bp, chain.mount)
    origins = np.empty((chain.num_joints, 3))
    axes_w = np.empty((chain.num_joints, 3))
    link_poses = []
    ends = np.empty((chain.num_joints, 3))
    for i in range(chain.num_joints):
        origins[i] = t.p
        axes_w[i] = t.rotate(chain.joint_axes[i])
        rot = Pose(np.zeros(3), quat_from_axis_angle(chain.joint_axes[i], theta[i]))
        t = compose(t, rot)
        link_poses.append(t)
        t = compose(t, chain.link_offsets[i])
        ends[i] = t.p
    ee = compose(t, chain.ee_offset)
    return ChainFrames(bp, origins, axes_w, tuple(link_poses), ends, ee)


def forward_kinematics(chain: KinematicChain, wb_state: np.ndarray) -> Pose:
    """World-frame end-effector pose of the whole-body state."""
    return chain_frames(chain, wb_state).ee


def ee_jacobian(chain: KinematicChain, wb_state: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Geometric Jacobian of the EE w.r.t. the whole-body state.

    Returns (Jp, Jw): position and angular-velocity Jacobians, both
    3 x (3 + Na), columns ordered [x, y, yaw, theta_1..Na].
    """
    fr = chain_frames(chain, wb_state)
    na = chain.num_joints
    jp = np.zeros((3, 3 + na))
    jw = np.zeros((3, 3 + na))
    p_ee = fr.ee.p
    z = np.array([0.0, 0.0, 1.0])
    jp[:, 0] = [1.0, 0.0, 0.0]
    jp[:, 1] = [0.0, 1.0, 0.0]
    jp[:, 2] = np.cross(z, p_ee - fr.base.p)
    jw[:, 2] = z
    for i in range(na):
        jp[:, 3 + i] = np.cross(fr.joint_axes_world[i], p_ee - fr.joint_origins[i])
        jw[:, 3 + i] = fr.joint_axes_world[i]
    return jp, jw


def com_position(chain: KinematicChain, wb_state: np.ndarray) -> np.ndarray:
    """Mass-weighted world-frame CoM of base plus links."""
    fr = chain_frames(chain, wb_state)
    total = chain.base_mass
    acc = chain.base_mass * fr.base.transform_point(chain.base_com_offset)
    for i in range(chain.num_joints):
        acc = acc + chain.link_masses[i] * fr.link_poses[i].transform_point(
            chain.link_com_offsets[i])
        total += chain.link_masses[i]
    return acc / total


def link_segments(chain: KinematicChain, wb_state: np.ndarray) -> np.ndarray:
    """Endpoints of each actuated link, (Na, 2, 3): joint origin to link end."""
    fr = chain_frames(chain, wb_state)
    segs = np.empty((chain.num_joints, 2, 3))
    segs[:, 0, :] = fr.joint_origins
    segs[:, 1, :] = fr.link_ends
    return segs


# ---------------------------------------------------------------------------
# Control mapping
# ---------------------------------------------------------------------------

def map_whole_body_control(m: ModelIndex, u_m: np.ndarray,
                           chain: KinematicChain) -> np.ndarray:
    """Embed a model-specific control into the whole-body control vector."""
    m = ModelIndex(m)
    u_m = np.asarray(u_m, dtype=float)
    if len(u_m) != control_dim(m, chain):
        raise DimensionError(
            f"model {m.name} expects {control_dim(m, chain)} controls, got {len(u_m)}")
    u_wb = np.zeros(2 + chain.num_joints)
    if m == ModelIndex.BASE:
        u_wb[:2] = u_m
    elif m == ModelIndex.ARM:
        u_wb[2:] = u_m
    else:
        u_wb[:] = u_m
    return u_wb


def extract_model_state(m: ModelIndex, wb_state: np.ndarray) -> np.ndarray:
    """Slice the model-specific state out of the whole-body state."""
    m = ModelIndex(m)
    if m == ModelIndex.BASE:
        return wb_state[:3].copy()
    if m == ModelIndex.ARM:
        return wb_state[3:].copy()
    return wb_state.copy()
