"""Decode continuous and discrete policy outputs into NMPC problem pieces.

A decoded action fixes the robot model, the per-model cost selection, the
active constraint groups, and a world-frame target pose. Base-model targets
are reduced to a planar (x, y, yaw) pose.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import (
    Pose,
    compose,
    quat_from_rpy,
    quat_from_yaw,
    quat_yaw,
)
from .robot_models import (
    KinematicChain,
    ModelIndex,
    base_pose,
    forward_kinematics,
)
from .slq_nmpc import ConstraintKind, CostSpec, applicable_kinds, default_cost

log = logging.getLogger(__name__)

MODEL_THRESHOLDS = (0.3, 0.6)
CONSTRAINT_THRESHOLD = 0.5
TARGET_TYPE_THRESHOLD = 0.5
NUM_CONSTRAINT_GROUPS = 3

# a_constraint component order (fixed layout)
CONSTRAINT_ORDER = (
    ConstraintKind.BASE_VELOCITY_LIMITS,
    ConstraintKind.ARM_POSITION_LIMITS,
    ConstraintKind.ARM_VELOCITY_LIMITS,
)


class TargetType(str, Enum):
    SUB_GOAL = "sub_goal"
    GOAL = "goal"


@dataclass(frozen=True)
class TargetRanges:
    """Per-axis position ranges for decoded targets.

    Sub-goal ranges are in the robot frame; goal-mode ranges are tight
    offsets around the goal pose (localization slack).
    """

    sub_min: np.ndarray = field(default_factory=lambda: np.array([-2.0, -2.0, 0.2]))
    sub_max: np.ndarray = field(default_factory=lambda: np.array([2.0, 2.0, 1.5]))
    goal_min: np.ndarray = field(default_factory=lambda: np.full(3, -0.1))
    goal_max: np.ndarray = field(default_factory=lambda: np.full(3, 0.1))

    def __post_init__(self):
        for name in ("sub_min", "sub_max", "goal_min", "goal_max"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if np.any(self.sub_min >= self.sub_max) or np.any(self.goal_min >= self.goal_max):
            raise ValueError("target ranges need min < max per axis")


@dataclass(frozen=True)
class DecodedAction:
    m: ModelIndex
    costs: CostSpec
    active_constraints: tuple[ConstraintKind, ...]
    target_type: TargetType
    target: Pose                                   # world frame
    base_target: tuple[float, float, float] | None  # (x, y, yaw) when m = BASE


@dataclass(frozen=True)
class CodecConfig:
    ranges: TargetRanges = field(default_factory=TargetRanges)
    action_seconds: float = 1.0        # horizon one decoded action is held for
    allowed_models: tuple[int, ...] = (0, 1, 2)
    arm_fraction_count: int = 8        # straight-line interpolation steps
    cost_overrides: dict = field(default_factory=dict)  # ModelIndex -> CostSpec


def model_cost(m: ModelIndex, chain: KinematicChain, cfg: CodecConfig) -> CostSpec:
    return cfg.cost_overrides.get(ModelIndex(m)) or default_cost(m, chain)


# ---------------------------------------------------------------------------
# Continuous decoding
# ---------------------------------------------------------------------------

def decode_model(a_model: float) -> ModelIndex:
    """Threshold the scalar model sub-action into one of the three models."""
    if not 0.0 <= a_model <= 1.0:
        log.warning("a_model %.3f outside [0, 1]; clamping", a_model)
        a_model = min(1.0, max(0.0, a_model))
    if a_model <= MODEL_THRESHOLDS[0]:
        return ModelIndex.BASE
    if a_model <= MODEL_THRESHOLDS[1]:
        return ModelIndex.ARM
    return ModelIndex.WHOLE_BODY


def decode_constraints(a_constraint: np.ndarray,
                       m: ModelIndex) -> tuple[ConstraintKind, ...]:
    """Groups with component > 0.5 that also apply to the chosen model."""
    a_constraint = np.asarray(a_constraint, dtype=float)
    if len(a_constraint) != NUM_CONSTRAINT_GROUPS:
        raise ValueError(
            f"a_constraint needs {NUM_CONSTRAINT_GROUPS} entries, got {len(a_constraint)}")
    usable = applicable_kinds(m)
    return tuple(kind for kind, a in zip(CONSTRAINT_ORDER, a_constraint)
                 if a > CONSTRAINT_THRESHOLD and kind in usable)


def _affine_map(a: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """[-1, 1] onto [lo, hi] per axis."""
    return lo + 0.5 * (np.asarray(a, dtype=float) + 1.0) * (hi - lo)


def decode_target(a_target: np.ndarray, robot_pose: Pose, goal: Pose,
                  ranges: TargetRanges) -> tuple[TargetType, Pose]:
    """Target sub-action (type, x, y, z, roll, pitch, yaw) to a world pose.

    Sub-goal offsets live in the robot frame; goal-mode offsets are tight
    adjustments in the goal frame with the goal's own orientation.
    """
    a_type = float(a_target[0])
    offs = np.asarray(a_target[1:4], dtype=float)
    if a_type <= TARGET_TYPE_THRESHOLD:
        local = _affine_map(offs, ranges.sub_min, ranges.sub_max)
        quat = quat_from_rpy(*a_target[4:7])
        return TargetType.SUB_GOAL, compose(robot_pose, Pose(local, quat))
    local = _affine_map(offs, ranges.goal_min, ranges.goal_max)
    return TargetType.GOAL, Pose(goal.transform_point(local), goal.q)


def reduce_target_for_base(target: Pose, chain: KinematicChain,
                           arm_theta: np.ndarray) -> tuple[float, float, float]:
    """Reduce an EE target pose to a base (x, y, yaw) that puts the frozen-arm
    EE at the target's planar position when facing the target yaw."""
    yaw_t = quat_yaw(target.q)
    home = forward_kinematics(chain, np.concatenate([[0.0, 0.0, 0.0], arm_theta]))
    offset = base_pose(np.array([0.0, 0.0, yaw_t])).rotate(home.p)
    return (float(target.p[0] - offset[0]), float(target.p[1] - offset[1]), yaw_t)


def _base_target_pose(xyyaw: tuple[float, float, float]) -> Pose:
    return Pose(np.array([xyyaw[0], xyyaw[1], 0.0]), quat_from_yaw(xyyaw[2]))


def decode_continuous(action: np.ndarray, chain: KinematicChain, cfg: CodecConfig,
                      robot_pose: Pose, goal: Pose,
                      arm_theta: np.ndarray) -> DecodedAction:
    """Full continuous-action decode: [a_model, a_constraint(3), a_target(7)]."""
    action = np.asarray(action, dtype=float)
    if len(action) != 1 + NUM_CONSTRAINT_GROUPS + 7:
        raise ValueError(f"continuous action needs {1 + NUM_CONSTRAINT_GROUPS + 7} "
                         f"entries, got {len(action)}")
    m = decode_model(float(action[0]))
    active = decode_constraints(action[1:1 + NUM_CONSTRAINT_GROUPS], m)
    target_type, target = decode_target(action[1 + NUM_CONSTRAINT_GROUPS:],
                                        robot_pose, goal, cfg.ranges)
    base_target = None
    if m == ModelIndex.BASE:
        base_target = reduce_target_for_base(target, chain, arm_theta)
        target = _base_target_pose(base_target)
    return DecodedAction(m, model_cost(m, chain, cfg), active, target_type,
                         target, base_target)


# ---------------------------------------------------------------------------
# Discrete table
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DiscreteTemplate:
    """State-independent description of one discrete action."""

    m: ModelIndex
    target_type: TargetType
    arc: tuple[float, float] | None = None   # (v, omega) motion primitive
    fraction: float | None = None            # arm straight-line fraction

    def describe(self) -> str:
        if self.target_type == TargetType.GOAL:
            return "goal"
        if self.arc is not None:
            return f"arc v={self.arc[0]:.3f} omega={self.arc[1]:.3f}"
        return f"line fraction={self.fraction:.3f}"


def unicycle_arc_endpoint(x: float, y: float, yaw: float, v: float, omega: float,
                          duration: float) -> tuple[float, float, float]:
    """Closed-form endpoint of a constant-(v, omega) unicycle arc."""
    if abs(omega) < 1e-12:
        return (x + v * np.cos(yaw) * duration, y + v * np.sin(yaw) * duration, yaw)
    yaw1 = yaw + omega * duration
    return (x + v / omega * (np.sin(yaw1) - np.sin(yaw)),
            y - v / omega * (np.cos(yaw1) - np.cos(yaw)),
            yaw1)


def build_discrete_table(chain: KinematicChain,
                         cfg: CodecConfig) -> tuple[DiscreteTemplate, ...]:
    """3 models x (direct goal + 8 sub-goals) = 27 templates, restricted to
    the configured model subset.

    Base and whole-body sub-goals are unicycle motion-primitive endpoints
    over the {v_max/2, v_max} x {+-omega_max, +-omega_max/2} grid; arm
    sub-goals interpolate the EE toward the goal at fractions 1/8 .. 8/8.
    """
    v_max, w_max = chain.base_vel_limits
    arcs = [(v, w) for v in (0.5 * v_max, v_max)
            for w in (-w_max, -0.5 * w_max, 0.5 * w_max, w_max)]
    table = []
    for m in (ModelIndex.BASE, ModelIndex.ARM, ModelIndex.WHOLE_BODY):
        if int(m) not in cfg.allowed_models:
            continue
        table.append(DiscreteTemplate(m, TargetType.GOAL))
        if m == ModelIndex.ARM:
            n = cfg.arm_fraction_count
            table.extend(DiscreteTemplate(m, TargetType.SUB_GOAL, fraction=k / n)
                         for k in range(1, n + 1))
        else:
            table.extend(DiscreteTemplate(m, TargetType.SUB_GOAL, arc=a)
                         for a in arcs)
    return tuple(table)


def decode_discrete(table: tuple[DiscreteTemplate, ...], index: int,
                    chain: KinematicChain, cfg: CodecConfig, robot_pose: Pose,
                    goal: Pose, arm_theta: np.ndarray) -> DecodedAction:
    """Materialize a template into a world-frame target from the current state.

    Discrete mode keeps every applicable constraint group active.
    """
    if not 0 <= index < len(table):
        raise IndexError(f"discrete action index {index} out of range [0, {len(table)})")
    tpl = table[index]
    m = tpl.m
    wb = np.concatenate([[robot_pose.p[0], robot_pose.p[1], quat_yaw(robot_pose.q)],
                         arm_theta])
    base_target = None
    if tpl.target_type == TargetType.GOAL:
        target = Pose(goal.p.copy(), goal.q.copy())
        if m == ModelIndex.BASE:
            base_target = reduce_target_for_base(target, chain, arm_theta)
            target = _base_target_pose(base_target)
    elif tpl.arc is not None:
        end = unicycle_arc_endpoint(wb[0], wb[1], wb[2], tpl.arc[0], tpl.arc[1],
                                    cfg.action_seconds)
        if m == ModelIndex.BASE:
            base_target = end
            target = _base_target_pose(end)
        else:
            # whole-body: EE pose if the base drove the arc with the arm held
            target = forward_kinematics(chain, np.concatenate([end, arm_theta]))
    else:
        ee = forward_kinematics(chain, wb)
        pos = ee.p + tpl.fraction * (goal.p - ee.p)
        target = Pose(pos, goal.q.copy())
    return DecodedAction(m, model_cost(m, chain, cfg), applicable_kinds(m),
                         tpl.target_type, target, base_target)


def dump_action_table(table: tuple[DiscreteTemplate, ...], path: str) -> None:
    """Write the discrete table as CSV: index, model, target type, description."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["index", "model", "target_type", "description"])
        for i, tpl in enumerate(table):
            writer.writerow([i, tpl.m.name.lower(), tpl.target_type.value,
                             tpl.describe()])
