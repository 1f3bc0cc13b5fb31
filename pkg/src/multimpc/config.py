"""Config file loading: one YAML file, strict validation, documented defaults.

Sections (all optional; omitted fields fall back to the dataclass defaults):
  world:    boundaries, occupancy boxes, goal sampling, thresholds
  rewards:  terminal constants, step-reward weights, episode limits
  chain:    arm/base geometry and limits (scalar knobs, expanded per joint)
  slq:      solver horizon, step, iteration and line-search settings
  rbf:      barrier weight and relaxation threshold
  codec:    target ranges, action horizon, allowed models
  dqn:      trainer hyperparameters
  pipeline: t_action, dt_ctrl, timing_mode

Unknown keys are rejected, and every validation error names the offending key.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields

import numpy as np
import yaml

from .action_codec import CodecConfig, TargetRanges
from .drl import DqnConfig, config_hash
from .env_sim import RewardParams, WorldConfig
from .geometry import Box, Pose
from .pipeline import PipelineConfig
from .robot_models import KinematicChain
from .slq_nmpc import RbfParams, SlqSettings


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChainParams:
    """Scalar knobs expanded into a full kinematic chain description."""

    num_joints: int = 6
    link_length: float = 0.15
    link_mass: float = 1.0
    base_mass: float = 20.0
    mount_xyz: tuple[float, float, float] = (0.15, 0.0, 0.3)
    ee_offset_z: float = 0.1
    joint_pos_limit: float = 2.8
    joint_vel_limit: float = 1.5
    base_half_extents: tuple[float, float] = (0.25, 0.2)
    base_com_height: float = 0.15
    v_max: float = 1.0
    omega_max: float = 1.5
    collision_samples_per_link: int = 3

    def build(self) -> KinematicChain:
        n = self.num_joints
        axes = np.array([[0.0, 0.0, 1.0] if i % 2 == 0 else [0.0, 1.0, 0.0]
                         for i in range(n)])
        offsets = tuple(Pose(np.array([0.0, 0.0, self.link_length]))
                        for _ in range(n))
        return KinematicChain(
            mount=Pose(np.asarray(self.mount_xyz, dtype=float)),
            joint_axes=axes,
            link_offsets=offsets,
            ee_offset=Pose(np.array([0.0, 0.0, self.ee_offset_z])),
            joint_pos_limits=np.tile([-self.joint_pos_limit, self.joint_pos_limit],
                                     (n, 1)),
            joint_vel_limits=np.full(n, self.joint_vel_limit),
            link_masses=np.full(n, self.link_mass),
            link_com_offsets=np.tile([0.0, 0.0, 0.5 * self.link_length], (n, 1)),
            base_mass=self.base_mass,
            base_com_offset=np.array([0.0, 0.0, self.base_com_height]),
            base_half_extents=np.asarray(self.base_half_extents, dtype=float),
            base_vel_limits=np.array([self.v_max, self.omega_max]),
            collision_samples_per_link=self.collision_samples_per_link,
        )


@dataclass(frozen=True)
class FullConfig:
    chain_params: ChainParams
    pipeline: PipelineConfig
    dqn: DqnConfig

    @property
    def chain(self) -> KinematicChain:
        return self.chain_params.build()

    def hash(self) -> str:
        return config_hash(dump_config_dict(self))


_TUPLE_FIELDS = {"x_limits", "y_limits", "z_limits", "goal_x_range",
                 "spawn_x_range", "spawn_y_range", "spawn_yaw_range",
                 "tilt_limits", "support_half_extents", "arm_home",
                 "mount_xyz", "base_half_extents", "hidden_sizes",
                 "allowed_models", "line_search_steps", "self_pairs"}


def _coerce(name: str, value, section: str):
    if name in _TUPLE_FIELDS and isinstance(value, list):
        if name == "self_pairs":
            return tuple(tuple(v) for v in value)
        return tuple(value)
    return value


def _build_section(cls, data: dict | None, section: str):
    data = data or {}
    if not isinstance(data, dict):
        raise ConfigError(f"section '{section}' must be a mapping")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key '{section}.{sorted(unknown)[0]}'")
    kwargs = {k: _coerce(k, v, section) for k, v in data.items()}
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"invalid section '{section}': {exc}") from exc


def _build_boxes(entries, section: str) -> tuple[Box, ...]:
    boxes = []
    for i, e in enumerate(entries or []):
        unknown = set(e) - {"center", "yaw", "size"}
        if unknown:
            raise ConfigError(f"unknown key '{section}.boxes[{i}].{sorted(unknown)[0]}'")
        try:
            boxes.append(Box(np.asarray(e["center"], dtype=float),
                             float(e.get("yaw", 0.0)),
                             np.asarray(e["size"], dtype=float)))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"invalid '{section}.boxes[{i}]': {exc}") from exc
    return tuple(boxes)


def _build_ranges(data: dict | None) -> TargetRanges:
    data = data or {}
    known = {"sub_min", "sub_max", "goal_min", "goal_max"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown key 'codec.ranges.{sorted(unknown)[0]}'")
    kwargs = {k: np.asarray(v, dtype=float) for k, v in data.items()}
    try:
        return TargetRanges(**kwargs)
    except ValueError as exc:
        raise ConfigError(f"invalid 'codec.ranges': {exc}") from exc


_TOP_SECTIONS = ("world", "rewards", "chain", "slq", "rbf", "codec", "dqn",
                 "pipeline")


def build_config(raw: dict) -> FullConfig:
    """Validate and assemble a full configuration from a parsed mapping."""
    raw = raw or {}
    unknown = set(raw) - set(_TOP_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section '{sorted(unknown)[0]}'")

    world_raw = dict(raw.get("world") or {})
    boxes = _build_boxes(world_raw.pop("boxes", None), "world")
    world = _build_section(WorldConfig, world_raw, "world")
    if boxes:
        world = dataclasses.replace(world, boxes=boxes)

    codec_raw = dict(raw.get("codec") or {})
    ranges = _build_ranges(codec_raw.pop("ranges", None))
    codec = _build_section(CodecConfig, codec_raw, "codec")
    codec = dataclasses.replace(codec, ranges=ranges)

    chain_params = _build_section(ChainParams, raw.get("chain"), "chain")
    rewards = _build_section(RewardParams, raw.get("rewards"), "rewards")
    slq = _build_section(SlqSettings, raw.get("slq"), "slq")
    rbf = _build_section(RbfParams, raw.get("rbf"), "rbf")
    dqn = _build_section(DqnConfig, raw.get("dqn"), "dqn")

    pipe_raw = dict(raw.get("pipeline") or {})
    known = {"t_action", "dt_ctrl", "timing_mode"}
    unknown = set(pipe_raw) - known
    if unknown:
        raise ConfigError(f"unknown key 'pipeline.{sorted(unknown)[0]}'")
    try:
        pipeline = PipelineConfig(world=world, rewards=rewards, slq=slq, rbf=rbf,
                                  codec=codec, **pipe_raw)
    except ValueError as exc:
        raise ConfigError(f"invalid section 'pipeline': {exc}") from exc

    # world arm_home length must match the chain
    if len(world.arm_home) != chain_params.num_joints:
        raise ConfigError("world.arm_home length must equal chain.num_joints")
    return FullConfig(chain_params=chain_params, pipeline=pipeline, dqn=dqn)


def load_config(path: str) -> FullConfig:
    with open(path) as f:
        raw = yaml.safe_load(f)
    return build_config(raw)


def _plain(value):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, Box):
        return {"center": value.center.tolist(), "yaw": value.yaw,
                "size": value.size.tolist()}
    if isinstance(value, tuple):
        return [_plain(v) for v in value]
    if dataclasses.is_dataclass(value):
        return {f.name: _plain(getattr(value, f.name))
                for f in fields(value)}
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    return value


def dump_config_dict(cfg: FullConfig) -> dict:
    p = cfg.pipeline
    return {
        "world": _plain(p.world),
        "rewards": _plain(p.rewards),
        "chain": _plain(cfg.chain_params),
        "slq": _plain(p.slq),
        "rbf": _plain(p.rbf),
        "codec": {**{k: _plain(v) for k, v in _plain(p.codec).items()
                     if k != "ranges" and k != "cost_overrides"},
                  "ranges": _plain(p.codec.ranges)},
        "dqn": _plain(cfg.dqn),
        "pipeline": {"t_action": p.t_action, "dt_ctrl": p.dt_ctrl,
                     "timing_mode": p.timing_mode},
    }


def dump_config(cfg: FullConfig, path: str) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(dump_config_dict(cfg), f, sort_keys=False)
