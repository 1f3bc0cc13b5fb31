"""Tests for the episode simulation: observations, terminals, rewards."""

import dataclasses

import numpy as np
import pytest

from multimpc.geometry import Box, Pose, quat_from_yaw, quat_rotate, wrap_angle
from multimpc.robot_models import (
    ModelIndex,
    com_position,
    default_chain,
    forward_kinematics,
    integrate,
    link_segments,
    model_dof,
)
from multimpc.env_sim import (
    Environment,
    EpisodeDoneError,
    Outcome,
    RewardParams,
    SimState,
    WorldConfig,
    WorldConfigError,
    build_observation,
    check_terminal,
    collision_points,
    observation_length,
    pseudo_tilt,
    self_distances,
    step_reward,
    sub_goal,
)
from multimpc.geometry import segment_segment_distance


@pytest.fixture
def chain():
    return default_chain()


@pytest.fixture
def world():
    return WorldConfig(boxes=(Box(np.array([2.0, 0.0, 0.25]), 0.0,
                                  np.array([0.6, 2.0, 0.5])),))


@pytest.fixture
def rewards():
    return RewardParams()


def make_state(chain, world, wb=None, goal=None):
    if wb is None:
        wb = np.concatenate([[0.0, 0.0, 0.0], world.arm_home])
    if goal is None:
        goal = Pose(np.array([2.0, 0.0, world.goal_z]), world.goal_quat)
    ee = forward_kinematics(chain, wb)
    s = SimState(wb=wb, base_u=np.zeros(2), arm_u=np.zeros(chain.num_joints),
                 goal=goal, com_ref=com_position(chain, wb),
                 d0=float(np.linalg.norm(ee.p - goal.p)))
    s.tilt = pseudo_tilt(s, world, chain)
    return s


# ---------------------------------------------------------------------------
# configuration validation
# ---------------------------------------------------------------------------

def test_world_config_rejects_inverted_limits():
    with pytest.raises(WorldConfigError):
        WorldConfig(x_limits=(1.0, -1.0))
    with pytest.raises(WorldConfigError):
        WorldConfig(success_threshold=0.0)


def test_reward_params_sign_validation():
    with pytest.raises(ValueError):
        RewardParams(tau_success=-1.0)
    with pytest.raises(ValueError):
        RewardParams(tau_boundary=1.0)
    with pytest.raises(ValueError):
        RewardParams(alpha_sub=0.0)
    with pytest.raises(ValueError):
        RewardParams(target_progress_mode="bogus")


def test_environment_validates_arm_home(chain, world, rewards):
    bad = dataclasses.replace(world, arm_home=(0.0, 0.0))
    with pytest.raises(WorldConfigError):
        Environment(bad, rewards, chain)


# ---------------------------------------------------------------------------
# reset and observation
# ---------------------------------------------------------------------------

def test_reset_deterministic_under_seed(chain, world, rewards):
    env = Environment(world, rewards, chain)
    o1 = env.reset(seed=7)
    o2 = env.reset(seed=7)
    assert np.array_equal(o1, o2)


def test_reset_observation_length(chain, world, rewards):
    env = Environment(world, rewards, chain)
    obs = env.reset(seed=0)
    assert len(obs) == observation_length(world, chain)
    assert len(obs) == 3 + 6 * world.num_boxes + len(world.self_pairs) + 2 + 2 * chain.num_joints


def test_reset_rejects_out_of_bounds_pose(chain, world, rewards):
    env = Environment(world, rewards, chain)
    with pytest.raises(WorldConfigError):
        env.reset(base_pose_init=(100.0, 0.0, 0.0))


def test_observation_goal_in_robot_frame(chain, world, rewards):
    env = Environment(world, rewards, chain)
    goal = np.array([1.5, -0.5, world.goal_z])
    for yaw in (0.0, 0.7, -2.0):
        obs = env.reset(base_pose_init=(0.3, 0.2, yaw), goal_position=goal)
        rel = goal - np.array([0.3, 0.2, 0.0])
        expected = quat_rotate(quat_from_yaw(-yaw), rel)
        assert np.allclose(obs[:3], expected, atol=1e-12)


def test_observation_goal_at_base_origin(chain, world, rewards):
    env = Environment(world, rewards, chain)
    obs = env.reset(base_pose_init=(0.4, -0.3, 1.1),
                    goal_position=np.array([0.4, -0.3, world.goal_z]))
    assert np.allclose(obs[:3], [0.0, 0.0, world.goal_z], atol=1e-12)


def test_observation_yaw_flip_negates_goal_xy(chain, world, rewards):
    env = Environment(world, rewards, chain)
    goal = np.array([2.0, 0.5, world.goal_z])
    o0 = env.reset(base_pose_init=(0.0, 0.0, 0.2), goal_position=goal)
    o1 = env.reset(base_pose_init=(0.0, 0.0, wrap_angle(0.2 + np.pi)),
                   goal_position=goal)
    assert np.allclose(o1[:2], -o0[:2], atol=1e-9)
    assert o1[2] == pytest.approx(o0[2], abs=1e-12)


def test_observation_frame_relativity(chain, world, rewards):
    # applying the same planar rigid transform to robot and goal leaves
    # o_goal unchanged
    env = Environment(world, rewards, chain)
    rng = np.random.default_rng(60)
    for _ in range(20):
        bx, by, byaw = rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-3, 3)
        goal = np.array([rng.uniform(1, 3), rng.uniform(-1, 1), world.goal_z])
        o0 = env.reset(base_pose_init=(bx, by, byaw), goal_position=goal)
        dyaw = rng.uniform(-np.pi, np.pi)
        shift = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), 0.0])
        rot = quat_from_yaw(dyaw)
        new_base = quat_rotate(rot, np.array([bx, by, 0.0])) + shift
        new_goal = quat_rotate(rot, goal) + shift
        new_goal[2] = goal[2]
        o1 = env.reset(base_pose_init=(new_base[0], new_base[1],
                                       wrap_angle(byaw + dyaw)),
                       goal_position=new_goal)
        assert np.allclose(o1[:3], o0[:3], atol=1e-9)


def test_self_distances_match_segment_oracle(chain, world, rewards):
    env = Environment(world, rewards, chain)
    env.reset(seed=3)
    s = env.state
    segs = link_segments(chain, s.wb)
    dists = self_distances(s, world, chain)
    for k, (i, j) in enumerate(world.self_pairs):
        oracle = segment_segment_distance(segs[i, 0], segs[i, 1],
                                          segs[j, 0], segs[j, 1])
        assert dists[k] == pytest.approx(oracle, abs=1e-12)


# ---------------------------------------------------------------------------
# pseudo-tilt
# ---------------------------------------------------------------------------

def test_pseudo_tilt_zero_inside_support(chain, world):
    s = make_state(chain, world)
    # the home CoM sits above the footprint for the default chain
    assert pseudo_tilt(s, world, chain) == (0.0, 0.0)


def test_pseudo_tilt_lateral_overhang_value(chain, world):
    # place all mass far to the side by swinging the first joint
    s = make_state(chain, world)
    com_local = com_position(chain, s.wb)
    # direct formula check with a synthetic CoM offset
    hx, hy = world.support_half_extents
    over = 0.1
    height = 0.5
    assert np.arctan2(over, height) == pytest.approx(0.19739555984988078)
    # and the implementation reduces to that formula
    tilt = pseudo_tilt(s, world, chain)
    com = com_local
    lat = max(abs(com[1]) - hy, 0.0)
    lon = max(abs(com[0]) - hx, 0.0)
    assert tilt[0] == pytest.approx(np.arctan2(lat, max(com[2], 1e-6)))
    assert tilt[1] == pytest.approx(np.arctan2(lon, max(com[2], 1e-6)))


def test_pseudo_tilt_symmetric_configuration(chain, world):
    # joints rotated only about y keep the CoM on the x-z plane: no roll
    wb = np.concatenate([[0.0, 0.0, 0.0], [0.0, 0.8, 0.0, 0.9, 0.0, 0.0]])
    s = make_state(chain, world, wb=wb)
    psi, _ = pseudo_tilt(s, world, chain)
    assert psi == pytest.approx(0.0, abs=1e-12)


# ---------------------------------------------------------------------------
# terminal checks
# ---------------------------------------------------------------------------

def test_terminal_success_at_goal(chain, world, rewards):
    s = make_state(chain, world)
    ee = forward_kinematics(chain, s.wb)
    s.goal = Pose(ee.p, ee.q)
    outcome, r = check_terminal(s, world, rewards, chain)
    assert outcome == Outcome.SUCCESS
    assert r == rewards.tau_success


def test_terminal_boundary(chain, world, rewards):
    s = make_state(chain, world)
    s.wb[0] = world.x_limits[1] + 0.01
    s.goal = Pose(np.array([100.0, 100.0, 100.0]))  # keep success unreachable
    outcome, r = check_terminal(s, world, rewards, chain)
    assert outcome == Outcome.BOUNDARY
    assert r == rewards.tau_boundary


def test_terminal_collision_near_box(chain, world, rewards):
    # stand the base right next to the box so footprint corners fall inside
    # the collision distance
    s = make_state(chain, world, wb=np.concatenate([[1.6, 0.0, 0.0],
                                                    world.arm_home]))
    s.goal = Pose(np.array([100.0, 100.0, 100.0]))
    outcome, r = check_terminal(s, world, rewards, chain)
    assert outcome == Outcome.COLLISION
    assert r == rewards.tau_collision


def test_terminal_rollover_by_tilt(chain, world, rewards):
    s = make_state(chain, world)
    s.goal = Pose(np.array([100.0, 100.0, 100.0]))
    s.tilt = (world.tilt_limits[0] + 0.1, 0.0)
    outcome, r = check_terminal(s, world, rewards, chain)
    assert outcome == Outcome.ROLLOVER
    assert r == rewards.tau_roll


def test_terminal_max_step(chain, world, rewards):
    s = make_state(chain, world)
    s.goal = Pose(np.array([100.0, 100.0, 100.0]))
    s.wb[0] = -2.0
    s.n = rewards.max_rl_steps + 1
    outcome, r = check_terminal(s, world, rewards, chain)
    assert outcome == Outcome.MAX_STEP
    assert r == rewards.tau_max_step


def test_terminal_running_otherwise(chain, world, rewards):
    s = make_state(chain, world, wb=np.concatenate([[-2.0, 0.0, 0.0],
                                                    world.arm_home]))
    outcome, r = check_terminal(s, world, rewards, chain)
    assert outcome == Outcome.RUNNING
    assert r == 0.0


# ---------------------------------------------------------------------------
# sub-goal
# ---------------------------------------------------------------------------

def test_sub_goal_full_interpolation():
    p_sub, _ = sub_goal(np.array([0.0, 0.0]), np.array([3.0, -1.0]), 1.0)
    assert np.allclose(p_sub, [3.0, -1.0])


def test_sub_goal_midpoint():
    p_sub, phi = sub_goal(np.array([0.0, 0.0]), np.array([2.0, 0.0]), 0.5)
    assert np.allclose(p_sub, [1.0, 0.0])
    assert phi == 0.0


def test_sub_goal_north():
    _, phi = sub_goal(np.array([0.0, 0.0]), np.array([0.0, 1.0]), 0.4)
    assert phi == pytest.approx(np.pi / 2.0)


def test_sub_goal_degenerate_keeps_current_yaw():
    p = np.array([1.0, 1.0])
    _, phi = sub_goal(p, p, 0.4, current_yaw=0.77)
    assert phi == 0.77


# ---------------------------------------------------------------------------
# step reward
# ---------------------------------------------------------------------------

def test_reward_model_penalty_proportional_to_dof(chain, world, rewards):
    prev = make_state(chain, world)
    curr = prev.snapshot()
    na = chain.num_joints
    for m, dof in ((ModelIndex.BASE, 3), (ModelIndex.ARM, na),
                   (ModelIndex.WHOLE_BODY, 3 + na)):
        br = step_reward(prev, curr, m, rewards, chain)
        assert br.r_model == pytest.approx(-dof / (3 + na))


def test_reward_arm_com_sign_cases(chain, world, rewards):
    prev = make_state(chain, world)
    curr = prev.snapshot()
    curr.com_acc = [0.01, 0.02]  # mean below threshold
    br = step_reward(prev, curr, ModelIndex.ARM, rewards, chain,
                     com_threshold=0.1)
    assert br.r_target == pytest.approx(rewards.tau_target)
    curr.com_acc = [0.5, 0.3]
    br = step_reward(prev, curr, ModelIndex.ARM, rewards, chain,
                     com_threshold=0.1)
    assert br.r_target == pytest.approx(-rewards.tau_target)


def test_reward_base_zero_argument(chain, world, rewards):
    # dp = dphi = 0: no movement toward the sub-goal and heading exactly at it
    prev = make_state(chain, world, wb=np.concatenate([[0.0, 0.0, 0.0],
                                                       world.arm_home]),
                      goal=Pose(np.array([2.0, 0.0, world.goal_z])))
    curr = prev.snapshot()
    br = step_reward(prev, curr, ModelIndex.BASE, rewards, chain)
    assert br.r_target == pytest.approx(rewards.tau_target, abs=1e-12)


def test_reward_base_monotone_in_dp_plus_dphi(chain, world):
    # gamma < 0 makes the positive branch strictly decreasing in (dp + dphi);
    # sweep dphi by turning the robot away from the sub-goal heading
    r = RewardParams(gamma_shape=-1.0)
    values = []
    for yaw in np.linspace(0.0, np.pi / 2.0, 8):
        prev = make_state(chain, WorldConfig(), wb=np.concatenate(
            [[0.0, 0.0, 0.0], WorldConfig().arm_home]),
            goal=Pose(np.array([2.0, 0.0, 0.55])))
        curr = prev.snapshot()
        curr.wb = curr.wb.copy()
        curr.wb[2] = yaw
        br = step_reward(prev, curr, ModelIndex.BASE, r, default_chain())
        values.append(br.r_target)
    diffs = np.diff(values)
    assert np.all(diffs < 0.0)


def test_reward_sub_target_penalty_value(chain, world):
    r = RewardParams(gamma_shape=-1.0, tau_target=1.0)
    prev = make_state(chain, world, wb=np.concatenate([[0.0, 0.0, 0.0],
                                                       world.arm_home]),
                      goal=Pose(np.array([2.0, 0.0, world.goal_z])))
    curr = prev.snapshot()
    curr.sub_target_hit = True  # dp stays 0: no motion happened
    br = step_reward(prev, curr, ModelIndex.BASE, r, chain)
    assert br.r_target == pytest.approx(-np.e, abs=1e-12)


def test_reward_total_is_weighted_sum(chain, world):
    rng = np.random.default_rng(61)
    r = RewardParams(w_model=0.5, w_goal=2.0, w_target=1.5)
    for _ in range(20):
        prev = make_state(chain, world, wb=np.concatenate(
            [rng.uniform(-1, 1, 2), [rng.uniform(-3, 3)],
             rng.uniform(-1, 1, chain.num_joints)]))
        curr = prev.snapshot()
        curr.wb = curr.wb + rng.uniform(-0.05, 0.05, len(curr.wb))
        term = float(rng.choice([0.0, 20.0, -10.0]))
        br = step_reward(prev, curr, ModelIndex.WHOLE_BODY, r, chain,
                         terminal_reward=term)
        expected = (r.w_model * br.r_model + r.w_goal * br.r_goal
                    + r.w_target * br.r_target + term)
        assert br.total == pytest.approx(expected, abs=1e-12)


def test_reward_goal_progress_normalized_by_d0(chain, world, rewards):
    prev = make_state(chain, world)
    curr = prev.snapshot()
    curr.wb = curr.wb.copy()
    curr.wb[0] += 0.5  # drive straight at the goal
    br = step_reward(prev, curr, ModelIndex.BASE, rewards, chain)
    ee_prev = forward_kinematics(chain, prev.wb).p
    ee_curr = forward_kinematics(chain, curr.wb).p
    d_prev = np.linalg.norm(ee_prev - prev.goal.p)
    d_curr = np.linalg.norm(ee_curr - curr.goal.p)
    assert br.r_goal == pytest.approx((d_prev - d_curr) / curr.d0, abs=1e-12)


# ---------------------------------------------------------------------------
# env.step lifecycle
# ---------------------------------------------------------------------------

def test_step_zero_control_keeps_pose(chain, world, rewards):
    env = Environment(world, rewards, chain)
    env.reset(base_pose_init=(-2.0, 0.0, 0.0))
    wb0 = env.state.wb.copy()
    env.step(np.zeros(2 + chain.num_joints), 0.05)
    assert np.allclose(env.state.wb, wb0, atol=1e-15)
    assert env.state.t == pytest.approx(0.05)


def test_step_reproduces_unicycle_arc(chain, world, rewards):
    env = Environment(world, rewards, chain)
    env.reset(base_pose_init=(-2.0, 0.0, 0.0))
    u = np.concatenate([[1.0, 1.0], np.zeros(chain.num_joints)])
    for _ in range(20):
        env.step(u, 0.05)
    t = 1.0
    expected = np.array([-2.0 + np.sin(t), 1.0 - np.cos(t), t])
    assert np.allclose(env.state.wb[:3], expected, atol=1e-6)


def test_step_clamps_controls(chain, world, rewards):
    env = Environment(world, rewards, chain)
    env.reset(base_pose_init=(-2.0, 0.0, 0.0))
    huge = np.full(2 + chain.num_joints, 100.0)
    env.step(huge, 0.05)
    v_max = chain.base_vel_limits[0]
    assert env.state.base_u[0] == pytest.approx(v_max)
    assert np.all(np.abs(env.state.arm_u) <= chain.joint_vel_limits + 1e-12)


def test_step_boundary_terminates(chain, rewards):
    world = WorldConfig(x_limits=(-3.0, -1.5))
    env = Environment(world, rewards, chain)
    env.reset(base_pose_init=(-1.6, 0.0, 0.0),
              goal_position=np.array([-2.0, 0.0, 5.0]))
    u = np.concatenate([[1.0, 0.0], np.zeros(chain.num_joints)])
    outcome = Outcome.RUNNING
    for _ in range(100):
        _, done, outcome = env.step(u, 0.05)
        if done:
            break
    assert outcome == Outcome.BOUNDARY
    with pytest.raises(EpisodeDoneError):
        env.step(u, 0.05)


def test_step_determinism(chain, world, rewards):
    def run():
        env = Environment(world, rewards, chain)
        env.reset(seed=42)
        obs = []
        u = np.concatenate([[0.3, 0.1], np.full(chain.num_joints, 0.05)])
        for _ in range(15):
            o, done, _ = env.step(u, 0.05)
            obs.append(o)
            if done:
                break
        return np.vstack(obs)

    a, b = run(), run()
    assert a.shape == b.shape
    assert np.array_equal(a, b)


def test_action_horizon_bookkeeping(chain, world, rewards):
    env = Environment(world, rewards, chain)
    env.reset(base_pose_init=(-2.0, 0.0, 0.0))
    env.begin_action()
    assert env.state.com_acc == []
    assert env.state.sub_target_hit is False
    u = np.concatenate([[0.5, 0.0], np.zeros(chain.num_joints)])
    for _ in range(4):
        env.step(u, 0.05)
    assert len(env.state.com_acc) == 4
    outcome, r_term = env.end_action()
    assert env.state.n == 1
    assert outcome == Outcome.RUNNING
    assert r_term == 0.0


def test_collision_points_include_footprint_corners(chain, world):
    s = make_state(chain, world)
    pts = collision_points(s, world, chain)
    n_expected = chain.collision_samples_per_link * chain.num_joints + 1 + 4
    assert pts.shape == (n_expected, 3)
    hx, hy = chain.base_half_extents
    assert np.allclose(sorted(pts[-4:, 0]), sorted([-hx, -hx, hx, hx]))
