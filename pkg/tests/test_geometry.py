"""Tests for poses, quaternions, distance metrics, and closest-point queries."""

import numpy as np
import pytest

from multimpc.geometry import (
    Box,
    Pose,
    closest_point_box,
    compose,
    d_ori,
    d_pos,
    invert,
    pose_identity,
    quat_conjugate,
    quat_from_axis_angle,
    quat_from_rpy,
    quat_from_yaw,
    quat_identity,
    quat_multiply,
    quat_normalize,
    quat_rotate,
    quat_to_rotmat,
    quat_yaw,
    segment_segment_distance,
    wrap_angle,
)


def random_quat(rng):
    q = rng.standard_normal(4)
    return quat_normalize(q)


def random_pose(rng):
    return Pose(rng.uniform(-3.0, 3.0, 3), random_quat(rng))


# ---------------------------------------------------------------------------
# d_pos
# ---------------------------------------------------------------------------

def test_d_pos_identity():
    assert d_pos(np.zeros(3), np.zeros(3)) == 0.0


def test_d_pos_345_triangle():
    assert d_pos(np.zeros(3), np.array([3.0, 4.0, 0.0])) == 5.0


def test_d_pos_matches_componentwise_oracle():
    rng = np.random.default_rng(11)
    for _ in range(100):
        p1 = rng.uniform(-10.0, 10.0, 3)
        p2 = rng.uniform(-10.0, 10.0, 3)
        oracle = np.sqrt(sum((a - b) ** 2 for a, b in zip(p1, p2)))
        assert abs(d_pos(p1, p2) - oracle) < 1e-12


def test_d_pos_metric_axioms():
    rng = np.random.default_rng(12)
    for _ in range(200):
        a, b, c = (rng.uniform(-5.0, 5.0, 3) for _ in range(3))
        assert d_pos(a, b) >= 0.0
        assert abs(d_pos(a, b) - d_pos(b, a)) < 1e-12
        assert d_pos(a, c) <= d_pos(a, b) + d_pos(b, c) + 1e-12


# ---------------------------------------------------------------------------
# d_ori
# ---------------------------------------------------------------------------

def test_d_ori_identity_pair():
    assert d_ori(quat_identity(), quat_identity()) == 0.0


def test_d_ori_double_cover():
    rng = np.random.default_rng(13)
    for _ in range(50):
        q = random_quat(rng)
        # arccos is steep near 1, so rounding in the dot product shows up
        # at the 1e-8 level even for exactly antipodal inputs.
        assert d_ori(q, -q) == pytest.approx(0.0, abs=1e-7)


def test_d_ori_quarter_turn():
    q90 = quat_from_yaw(np.pi / 2.0)
    assert d_ori(quat_identity(), q90) == pytest.approx(np.pi / 2.0, abs=1e-12)


def test_d_ori_range_and_symmetry():
    rng = np.random.default_rng(14)
    for _ in range(200):
        q1, q2 = random_quat(rng), random_quat(rng)
        d = d_ori(q1, q2)
        assert 0.0 <= d <= np.pi
        assert d == pytest.approx(d_ori(q2, q1), abs=1e-12)


def test_d_ori_left_invariance():
    rng = np.random.default_rng(15)
    for _ in range(100):
        q1, q2, r = (random_quat(rng) for _ in range(3))
        lhs = d_ori(quat_multiply(r, q1), quat_multiply(r, q2))
        assert lhs == pytest.approx(d_ori(q1, q2), abs=1e-9)


# ---------------------------------------------------------------------------
# quaternion algebra
# ---------------------------------------------------------------------------

def test_quat_multiply_matches_rotmat_product():
    rng = np.random.default_rng(16)
    for _ in range(50):
        q1, q2 = random_quat(rng), random_quat(rng)
        left = quat_to_rotmat(quat_multiply(q1, q2))
        right = quat_to_rotmat(q1) @ quat_to_rotmat(q2)
        assert np.allclose(left, right, atol=1e-12)


def test_quat_conjugate_inverts_rotation():
    rng = np.random.default_rng(17)
    for _ in range(50):
        q = random_quat(rng)
        v = rng.standard_normal(3)
        back = quat_rotate(quat_conjugate(q), quat_rotate(q, v))
        assert np.allclose(back, v, atol=1e-12)


def test_quat_from_yaw_rotates_x_axis():
    for yaw in (-2.0, -0.5, 0.0, 0.7, 3.0):
        q = quat_from_yaw(yaw)
        ex = quat_rotate(q, np.array([1.0, 0.0, 0.0]))
        assert np.allclose(ex, [np.cos(yaw), np.sin(yaw), 0.0], atol=1e-12)
        assert quat_yaw(q) == pytest.approx(wrap_angle(yaw), abs=1e-12)


def test_quat_from_rpy_yaw_only_matches_from_yaw():
    for yaw in (-1.2, 0.0, 0.4, 2.9):
        assert np.allclose(quat_from_rpy(0.0, 0.0, yaw), quat_from_yaw(yaw),
                           atol=1e-12)


def test_quat_from_axis_angle_rejects_zero_axis():
    with pytest.raises(ValueError):
        quat_from_axis_angle(np.zeros(3), 0.3)


def test_quat_normalize_rejects_zero():
    with pytest.raises(ValueError):
        quat_normalize(np.zeros(4))


def test_wrap_angle_range():
    rng = np.random.default_rng(18)
    for _ in range(200):
        a = rng.uniform(-30.0, 30.0)
        w = wrap_angle(a)
        assert -np.pi <= w < np.pi
        assert abs(np.sin(w) - np.sin(a)) < 1e-9
        assert abs(np.cos(w) - np.cos(a)) < 1e-9


# ---------------------------------------------------------------------------
# poses
# ---------------------------------------------------------------------------

def test_compose_with_identity():
    rng = np.random.default_rng(19)
    p = random_pose(rng)
    out = compose(pose_identity(), p)
    assert np.allclose(out.p, p.p)
    assert np.allclose(out.q, p.q)


def test_pure_translations_add():
    a = Pose(np.array([1.0, 2.0, 3.0]))
    b = Pose(np.array([0.5, -1.0, 0.25]))
    out = compose(a, b)
    assert np.allclose(out.p, [1.5, 1.0, 3.25])
    assert np.allclose(out.q, quat_identity())


def test_compose_invert_round_trip():
    rng = np.random.default_rng(20)
    for _ in range(100):
        p = random_pose(rng)
        rt = compose(p, invert(p))
        assert np.allclose(rt.p, 0.0, atol=1e-9)
        assert min(np.linalg.norm(rt.q - quat_identity()),
                   np.linalg.norm(rt.q + quat_identity())) < 1e-9


def test_compose_associative_on_points():
    rng = np.random.default_rng(21)
    for _ in range(50):
        a, b = random_pose(rng), random_pose(rng)
        v = rng.standard_normal(3)
        assert np.allclose(compose(a, b).transform_point(v),
                           a.transform_point(b.transform_point(v)), atol=1e-9)


# ---------------------------------------------------------------------------
# boxes
# ---------------------------------------------------------------------------

def test_closest_point_box_center_inside():
    box = Box(np.array([1.0, -2.0, 0.5]), 0.3, np.array([0.4, 0.6, 1.0]))
    point, dist = closest_point_box(box.center, box)
    assert dist == 0.0
    assert np.allclose(point, box.center)


def test_closest_point_box_face_projection():
    box = Box(np.zeros(3), 0.0, np.ones(3))
    point, dist = closest_point_box(np.array([0.0, 0.0, 1.5]), box)
    assert dist == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(point, [0.0, 0.0, 0.5], atol=1e-12)


def test_closest_point_box_corner_oracle():
    rng = np.random.default_rng(22)
    for _ in range(100):
        size = rng.uniform(0.1, 2.0, 3)
        box = Box(rng.uniform(-2.0, 2.0, 3), rng.uniform(-np.pi, np.pi), size)
        p = rng.uniform(-5.0, 5.0, 3)
        c, s = np.cos(box.yaw), np.sin(box.yaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        local = rot.T @ (p - box.center)
        clamped = np.clip(local, -0.5 * size, 0.5 * size)
        point, dist = closest_point_box(p, box)
        assert dist == pytest.approx(np.linalg.norm(local - clamped), abs=1e-12)
        assert np.allclose(point, box.center + rot @ clamped, atol=1e-12)


def test_closest_point_box_rigid_invariance():
    rng = np.random.default_rng(23)
    for _ in range(100):
        box = Box(rng.uniform(-1.0, 1.0, 3), rng.uniform(-np.pi, np.pi),
                  rng.uniform(0.2, 1.5, 3))
        p = rng.uniform(-3.0, 3.0, 3)
        _, d0 = closest_point_box(p, box)
        # Yaw-only rigid motion so the moved box stays yaw-oriented.
        dyaw = rng.uniform(-np.pi, np.pi)
        shift = rng.uniform(-2.0, 2.0, 3)
        c, s = np.cos(dyaw), np.sin(dyaw)
        rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        moved = Box(rot @ box.center + shift, wrap_angle(box.yaw + dyaw), box.size)
        _, d1 = closest_point_box(rot @ p + shift, moved)
        assert d1 == pytest.approx(d0, abs=1e-9)


def test_box_rejects_nonpositive_extent():
    with pytest.raises(ValueError):
        Box(np.zeros(3), 0.0, np.array([1.0, 0.0, 1.0]))


# ---------------------------------------------------------------------------
# segments
# ---------------------------------------------------------------------------

def test_parallel_unit_segments():
    d = segment_segment_distance(np.zeros(3), np.array([1.0, 0.0, 0.0]),
                                 np.array([0.0, 1.0, 0.0]),
                                 np.array([1.0, 1.0, 0.0]))
    assert d == pytest.approx(1.0, abs=1e-12)


def test_crossing_segments():
    d = segment_segment_distance(np.array([-1.0, 0.0, 0.0]),
                                 np.array([1.0, 0.0, 0.0]),
                                 np.array([0.0, -1.0, 0.0]),
                                 np.array([0.0, 1.0, 0.0]))
    assert d == pytest.approx(0.0, abs=1e-12)


def test_degenerate_segments_are_points():
    a = np.array([0.3, -0.2, 1.0])
    b = np.array([1.3, -0.2, 1.0])
    assert segment_segment_distance(a, a, b, b) == pytest.approx(1.0, abs=1e-12)


def _sampling_oracle(a0, a1, b0, b1):
    """Two-parameter grid search with iterative zoom around the best cell."""
    s_lo, s_hi, t_lo, t_hi = 0.0, 1.0, 0.0, 1.0
    best = np.inf
    for _ in range(6):
        ss = np.linspace(s_lo, s_hi, 41)
        ts = np.linspace(t_lo, t_hi, 41)
        pa = a0[None, :] + ss[:, None] * (a1 - a0)[None, :]
        pb = b0[None, :] + ts[:, None] * (b1 - b0)[None, :]
        dist = np.linalg.norm(pa[:, None, :] - pb[None, :, :], axis=2)
        i, j = np.unravel_index(np.argmin(dist), dist.shape)
        best = min(best, float(dist[i, j]))
        ds, dt = (s_hi - s_lo) / 40.0, (t_hi - t_lo) / 40.0
        s_lo, s_hi = max(0.0, ss[i] - ds), min(1.0, ss[i] + ds)
        t_lo, t_hi = max(0.0, ts[j] - dt), min(1.0, ts[j] + dt)
    return best


def test_segment_distance_matches_sampling_oracle():
    rng = np.random.default_rng(24)
    for _ in range(50):
        a0, a1, b0, b1 = (rng.uniform(-2.0, 2.0, 3) for _ in range(4))
        oracle = _sampling_oracle(a0, a1, b0, b1)
        d = segment_segment_distance(a0, a1, b0, b1)
        assert d <= oracle + 1e-12
        assert d == pytest.approx(oracle, abs=1e-6)
        # symmetry
        assert d == pytest.approx(
            segment_segment_distance(b0, b1, a0, a1), abs=1e-12)
