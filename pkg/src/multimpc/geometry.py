"""Poses, quaternions, distance metrics, and closest-point queries.

Everything here is a pure function over numpy arrays. Quaternions are
stored as length-4 arrays in (w, x, y, z) order and kept unit-norm.
Boxes are yaw-only oriented (no roll/pitch).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_QUAT_NORM_TOL = 1e-9


def vec3(x: float, y: float, z: float) -> np.ndarray:
    return np.array([x, y, z], dtype=float)


# ---------------------------------------------------------------------------
# Quaternions (w, x, y, z)
# ---------------------------------------------------------------------------

def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_multiply(q1: np.ndarray, q2: np.ndarray) -> np.ndarray:
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    return np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis: np.ndarray, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle
    q = np.empty(4)
    q[0] = np.cos(half)
    q[1:] = np.sin(half) * axis / n
    return q


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([np.cos(0.5 * yaw), 0.0, 0.0, np.sin(0.5 * yaw)])


def quat_from_rpy(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic roll-pitch-yaw (x, then y, then z) to quaternion."""
    qx = quat_from_axis_angle(np.array([1.0, 0.0, 0.0]), roll)
    qy = quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch)
    qz = quat_from_axis_angle(np.array([0.0, 0.0, 1.0]), yaw)
    return quat_multiply(quat_multiply(qx, qy), qz)


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_rotmat(q) @ np.asarray(v, dtype=float)


def quat_yaw(q: np.ndarray) -> float:
    """Yaw of the rotated x-axis, projected onto the world xy plane."""
    ex = quat_rotate(q, np.array([1.0, 0.0, 0.0]))
    return float(np.arctan2(ex[1], ex[0]))


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi)."""
    return float(np.mod(a + np.pi, 2.0 * np.pi) - np.pi)


# ---------------------------------------------------------------------------
# Distance metrics
# ---------------------------------------------------------------------------

def d_pos(p1: np.ndarray, p2: np.ndarray) -> float:
    """Euclidean distance between two points."""
    return float(np.linalg.norm(np.asarray(p1, dtype=float) - np.asarray(p2, dtype=float)))


def d_ori(q1: np.ndarray, q2: np.ndarray) -> float:
    """Angular distance between two unit quaternions, 2*arccos(|dot|).

    Bounded to [0, pi] and invariant under the double cover (q and -q
    represent the same rotation).
    """
    c = abs(float(np.dot(q1, q2)))
    return 2.0 * float(np.arccos(min(1.0, max(-1.0, c))))


# ---------------------------------------------------------------------------
# Poses
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """Rigid transform: rotation by q then translation by p."""

    p: np.ndarray = field(default_factory=lambda: np.zeros(3))
    q: np.ndarray = field(default_factory=quat_identity)

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float))
        q = np.asarray(self.q, dtype=float)
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-6:
            q = quat_normalize(q)
        else:
            q = q / n
        object.__setattr__(self, "q", q)

    def transform_point(self, v: np.ndarray) -> np.ndarray:
        return self.p + quat_rotate(self.q, v)

    def rotate(self, v: np.ndarray) -> np.ndarray:
        return quat_rotate(self.q, v)


def pose_identity() -> Pose:
    return Pose()


def compose(parent: Pose, child: Pose) -> Pose:
    """Composition parent * child (child expressed in the parent frame)."""
    return Pose(parent.transform_point(child.p), quat_multiply(parent.q, child.q))


def invert(pose: Pose) -> Pose:
    qi = quat_conjugate(pose.q)
    return Pose(-quat_rotate(qi, pose.p), qi)


# ---------------------------------------------------------------------------
# Boxes and segments
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Box:
    """Axis-aligned box rotated by yaw about its center."""

    center: np.ndarray
    yaw: float
    size: np.ndarray  # (width, length, height) = extents along x, y, z

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "size", np.asarray(self.size, dtype=float))
        if np.any(self.size <= 0.0):
            raise ValueError("box extents must be positive")


def closest_point_box(p: np.ndarray, box: Box) -> tuple[np.ndarray, float]:
    """Closest point on (or in) a yaw-oriented box, and its distance to p.

    Distance is zero when p is inside the box.
    """
    p = np.asarray(p, dtype=float)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    local = rot.T @ (p - box.center)
    half = 0.5 * box.size
    clamped = np.clip(local, -half, half)
    closest = box.center + rot @ clamped
    return closest, float(np.linalg.norm(local - clamped))


def segment_segment_distance(a0: np.ndarray, a1: np.ndarray,
                             b0: np.ndarray, b1: np.ndarray) -> float:
    """Minimum distance between segments [a0, a1] and [b0, b1].

    Degenerate segments (point == point) are handled.
    """
    a0 = np.asarray(a0, dtype=float)
    a1 = np.asarray(a1, dtype=float)
    b0 = np.asarray(b0, dtype=float)
    b1 = np.asarray(b1, dtype=float)

    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = float(d1 @ d1)
    e = float(d2 @ d2)
    f = float(d2 @ r)
    eps = 1e-14

    if a <= eps and e <= eps:
        return float(np.linalg.norm(r))
    if a <= eps:
        s, t = 0.0, np.clip(f / e, 0.0, 1.0)
    else:
        c = float(d1 @ r)
        if e <= eps:
            t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
        else:
            b = float(d1 @ d2)
            denom = a * e - b * b
            s = np.clip((b * f - c * e) / denom, 0.0, 1.0) if denom > eps else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t, s = 0.0, np.clip(-c / a, 0.0, 1.0)
            elif t > 1.0:
                t, s = 1.0, np.clip((b - c) / a, 0.0, 1.0)
    return float(np.linalg.norm(a0 + s * d1 - (b0 + t * d2)))
