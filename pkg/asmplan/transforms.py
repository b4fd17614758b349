"""Quaternion and pose helpers.

Quaternions are numpy arrays in (w, x, y, z) order. scipy's Rotation uses
(x, y, z, w); conversions go through ``to_scipy`` / ``from_scipy``.
"""
import numpy as np
from scipy.spatial.transform import Rotation

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])


def to_scipy(q: np.ndarray) -> Rotation:
    return Rotation.from_quat([q[1], q[2], q[3], q[0]])


def from_scipy(rotation: Rotation) -> np.ndarray:
    x, y, z, w = rotation.as_quat()
    return quat_normalize(np.array([w, x, y, z]))


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        return IDENTITY_QUAT.copy()
    return q / n


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def matrix_to_quat(matrix: np.ndarray) -> np.ndarray:
    return from_scipy(Rotation.from_matrix(np.asarray(matrix, dtype=float)))


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return np.concatenate([[np.cos(half)], np.sin(half) * axis])


def quat_from_rotvec(rotvec: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (angle * axis) to unit quaternion."""
    angle = float(np.linalg.norm(rotvec))
    if angle < 1e-12:
        return quat_normalize(np.concatenate([[1.0], 0.5 * np.asarray(rotvec, dtype=float)]))
    return quat_from_axis_angle(rotvec / angle, angle)


def quat_log_norm(q: np.ndarray) -> float:
    """Norm of the quaternion logarithm, i.e. half the rotation angle.

    Sign-invariant: q and -q give the same value.
    """
    w = abs(float(q[0]))
    v = float(np.linalg.norm(q[1:]))
    return float(np.arctan2(v, w))


def relative_rotation_distance(a: np.ndarray, b: np.ndarray) -> float:
    return quat_log_norm(quat_mul(quat_conj(a), b))


def quat_slerp(a: np.ndarray, b: np.ndarray, fraction: float) -> np.ndarray:
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    if dot > 0.9995:
        return quat_normalize(a + fraction * (b - a))
    theta = np.arccos(min(dot, 1.0))
    sin_theta = np.sin(theta)
    wa = np.sin((1.0 - fraction) * theta) / sin_theta
    wb = np.sin(fraction * theta) / sin_theta
    return quat_normalize(wa * a + wb * b)


def random_quaternion(rng: np.random.Generator) -> np.ndarray:
    """Uniformly distributed rotation drawn from a seeded generator."""
    return from_scipy(Rotation.random(None, rng))


def pose_matrix(t: np.ndarray, q: np.ndarray) -> np.ndarray:
    matrix = np.eye(4)
    matrix[:3, :3] = quat_to_matrix(q)
    matrix[:3, 3] = t
    return matrix


def apply_pose(points: np.ndarray, t: np.ndarray, q: np.ndarray) -> np.ndarray:
    return points @ quat_to_matrix(q).T + t


def skew(v: np.ndarray) -> np.ndarray:
    return np.array([
        [0.0, -v[2], v[1]],
        [v[2], 0.0, -v[0]],
        [-v[1], v[0], 0.0],
    ])
