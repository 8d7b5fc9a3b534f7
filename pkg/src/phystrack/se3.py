"""Quaternion and rigid-transform math.

Quaternions are stored as arrays [w, x, y, z] and kept in the canonical
half-space (w >= 0) so that the double cover never leaks into downstream
metrics.  Rotation vectors are in radians; the exponential/log maps use the
half-angle convention of unit quaternions.
"""

from __future__ import annotations

import numpy as np

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    """Normalize to unit length and canonicalize the sign (w >= 0)."""
    q = np.asarray(q, dtype=float)
    n = np.linalg.norm(q)
    if n == 0.0:
        raise ValueError("zero quaternion cannot be normalized")
    q = q / n
    return quat_canonical(q)


def quat_canonical(q: np.ndarray) -> np.ndarray:
    """Flip sign so w > 0; for w == 0 the first nonzero component is positive."""
    if q[0] < 0.0:
        return -q
    if q[0] == 0.0:
        for c in q[1:]:
            if c != 0.0:
                return q if c > 0.0 else -q
    return q


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


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion (body -> world for a pose)."""
    w, x, y, z = q
    # q * [0, v] * q^-1 expanded; cheaper than building the matrix.
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    return np.array([
        v[0] + w * tx + (y * tz - z * ty),
        v[1] + w * ty + (z * tx - x * tz),
        v[2] + w * tz + (x * ty - y * tx),
    ])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_exp(rotvec: np.ndarray) -> np.ndarray:
    """Unit quaternion for a rotation vector (axis * angle)."""
    rotvec = np.asarray(rotvec, dtype=float)
    angle = np.linalg.norm(rotvec)
    if angle < 1e-12:
        # Second-order Taylor keeps the map smooth through zero.
        half = 0.5 - angle * angle / 48.0
        return quat_canonical(np.concatenate(([1.0 - angle * angle / 8.0], half * rotvec)))
    axis = rotvec / angle
    return quat_canonical(np.concatenate(([np.cos(0.5 * angle)], np.sin(0.5 * angle) * axis)))


def quat_log(q: np.ndarray) -> np.ndarray:
    """Rotation vector of a unit quaternion (inverse of quat_exp)."""
    q = quat_canonical(np.asarray(q, dtype=float))
    s = np.linalg.norm(q[1:])
    if s < 1e-12:
        return 2.0 * q[1:] / max(q[0], 1e-300)
    angle = 2.0 * np.arctan2(s, q[0])
    return angle * q[1:] / s


def quat_geodesic(a: np.ndarray, b: np.ndarray) -> float:
    """Rotational geodesic distance 2*arccos(|<a, b>|), double-cover safe."""
    d = abs(float(np.dot(a, b)))
    return 2.0 * np.arccos(min(1.0, d))


def quat_chordal(a: np.ndarray, b: np.ndarray) -> float:
    """min(||a - b||, ||a + b||), the double-cover-safe 4-vector distance."""
    return min(float(np.linalg.norm(a - b)), float(np.linalg.norm(a + b)))
