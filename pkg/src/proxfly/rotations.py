"""Quaternion and rotation-vector helpers.

Conventions used throughout the package:

* quaternions are scalar-first ``(w, x, y, z)`` and unit norm,
* a vehicle quaternion rotates body-frame vectors into the world frame,
* the world frame is right-handed with z up, the body frame is
  front-left-up (x forward, y left, z up),
* rotation vectors are axis * angle in radians.

All functions broadcast over leading axes: quaternions are ``(..., 4)``
arrays, vectors ``(..., 3)``, matrices ``(..., 3, 3)``.  Small-angle
branches switch to series expansions so the maps stay smooth through
the identity.
"""

from __future__ import annotations

import numpy as np

_SMALL_ANGLE = 1e-8


def quat_normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_conjugate(q):
    out = np.asarray(q).copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_multiply(a, b):
    """Hamilton product a * b, composing rotations (a applied after b)."""
    aw, ax, ay, az = a[..., 0], a[..., 1], a[..., 2], a[..., 3]
    bw, bx, by, bz = b[..., 0], b[..., 1], b[..., 2], b[..., 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_rotate(q, v):
    """Rotate vector v by quaternion q (body to world for vehicle quats)."""
    qw = q[..., 0:1]
    qv = q[..., 1:]
    t = 2.0 * np.cross(qv, v)
    return v + qw * t + np.cross(qv, t)


def quat_to_rotmat(q):
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    row0 = np.stack([1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)], axis=-1)
    row1 = np.stack([2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)], axis=-1)
    row2 = np.stack([2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)], axis=-1)
    return np.stack([row0, row1, row2], axis=-2)


def body_z_world(q):
    """Third column of the rotation matrix: thrust axis in world frame."""
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    return np.stack(
        [2.0 * (x * z + w * y), 2.0 * (y * z - w * x), 1.0 - 2.0 * (x * x + y * y)],
        axis=-1,
    )


def quat_from_rotation_vector(v):
    """Exponential map: rotation vector to unit quaternion."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v, axis=-1, keepdims=True)
    half = 0.5 * angle
    small = angle < _SMALL_ANGLE
    # sin(a/2)/a -> 1/2 - a^2/48 as a -> 0
    with np.errstate(invalid="ignore"):
        k = np.where(small, 0.5 - angle * angle / 48.0, np.sin(half) / np.where(angle == 0.0, 1.0, angle))
    w = np.cos(half)
    return np.concatenate([w, k * v], axis=-1)


def rotation_vector_from_quat(q):
    """Log map: unit quaternion to rotation vector with angle in [0, pi]."""
    q = np.asarray(q, dtype=float)
    # enforce w >= 0 so the result is the short rotation
    q = np.where(q[..., 0:1] < 0.0, -q, q)
    w = np.clip(q[..., 0:1], -1.0, 1.0)
    s = np.linalg.norm(q[..., 1:], axis=-1, keepdims=True)
    angle = 2.0 * np.arctan2(s, w)
    small = s < _SMALL_ANGLE
    # angle/sin(angle/2) -> 2 + angle^2/12 as angle -> 0
    with np.errstate(invalid="ignore"):
        k = np.where(small, 2.0 + angle * angle / 12.0, angle / np.where(s == 0.0, 1.0, s))
    return k * q[..., 1:]


def quat_from_yaw(yaw):
    yaw = np.asarray(yaw, dtype=float)
    half = 0.5 * yaw
    zeros = np.zeros_like(half)
    return np.stack([np.cos(half), zeros, zeros, np.sin(half)], axis=-1)


def quat_integrate(q, omega_body, dt):
    """Advance attitude by body rates over dt using the exact exponential."""
    dq = quat_from_rotation_vector(np.asarray(omega_body) * dt)
    return quat_normalize(quat_multiply(q, dq))


def rotation_angle(R, R_des):
    """Geodesic angle between two rotation matrices, radians in [0, pi]."""
    tr = np.einsum("...ij,...ij->...", R, R_des)
    return np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))
