"""Vector and quaternion helpers.

Quaternions are numpy arrays in scalar-first order ``(w, x, y, z)``; vectors
are length-3 arrays. Functions accept anything ``np.asarray`` understands.
"""

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

_SMALL_ANGLE = 1e-12


def quat_mul(a, b):
    """Hamilton product ``a ⊗ b``."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conj(q):
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    return q / np.linalg.norm(q)


def quat_exp(v):
    """Unit quaternion for a rotation of angle ``|v|`` about ``v / |v|``."""
    v = np.asarray(v, dtype=float)
    angle = np.linalg.norm(v)
    if angle < _SMALL_ANGLE:
        return np.array([1.0, 0.5 * v[0], 0.5 * v[1], 0.5 * v[2]])
    half = 0.5 * angle
    return np.concatenate(([np.cos(half)], v * (np.sin(half) / angle)))


def quat_log(q):
    """Rotation vector of a unit quaternion; inverse of :func:`quat_exp`.

    The sign is canonicalized to ``w >= 0`` first, so the returned angle
    lies in ``[0, pi]``.
    """
    q = np.asarray(q, dtype=float)
    if q[0] < 0:
        q = -q
    vec = q[1:]
    s = np.linalg.norm(vec)
    if s < _SMALL_ANGLE:
        return 2.0 * vec
    angle = 2.0 * np.arctan2(s, q[0])
    return vec * (angle / s)


def rotate(q, v):
    """Rotate ``v`` from the body frame into the world frame."""
    w = q[0]
    u = np.asarray(q[1:], dtype=float)
    v = np.asarray(v, dtype=float)
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def rotate_inv(q, v):
    return rotate(quat_conj(q), v)


def rotate_many(q, vs):
    """Rotate each row of ``vs`` (n x 3) by ``q``."""
    w = q[0]
    u = np.asarray(q[1:], dtype=float)
    vs = np.asarray(vs, dtype=float)
    t = 2.0 * np.cross(u, vs)
    return vs + w * t + np.cross(u, t)


def quat_angle(a, b):
    """Relative rotation angle between two unit quaternions, in degrees."""
    d = abs(float(np.dot(a, b)))
    return float(np.degrees(2.0 * np.arccos(min(d, 1.0))))
