"""Quaternion and rotation helpers shared across the package.

Conventions:
    - Quaternions are stored w-first: ``[w, x, y, z]``, unit norm.
    - All functions broadcast over leading axes, so ``q`` may be shape
      ``(4,)`` or ``(N, 4)`` (same for vectors and matrices).
    - ``quat_log`` returns the rotation vector (axis * angle, radians) of the
      shortest rotation, i.e. it resolves the double cover by flipping to
      w >= 0 first.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-12


def quat_normalize(q):
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    if np.any(norm < _EPS):
        raise ValueError("cannot normalize a near-zero quaternion")
    return q / norm


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_multiply(a, b):
    """Hamilton product a * b (rotation b followed by rotation a)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    w1, x1, y1, z1 = (a[..., i] for i in range(4))
    w2, x2, y2, z2 = (b[..., i] for i in range(4))
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_rotate(q, v):
    """Rotate vector(s) v by quaternion(s) q."""
    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    u = q[..., 1:]
    w = q[..., :1]
    t = 2.0 * np.cross(u, v)
    return v + w * t + np.cross(u, t)


def quat_from_matrix(R):
    """Rotation matrix (…,3,3) to unit quaternion, Shepperd's method.

    Vectorized over leading axes: all four branch candidates are computed
    and the numerically largest pivot is selected per element.
    """
    R = np.asarray(R, dtype=float)
    batch = R.shape[:-2]
    M = R.reshape(-1, 3, 3)

    d0, d1, d2 = M[:, 0, 0], M[:, 1, 1], M[:, 2, 2]
    trace = d0 + d1 + d2
    # pivot arguments; the selected one is always >= 1
    args = np.stack(
        [1.0 + trace, 1.0 + d0 - d1 - d2, 1.0 + d1 - d0 - d2, 1.0 + d2 - d0 - d1],
        axis=-1,
    )
    case = np.argmax(args, axis=-1)
    s = 2.0 * np.sqrt(np.maximum(args[np.arange(len(case)), case], _EPS))

    a = M[:, 2, 1] - M[:, 1, 2]
    b = M[:, 0, 2] - M[:, 2, 0]
    c = M[:, 1, 0] - M[:, 0, 1]
    xy = M[:, 0, 1] + M[:, 1, 0]
    xz = M[:, 0, 2] + M[:, 2, 0]
    yz = M[:, 1, 2] + M[:, 2, 1]

    cand = np.empty((len(case), 4, 4))
    cand[:, 0] = np.stack([0.25 * s, a / s, b / s, c / s], axis=-1)
    cand[:, 1] = np.stack([a / s, 0.25 * s, xy / s, xz / s], axis=-1)
    cand[:, 2] = np.stack([b / s, xy / s, 0.25 * s, yz / s], axis=-1)
    cand[:, 3] = np.stack([c / s, xz / s, yz / s, 0.25 * s], axis=-1)
    q = cand[np.arange(len(case)), case]
    q = quat_normalize(q)
    return q.reshape(batch + (4,))


def quat_to_matrix(q):
    """Unit quaternion (…,4) to rotation matrix (…,3,3)."""
    q = np.asarray(q, dtype=float)
    w, x, y, z = (q[..., i] for i in range(4))
    xx, yy, zz = x * x, y * y, z * z
    wx, wy, wz = w * x, w * y, w * z
    xy, xz, yz = x * y, x * z, y * z
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1.0 - 2.0 * (yy + zz)
    R[..., 0, 1] = 2.0 * (xy - wz)
    R[..., 0, 2] = 2.0 * (xz + wy)
    R[..., 1, 0] = 2.0 * (xy + wz)
    R[..., 1, 1] = 1.0 - 2.0 * (xx + zz)
    R[..., 1, 2] = 2.0 * (yz - wx)
    R[..., 2, 0] = 2.0 * (xz - wy)
    R[..., 2, 1] = 2.0 * (yz + wx)
    R[..., 2, 2] = 1.0 - 2.0 * (xx + yy)
    return R


def quat_log(q):
    """Rotation vector of the shortest rotation represented by q.

    Magnitude is the geodesic angle in [0, pi]; direction is the rotation
    axis. Stable near identity via the small-angle series.
    """
    q = np.asarray(q, dtype=float)
    # shortest arc: q and -q are the same rotation
    flip = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    q = q * flip
    w = np.clip(q[..., 0], -1.0, 1.0)
    v = q[..., 1:]
    vnorm = np.linalg.norm(v, axis=-1)
    angle = 2.0 * np.arctan2(vnorm, w)
    # sin(angle/2) = vnorm; scale = angle / vnorm with series fallback
    small = vnorm < 1e-8
    safe = np.where(small, 1.0, vnorm)
    scale = np.where(small, 2.0, angle / safe)
    return v * scale[..., None]


def quat_from_rotvec(r):
    """Rotation vector (axis*angle) to unit quaternion."""
    r = np.asarray(r, dtype=float)
    angle = np.linalg.norm(r, axis=-1)
    half = 0.5 * angle
    small = angle < 1e-8
    safe = np.where(small, 1.0, angle)
    k = np.where(small, 0.5, np.sin(half) / safe)
    w = np.cos(half)
    return np.concatenate([w[..., None], r * k[..., None]], axis=-1)


def rot_x(theta):
    """Rotation matrices about x for angle array theta; shape (…,3,3)."""
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros(theta.shape + (3, 3))
    R[..., 0, 0] = 1.0
    R[..., 1, 1] = c
    R[..., 1, 2] = -s
    R[..., 2, 1] = s
    R[..., 2, 2] = c
    return R


def rot_y(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros(theta.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 2] = s
    R[..., 1, 1] = 1.0
    R[..., 2, 0] = -s
    R[..., 2, 2] = c
    return R


def rot_z(theta):
    theta = np.asarray(theta, dtype=float)
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros(theta.shape + (3, 3))
    R[..., 0, 0] = c
    R[..., 0, 1] = -s
    R[..., 1, 0] = s
    R[..., 1, 1] = c
    R[..., 2, 2] = 1.0
    return R
