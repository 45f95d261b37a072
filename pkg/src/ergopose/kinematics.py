"""10-DOF seated upper-body kinematic chain.

The model covers torso (3 DOF at the seat), one shoulder (3 DOF), elbow
flexion, forearm pronation and a 2-DOF wrist of the interacting (right)
arm. The pose of the hand grip frame in the robot base frame is the
chain's output.

Frame conventions (declared, used consistently everywhere):
    - Chair seat frame: x forward (facing direction), y left, z up. The
      seat frame sits in the robot base frame via the rigid transform in
      ``SegmentLengths``.
    - Joint order and positive directions::

        0  torso flexion          +: bend forward          rot about +y
        1  torso lateral bend     +: lean right            rot about +x
        2  torso axial rotation   +: turn left             rot about +z
        3  shoulder flexion       +: arm swings forward    rot about -y
        4  shoulder abduction     +: arm away from torso   rot about -x
        5  shoulder int. rotation                          rot about +z
        6  elbow flexion          +: forearm forward       rot about -y
        7  forearm pronation                               rot about +z
        8  wrist flexion                                   rot about -y
        9  wrist radial/ulnar deviation                    rot about -x

    - Segments: +z*torso_length up the spine, -y*shoulder_offset to the
      right shoulder, then -z*upper_arm, -z*forearm and -z*hand along the
      (rotated) limb. At the neutral posture (all zeros, elbow at pi/2)
      the forearm and hand point forward.

All operations are pure; arrays are never mutated in place. Functions
with a ``_batch`` suffix broadcast over a leading particle/sample axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .quatmath import quat_from_matrix, quat_log, quat_multiply, quat_conjugate, rot_x, rot_y, rot_z

N_JOINTS = 10

TORSO_FLEXION = 0
TORSO_LATERAL = 1
TORSO_ROTATION = 2
SHOULDER_FLEXION = 3
SHOULDER_ABDUCTION = 4
SHOULDER_ROTATION = 5
ELBOW_FLEXION = 6
FOREARM_PRONATION = 7
WRIST_FLEXION = 8
WRIST_DEVIATION = 9

JOINT_NAMES = (
    "torso_flexion",
    "torso_lateral",
    "torso_rotation",
    "shoulder_flexion",
    "shoulder_abduction",
    "shoulder_rotation",
    "elbow_flexion",
    "forearm_pronation",
    "wrist_flexion",
    "wrist_deviation",
)

# (rotation constructor, axis sign, local axis unit vector) per joint
_JOINT_ROT = (
    (rot_y, 1.0, np.array([0.0, 1.0, 0.0])),
    (rot_x, 1.0, np.array([1.0, 0.0, 0.0])),
    (rot_z, 1.0, np.array([0.0, 0.0, 1.0])),
    (rot_y, -1.0, np.array([0.0, -1.0, 0.0])),
    (rot_x, -1.0, np.array([-1.0, 0.0, 0.0])),
    (rot_z, 1.0, np.array([0.0, 0.0, 1.0])),
    (rot_y, -1.0, np.array([0.0, -1.0, 0.0])),
    (rot_z, 1.0, np.array([0.0, 0.0, 1.0])),
    (rot_y, -1.0, np.array([0.0, -1.0, 0.0])),
    (rot_x, -1.0, np.array([-1.0, 0.0, 0.0])),
)


@dataclass(frozen=True)
class SegmentLengths:
    """Anthropometric parameters of the chain, meters.

    ``chair_position``/``chair_quat`` place the chair seat frame in the
    robot base frame (quaternion w-first, unit norm).
    """

    torso_length: float = 0.55
    shoulder_offset: float = 0.20
    upper_arm: float = 0.30
    forearm: float = 0.27
    hand: float = 0.10
    chair_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    chair_quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        for name in ("torso_length", "shoulder_offset", "upper_arm", "forearm", "hand"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"segment length {name!r} must be strictly positive")
        object.__setattr__(self, "chair_position", np.asarray(self.chair_position, dtype=float))
        q = np.asarray(self.chair_quat, dtype=float)
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("chair_quat must be unit-norm within 1e-9")
        object.__setattr__(self, "chair_quat", q)


@dataclass(frozen=True)
class JointLimits:
    """Box limits on the 10 joint angles, radians."""

    q_min: np.ndarray
    q_max: np.ndarray

    def __post_init__(self):
        q_min = np.asarray(self.q_min, dtype=float)
        q_max = np.asarray(self.q_max, dtype=float)
        if q_min.shape != (N_JOINTS,) or q_max.shape != (N_JOINTS,):
            raise ValueError("limits must be 10-vectors")
        if not np.all(q_min < q_max):
            raise ValueError("q_min must be elementwise below q_max")
        object.__setattr__(self, "q_min", q_min)
        object.__setattr__(self, "q_max", q_max)

    def contains(self, q, tol: float = 0.0) -> bool:
        q = np.asarray(q, dtype=float)
        return bool(np.all(q >= self.q_min - tol) and np.all(q <= self.q_max + tol))


@dataclass(frozen=True)
class Pose:
    """Position (m) and w-first unit quaternion in the robot base frame."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.position, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        if p.shape != (3,) or q.shape != (4,):
            raise ValueError("Pose needs a 3-vector position and 4-vector quaternion")
        if abs(np.linalg.norm(q) - 1.0) > 1e-9:
            raise ValueError("orientation must be unit-norm within 1e-9")
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)


@dataclass(frozen=True)
class Twist:
    """Linear (m/s) and angular (rad/s) velocity of a frame."""

    linear: np.ndarray
    angular: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=float)
        ang = np.asarray(self.angular, dtype=float)
        if lin.shape != (3,) or ang.shape != (3,):
            raise ValueError("Twist needs 3-vector linear and angular parts")
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(ang))):
            raise ValueError("twist entries must be finite")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "angular", ang)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.linear, self.angular])


@dataclass(frozen=True)
class JointState:
    """Joint angles (rad) and velocities (rad/s)."""

    q: np.ndarray
    qdot: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        qdot = np.asarray(self.qdot, dtype=float)
        if q.shape != (N_JOINTS,) or qdot.shape != (N_JOINTS,):
            raise ValueError("JointState needs 10-vector q and qdot")
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(qdot))):
            raise ValueError("JointState entries must be finite")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "qdot", qdot)


def neutral_posture() -> np.ndarray:
    """All joints zero except elbow flexion at pi/2 (forearm forward)."""
    q = np.zeros(N_JOINTS)
    q[ELBOW_FLEXION] = np.pi / 2.0
    return q


def clamp_to_limits(q, lim: JointLimits) -> np.ndarray:
    """Elementwise clamp into the limit box; idempotent."""
    return np.clip(np.asarray(q, dtype=float), lim.q_min, lim.q_max)


def _segment_translations(psi: SegmentLengths):
    """Fixed translations applied after joints 2, 5, 7 and 9."""
    return {
        2: np.array([0.0, 0.0, psi.torso_length]),
        # shoulder offset rides along with the torso translation
        5: np.array([0.0, 0.0, -psi.upper_arm]),
        7: np.array([0.0, 0.0, -psi.forearm]),
        9: np.array([0.0, 0.0, -psi.hand]),
    }


def _chain_batch(q, psi: SegmentLengths, collect_joints: bool):
    """Walk the chain for a (..., 10) batch of postures.

    Returns (p_ee, R_ee) and, when ``collect_joints``, the per-joint world
    axes and origins needed for the geometric Jacobian, both shaped
    (..., 10, 3).
    """
    q = np.asarray(q, dtype=float)
    batch = q.shape[:-1]

    from .quatmath import quat_to_matrix

    R = np.broadcast_to(quat_to_matrix(psi.chair_quat), batch + (3, 3)).copy()
    p = np.broadcast_to(psi.chair_position, batch + (3,)).copy()

    axes = np.empty(batch + (N_JOINTS, 3)) if collect_joints else None
    origins = np.empty(batch + (N_JOINTS, 3)) if collect_joints else None

    trans = _segment_translations(psi)
    shoulder_shift = np.array([0.0, -psi.shoulder_offset, 0.0])

    for j, (rot_fn, sign, local_axis) in enumerate(_JOINT_ROT):
        if collect_joints:
            axes[..., j, :] = np.einsum("...ij,j->...i", R, local_axis)
            origins[..., j, :] = p
        R = R @ rot_fn(sign * q[..., j])
        if j in trans:
            p = p + np.einsum("...ij,j->...i", R, trans[j])
            if j == 2:
                p = p + np.einsum("...ij,j->...i", R, shoulder_shift)

    return (p, R, axes, origins) if collect_joints else (p, R, None, None)


def fk_batch(q, psi: SegmentLengths):
    """Forward kinematics for a (..., 10) batch: positions and quaternions."""
    p, R, _, _ = _chain_batch(q, psi, collect_joints=False)
    return p, quat_from_matrix(R)


def forward_kinematics(q, psi: SegmentLengths) -> Pose:
    """Pose of the hand grip frame in the robot base frame."""
    q = np.asarray(q, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ValueError("posture must be a 10-vector")
    p, quat = fk_batch(q, psi)
    return Pose(position=p, orientation=quat)


def jacobian_batch(q, psi: SegmentLengths) -> np.ndarray:
    """Geometric Jacobian for a (..., 10) batch; shape (..., 6, 10)."""
    p_ee, _, axes, origins = _chain_batch(q, psi, collect_joints=True)
    lever = p_ee[..., None, :] - origins
    lin = np.cross(axes, lever)
    J = np.concatenate([lin, axes], axis=-1)  # (..., 10, 6)
    return np.swapaxes(J, -1, -2)


def jacobian(q, psi: SegmentLengths) -> np.ndarray:
    """6x10 geometric Jacobian: hand twist (linear over angular) per unit qdot."""
    q = np.asarray(q, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ValueError("posture must be a 10-vector")
    return jacobian_batch(q, psi)


def task_velocity(state: JointState, psi: SegmentLengths) -> Twist:
    """Hand twist induced by the joint velocities: J(q) @ qdot."""
    v = jacobian(state.q, psi) @ state.qdot
    return Twist(linear=v[:3], angular=v[3:])


def motion_update(state: JointState, qddot, dt: float) -> JointState:
    """Constant-velocity update: q += qdot*dt, qdot += qddot*dt.

    No limit clamping here; callers clamp where their contract requires
    it. Two half-steps reproduce one full step exactly on qdot and up to
    the qddot*dt^2/2 remainder on q.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    qddot = np.asarray(qddot, dtype=float)
    if qddot.shape != (N_JOINTS,):
        raise ValueError("qddot must be a 10-vector")
    return JointState(q=state.q + state.qdot * dt, qdot=state.qdot + qddot * dt)


def pose_error(a: Pose, b: Pose) -> np.ndarray:
    """6-vector error from pose a to pose b.

    Position difference (b - a) stacked with the rotation vector of the
    relative rotation, both in the base frame. Zero iff the poses are
    identical (up to the quaternion double cover).
    """
    dp = b.position - a.position
    q_rel = quat_multiply(b.orientation, quat_conjugate(a.orientation))
    return np.concatenate([dp, quat_log(q_rel)])


def pose_error_batch(pos_a, quat_a, pos_b, quat_b) -> np.ndarray:
    """Batched pose_error over leading axes; returns (..., 6)."""
    dp = pos_b - pos_a
    q_rel = quat_multiply(quat_b, quat_conjugate(quat_a))
    return np.concatenate([dp, quat_log(q_rel)], axis=-1)
