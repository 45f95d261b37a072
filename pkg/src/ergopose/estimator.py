"""Posture estimation from interaction-point observations only.

Three estimators share the observation model (hand pose + twist of the
10-DOF chain):

- a particle filter over joint positions and velocities, initialized
  from a truncated normal around the neutral posture with zero initial
  velocities;
- a per-step bounded least-squares IK baseline warm-started from the
  previous step (``online_ik``);
- a whole-trajectory least-squares refinement with a motion-model
  smoothness term, initialized from the online baseline
  (``offline_traj_ik``).

Joint-space closeness to the true posture is not guaranteed by the
observation alone — the chain is redundant — so accuracy targets are
checked against simulator ground truth where the motion is generated by
the same family of minimum-norm velocities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares
from scipy.sparse import lil_matrix

from .kinematics import (
    N_JOINTS,
    JointLimits,
    JointState,
    Pose,
    SegmentLengths,
    Twist,
    clamp_to_limits,
    fk_batch,
    forward_kinematics,
    jacobian,
    jacobian_batch,
    neutral_posture,
    pose_error,
    pose_error_batch,
)


@dataclass(frozen=True)
class Observation:
    pose: Pose
    twist: Twist
    time: float


@dataclass(frozen=True)
class EstimatorConfig:
    num_particles: int = 500
    init_std: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, 0.15))
    process_accel_std: np.ndarray = field(default_factory=lambda: np.full(N_JOINTS, 0.6))
    # observation weights (diagonal): position m, orientation rad
    obs_std: np.ndarray = field(default_factory=lambda: np.array([0.005] * 3 + [0.01] * 3))
    vel_obs_std: np.ndarray = field(default_factory=lambda: np.array([0.02] * 3 + [0.02] * 3))
    ess_resample_fraction: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("init_std", "process_accel_std", "obs_std", "vel_obs_std"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(arr > 0):
                raise ValueError(f"{name} entries must be positive")
            object.__setattr__(self, name, arr)
        if not 0.0 < self.ess_resample_fraction <= 1.0:
            raise ValueError("ess_resample_fraction must be in (0, 1]")
        if self.num_particles < 1:
            raise ValueError("need at least one particle")


@dataclass(frozen=True)
class ParticleSet:
    """Weighted joint-state hypotheses; log-weights normalized."""

    q: np.ndarray  # (M, 10)
    qdot: np.ndarray  # (M, 10)
    log_weights: np.ndarray  # (M,)
    reinitialized: bool = False  # set when an update hit weight underflow

    def __len__(self) -> int:
        return len(self.q)

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    @property
    def ess(self) -> float:
        w = self.weights
        return float(1.0 / np.sum(w * w))


@dataclass(frozen=True)
class PostureTrajectory:
    times: np.ndarray  # (T,)
    q: np.ndarray  # (T, 10)
    qdot: np.ndarray  # (T, 10)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if len(t) and np.any(np.diff(t) <= 0):
            raise ValueError("timestamps must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qdot", np.asarray(self.qdot, dtype=float))

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> JointState:
        return JointState(q=self.q[i], qdot=self.qdot[i])


def _normalize_log_weights(log_w: np.ndarray) -> np.ndarray | None:
    """Log-sum-exp normalization; None signals total underflow."""
    finite = np.isfinite(log_w)
    if not np.any(finite):
        return None
    m = np.max(log_w[finite])
    lse = m + np.log(np.sum(np.exp(np.where(finite, log_w, -np.inf) - m)))
    if not np.isfinite(lse):
        return None
    return np.where(finite, log_w - lse, -np.inf)


def _truncated_normal(rng, mean, std, lim: JointLimits, size: int) -> np.ndarray:
    """Per-joint normal draws rejected against the limit box."""
    out = np.empty((size, N_JOINTS))
    filled = 0
    while filled < size:
        draw = rng.normal(mean, std, size=(size - filled, N_JOINTS))
        ok = np.all((draw >= lim.q_min) & (draw <= lim.q_max), axis=1)
        kept = draw[ok]
        out[filled : filled + len(kept)] = kept
        filled += len(kept)
    return out


def init_particles(cfg: EstimatorConfig, lim: JointLimits,
                   rng: np.random.Generator) -> ParticleSet:
    """Truncated normal around the neutral posture; zero initial velocities."""
    q = _truncated_normal(rng, neutral_posture(), cfg.init_std, lim, cfg.num_particles)
    log_w = np.full(cfg.num_particles, -np.log(cfg.num_particles))
    return ParticleSet(q=q, qdot=np.zeros_like(q), log_weights=log_w)


def predict(particles: ParticleSet, dt: float, cfg: EstimatorConfig,
            lim: JointLimits, rng: np.random.Generator) -> ParticleSet:
    """Constant-velocity propagation with i.i.d. acceleration noise.

    Joints clamped to limits get their velocity zeroed so particles do
    not pin against the box.
    """
    if not dt > 0.0:
        raise ValueError("dt must be positive")
    qddot = rng.normal(0.0, cfg.process_accel_std, size=particles.q.shape)
    q_new = particles.q + particles.qdot * dt
    qdot_new = particles.qdot + qddot * dt
    q_clamped = np.clip(q_new, lim.q_min, lim.q_max)
    hit = q_clamped != q_new
    qdot_new = np.where(hit, 0.0, qdot_new)
    return ParticleSet(q=q_clamped, qdot=qdot_new, log_weights=particles.log_weights)


def _log_likelihood(particles: ParticleSet, obs: Observation,
                    psi: SegmentLengths, cfg: EstimatorConfig) -> np.ndarray:
    pos, quat = fk_batch(particles.q, psi)
    err_pose = pose_error_batch(
        pos, quat,
        np.broadcast_to(obs.pose.position, pos.shape),
        np.broadcast_to(obs.pose.orientation, quat.shape),
    )
    J = jacobian_batch(particles.q, psi)
    twist = np.einsum("mij,mj->mi", J, particles.qdot)
    err_twist = obs.twist.as_vector() - twist
    with np.errstate(over="ignore"):  # -inf log-likelihood is handled downstream
        ll = -0.5 * np.sum((err_pose / cfg.obs_std) ** 2, axis=1)
        ll -= 0.5 * np.sum((err_twist / cfg.vel_obs_std) ** 2, axis=1)
    return ll


def update_weights(particles: ParticleSet, obs: Observation, psi: SegmentLengths,
                   cfg: EstimatorConfig, lim: JointLimits | None = None,
                   rng: np.random.Generator | None = None) -> ParticleSet:
    """Reweight by the Gaussian observation likelihood and renormalize.

    On total weight underflow the set is re-seeded around the particle
    with the least-bad likelihood (requires ``lim`` and ``rng``;
    otherwise weights reset to uniform) and flagged ``reinitialized``.
    """
    ll = _log_likelihood(particles, obs, psi, cfg)
    log_w = _normalize_log_weights(particles.log_weights + ll)
    if log_w is not None:
        return ParticleSet(q=particles.q, qdot=particles.qdot, log_weights=log_w)

    finite = np.isfinite(ll)
    best = int(np.argmax(np.where(finite, ll, -np.inf))) if np.any(finite) else 0
    uniform = np.full(len(particles), -np.log(len(particles)))
    if lim is None or rng is None:
        return ParticleSet(q=particles.q, qdot=particles.qdot,
                           log_weights=uniform, reinitialized=True)
    q = _truncated_normal(rng, particles.q[best], cfg.init_std / 2.0, lim, len(particles))
    return ParticleSet(q=q, qdot=np.zeros_like(q), log_weights=uniform, reinitialized=True)


def resample(particles: ParticleSet, cfg: EstimatorConfig,
             rng: np.random.Generator) -> ParticleSet:
    """Systematic resampling, triggered when ESS drops below the fraction."""
    m = len(particles)
    if particles.ess >= cfg.ess_resample_fraction * m:
        return particles
    w = particles.weights
    positions = (np.arange(m) + rng.uniform()) / m
    idx = np.searchsorted(np.cumsum(w), positions)
    idx = np.clip(idx, 0, m - 1)
    return ParticleSet(
        q=particles.q[idx].copy(),
        qdot=particles.qdot[idx].copy(),
        log_weights=np.full(m, -np.log(m)),
    )


def estimate(particles: ParticleSet, lim: JointLimits) -> JointState:
    """Weight-weighted mean state, clamped into the limit box."""
    w = particles.weights[:, None]
    q = np.sum(w * particles.q, axis=0)
    qdot = np.sum(w * particles.qdot, axis=0)
    return JointState(q=clamp_to_limits(q, lim), qdot=qdot)


def run_filter(observations, cfg: EstimatorConfig, psi: SegmentLengths,
               lim: JointLimits, return_diagnostics: bool = False):
    """Init / predict / update / resample / estimate over an observation stream."""
    observations = list(observations)
    if not observations:
        raise ValueError("need at least one observation")
    rng = np.random.default_rng(cfg.seed)
    particles = init_particles(cfg, lim, rng)

    times, qs, qdots = [], [], []
    n_reinit = 0
    prev_t = None
    for obs in observations:
        if prev_t is not None:
            dt = obs.time - prev_t
            if dt <= 0:
                raise ValueError("observation timestamps must be increasing")
            particles = predict(particles, dt, cfg, lim, rng)
        particles = update_weights(particles, obs, psi, cfg, lim, rng)
        n_reinit += int(particles.reinitialized)
        particles = resample(particles, cfg, rng)
        state = estimate(particles, lim)
        times.append(obs.time)
        qs.append(state.q)
        qdots.append(state.qdot)
        prev_t = obs.time

    traj = PostureTrajectory(times=np.array(times), q=np.array(qs), qdot=np.array(qdots))
    if return_diagnostics:
        return traj, {"weight_underflows": n_reinit, "num_particles": cfg.num_particles}
    return traj


# ---------------------------------------------------------------------------
# Deterministic IK baselines.

_IK_PROX_WEIGHT = 1e-3  # keeps the 6x10 step problem full rank, near warm start
_IK_DAMPING = 0.05


def _damped_pinv_solve(J: np.ndarray, x: np.ndarray, damping: float) -> np.ndarray:
    JJt = J @ J.T + (damping ** 2) * np.eye(J.shape[0])
    return J.T @ np.linalg.solve(JJt, x)


def online_ik(observations, psi: SegmentLengths, lim: JointLimits,
              return_status: bool = False):
    """Per-step bounded least-squares IK, warm-started from the last solve.

    The first step starts at the neutral posture. Velocities come from a
    damped pseudoinverse of the step Jacobian applied to the observed
    twist. Steps whose solver fails keep the previous estimate.
    """
    observations = list(observations)
    if not observations:
        raise ValueError("need at least one observation")

    warm = neutral_posture()
    times, qs, qdots, flagged = [], [], [], []
    for obs in observations:
        target = obs.pose

        def residual(q, _target=target, _warm=warm):
            err = pose_error(forward_kinematics(q, psi), _target)
            return np.concatenate([err, np.sqrt(_IK_PROX_WEIGHT) * (q - _warm)])

        sol = least_squares(residual, warm, bounds=(lim.q_min, lim.q_max), method="dogbox")
        ok = sol.success and np.all(np.isfinite(sol.x))
        q = clamp_to_limits(sol.x, lim) if ok else warm
        flagged.append(not ok)
        J = jacobian(q, psi)
        qdot = _damped_pinv_solve(J, obs.twist.as_vector(), _IK_DAMPING)
        times.append(obs.time)
        qs.append(q)
        qdots.append(qdot)
        warm = q

    traj = PostureTrajectory(times=np.array(times), q=np.array(qs), qdot=np.array(qdots))
    if return_status:
        return traj, {"failed_steps": int(np.sum(flagged))}
    return traj


def _offline_residuals(flat_q, observations, psi, cfg, dt_list):
    T = len(observations)
    Q = flat_q.reshape(T, N_JOINTS)
    pos, quat = fk_batch(Q, psi)
    obs_pos = np.array([o.pose.position for o in observations])
    obs_quat = np.array([o.pose.orientation for o in observations])
    r_pose = pose_error_batch(pos, quat, obs_pos, obs_quat) / cfg.obs_std

    parts = [r_pose.ravel()]
    if T > 1:
        J = jacobian_batch(Q[1:], psi)
        qdot = (Q[1:] - Q[:-1]) / dt_list[:, None]
        twist = np.einsum("tij,tj->ti", J, qdot)
        obs_twist = np.array([o.twist.as_vector() for o in observations[1:]])
        parts.append(((obs_twist - twist) / cfg.vel_obs_std).ravel())
    if T > 2:
        dt2 = dt_list[1:, None] * dt_list[:-1, None]
        accel = (Q[2:] - 2.0 * Q[1:-1] + Q[:-2]) / dt2
        parts.append((accel / cfg.process_accel_std).ravel())
    return np.concatenate(parts)


def _offline_sparsity(T: int) -> lil_matrix:
    n = T * N_JOINTS
    m = 6 * T + (6 * (T - 1) if T > 1 else 0) + (N_JOINTS * (T - 2) if T > 2 else 0)
    S = lil_matrix((m, n), dtype=bool)
    for t in range(T):
        S[6 * t : 6 * (t + 1), N_JOINTS * t : N_JOINTS * (t + 1)] = True
    off = 6 * T
    for t in range(1, T):
        row = off + 6 * (t - 1)
        S[row : row + 6, N_JOINTS * (t - 1) : N_JOINTS * (t + 1)] = True
    off += 6 * (T - 1) if T > 1 else 0
    for t in range(1, T - 1):
        row = off + N_JOINTS * (t - 1)
        for j in range(N_JOINTS):
            S[row + j, N_JOINTS * (t - 1) + j] = True
            S[row + j, N_JOINTS * t + j] = True
            S[row + j, N_JOINTS * (t + 1) + j] = True
    return S


def offline_traj_ik(observations, psi: SegmentLengths, lim: JointLimits,
                    cfg: EstimatorConfig | None = None,
                    return_status: bool = False):
    """Whole-trajectory least squares with a motion-model smoothness term.

    Initialized from :func:`online_ik`. The observation residuals are
    weighted by the estimator's observation stds and the motion-model
    residual by the process acceleration std.
    """
    observations = list(observations)
    if cfg is None:
        cfg = EstimatorConfig()
    init = online_ik(observations, psi, lim)
    T = len(observations)
    dt_list = np.diff([o.time for o in observations])

    sol = least_squares(
        _offline_residuals,
        init.q.ravel(),
        args=(observations, psi, cfg, dt_list),
        bounds=(np.tile(lim.q_min, T), np.tile(lim.q_max, T)),
        method="trf",
        jac_sparsity=_offline_sparsity(T),
        max_nfev=60,
    )
    ok = np.all(np.isfinite(sol.x))
    Q = sol.x.reshape(T, N_JOINTS) if ok else init.q
    Q = np.clip(Q, lim.q_min, lim.q_max)
    qdot = np.zeros_like(Q)
    if T > 1:
        qdot[1:] = (Q[1:] - Q[:-1]) / dt_list[:, None]
        qdot[0] = qdot[1]
    traj = PostureTrajectory(times=init.times, q=Q, qdot=qdot)
    if return_status:
        return traj, {"solver_success": bool(sol.success), "cost": float(sol.cost)}
    return traj


# ---------------------------------------------------------------------------
# Metrics and CSV interfaces.


@dataclass(frozen=True)
class DeviationMetrics:
    median: np.ndarray  # (10,) radians
    lower_quartile: np.ndarray
    upper_quartile: np.ndarray

    def table(self) -> str:
        from .kinematics import JOINT_NAMES

        lines = [f"{'joint':<20} {'median':>8} {'q1':>8} {'q3':>8}"]
        for i, name in enumerate(JOINT_NAMES):
            lines.append(
                f"{name:<20} {self.median[i]:8.4f} {self.lower_quartile[i]:8.4f} "
                f"{self.upper_quartile[i]:8.4f}"
            )
        return "\n".join(lines)


def deviation_metrics(est: PostureTrajectory, truth: PostureTrajectory) -> DeviationMetrics:
    """Per-joint absolute deviation quartiles between aligned trajectories."""
    if len(est) != len(truth) or not np.allclose(est.times, truth.times, atol=1e-9):
        raise ValueError("trajectories are not aligned in time")
    dev = np.abs(est.q - truth.q)
    q1, med, q3 = np.percentile(dev, [25, 50, 75], axis=0)
    return DeviationMetrics(median=med, lower_quartile=q1, upper_quartile=q3)


OBSERVATION_COLUMNS = ["t", "px", "py", "pz", "qw", "qx", "qy", "qz",
                       "vx", "vy", "vz", "wx", "wy", "wz"]
TRAJECTORY_COLUMNS = (["t"] + [f"q_{i}" for i in range(N_JOINTS)]
                      + [f"qdot_{i}" for i in range(N_JOINTS)])


def write_observations_csv(observations, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(OBSERVATION_COLUMNS)
        for o in observations:
            row = [o.time, *o.pose.position, *o.pose.orientation,
                   *o.twist.linear, *o.twist.angular]
            writer.writerow([f"{v:.17g}" for v in row])


def read_observations_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != OBSERVATION_COLUMNS:
            raise ValueError("unexpected observation CSV columns")
        out = []
        for parts in reader:
            vals = [float(p) for p in parts]
            out.append(
                Observation(
                    pose=Pose(position=np.array(vals[1:4]), orientation=np.array(vals[4:8])),
                    twist=Twist(linear=np.array(vals[8:11]), angular=np.array(vals[11:14])),
                    time=vals[0],
                )
            )
    return out


def write_trajectory_csv(traj: PostureTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRAJECTORY_COLUMNS)
        for i in range(len(traj)):
            row = [traj.times[i], *traj.q[i], *traj.qdot[i]]
            writer.writerow([f"{v:.17g}" for v in row])


def read_trajectory_csv(path) -> PostureTrajectory:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != TRAJECTORY_COLUMNS:
            raise ValueError("unexpected trajectory CSV columns")
        rows = [[float(p) for p in parts] for parts in reader]
    arr = np.array(rows)
    return PostureTrajectory(times=arr[:, 0], q=arr[:, 1:11], qdot=arr[:, 11:21])
