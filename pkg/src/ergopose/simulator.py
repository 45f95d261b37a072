"""Deterministic teleoperation simulation with a simulated human.

The loop couples a leader robot (held by the simulated human's hand, so
the leader pose is the chain's forward kinematics) to a follower robot
through a clutch-gated, scale-k motion coupling. The simulated human
greedily tracks the follower goal and, when a postural correction q* is
suggested, blends a correction velocity with the task velocity::

    qdot = (1 - alpha) * qdot_task + alpha * correction_rate * (q* - q)

alpha in [0, 1] is the correction acceptance: 0 ignores suggestions
entirely, 1 abandons task progress while correcting. The blended
velocity is capped, integrated with the constant-velocity motion model
and clamped to limits.

Every episode also steps a shadow human that never receives corrections
(its own follower included); its risk trace is the deterministic twin of
a correction-free run with the same seed and provides the "uncorrected"
column of the episode log.
"""

from __future__ import annotations

import csv
import json
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .estimator import Observation
from .kinematics import (
    N_JOINTS,
    JointLimits,
    JointState,
    Pose,
    SegmentLengths,
    Twist,
    clamp_to_limits,
    forward_kinematics,
    jacobian,
    motion_update,
    neutral_posture,
    pose_error,
)
from .optimizer import (
    CemConfig,
    InfeasibleProblemError,
    OnlineProblem,
    _pose_violation,
    _project_to_pose,
    dula_objective,
    rula_objective,
    solve_online_cem,
    solve_online_gradient,
)
from .quatmath import quat_conjugate, quat_from_rotvec, quat_multiply, quat_normalize
from .rula import TaskContext, _ctx_to_arrays, _score_arrays, LoadCategory

CORRECTION_SOURCES = ("none", "cem", "gradient")

_TASK_TRACKING_GAIN = 4.0  # 1/s, proportional pull toward the hand target
_HAND_SPEED_CAP = 0.15  # m/s
_HAND_ANGULAR_CAP = 1.2  # rad/s
_CORRECTION_RATE = 3.0  # 1/s toward q*
_STEP_DAMPING = 0.05


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.05
    alpha: float = 0.0  # correction acceptance in [0, 1]
    motion_scale: float = 1.0  # leader-to-follower scale k
    goal_tolerance: float = 0.01  # m
    horizon: int = 400  # step cap
    human_speed_cap: float = 1.5  # rad/s per joint
    seed: int = 0
    correction_period: int = 10  # optimizer invoked every this many steps

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if self.motion_scale <= 0 or self.goal_tolerance <= 0 or self.horizon < 1:
            raise ValueError("motion_scale, goal_tolerance and horizon must be positive")


@dataclass(frozen=True)
class TeleopTask:
    """Follower goal (plus optional intermediate waypoints) and task context."""

    follower_goal: Pose
    waypoints: tuple = ()
    ctx: TaskContext = field(default_factory=TaskContext)

    def targets(self):
        return tuple(self.waypoints) + (self.follower_goal,)


def couple_leader_follower(leader_pose_delta, k: float, clutch_engaged: bool):
    """Map a leader pose delta (dp, dq) to the follower's delta.

    Engaged: translation scaled by k, rotation passed through. With the
    clutch open the follower freezes (zero delta) while the leader moves
    freely, so the follower's relative path over engaged segments is
    unchanged by pauses.
    """
    dp, dq = leader_pose_delta
    dp = np.asarray(dp, dtype=float)
    dq = np.asarray(dq, dtype=float)
    if clutch_engaged:
        return k * dp, dq.copy()
    return np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0])


def step_human(state: JointState, hand_target: Pose, q_star, cfg: SimConfig,
               psi: SegmentLengths, lim: JointLimits) -> JointState:
    """One greedy re-planning step of the simulated human.

    The task velocity pulls the hand toward ``hand_target`` through a
    damped pseudoinverse; the correction velocity pulls the joints toward
    ``q_star`` (None disables it). The blend is speed-capped uniformly so
    its direction is preserved.
    """
    err = pose_error(forward_kinematics(state.q, psi), hand_target)
    twist = _TASK_TRACKING_GAIN * err
    lin_speed = np.linalg.norm(twist[:3])
    if lin_speed > _HAND_SPEED_CAP:
        twist[:3] *= _HAND_SPEED_CAP / lin_speed
    ang_speed = np.linalg.norm(twist[3:])
    if ang_speed > _HAND_ANGULAR_CAP:
        twist[3:] *= _HAND_ANGULAR_CAP / ang_speed

    J = jacobian(state.q, psi)
    JJt = J @ J.T + (_STEP_DAMPING ** 2) * np.eye(6)
    qdot_task = J.T @ np.linalg.solve(JJt, twist)

    if q_star is None:
        qdot = qdot_task
    else:
        qdot_corr = _CORRECTION_RATE * (np.asarray(q_star, dtype=float) - state.q)
        qdot = (1.0 - cfg.alpha) * qdot_task + cfg.alpha * qdot_corr

    peak = np.max(np.abs(qdot))
    if peak > cfg.human_speed_cap:
        qdot = qdot * (cfg.human_speed_cap / peak)

    moved = motion_update(JointState(q=state.q, qdot=qdot), np.zeros(N_JOINTS), cfg.dt)
    q_new = clamp_to_limits(moved.q, lim)
    qdot_new = np.where(q_new != moved.q, 0.0, moved.qdot)
    return JointState(q=q_new, qdot=qdot_new)


@dataclass
class EpisodeLog:
    """Per-step record arrays of one simulated episode."""

    times: np.ndarray
    q: np.ndarray  # corrected (actual) human posture, ground truth
    qdot: np.ndarray
    interaction_pos: np.ndarray
    interaction_quat: np.ndarray
    interaction_twist: np.ndarray  # (T, 6)
    follower_pos: np.ndarray
    follower_quat: np.ndarray
    q_star: np.ndarray  # NaN rows while no suggestion is active
    rula_uncorrected: np.ndarray
    rula_corrected: np.ndarray
    rula_optimal: np.ndarray  # NaN while no suggestion is active
    clutch: np.ndarray  # bool
    converged: bool
    steps_to_goal: int  # corrected human's completion step (or -1)
    shadow_steps: int  # uncorrected twin's completion step (or -1)
    correction_source: str
    alpha: float
    solve_seconds: tuple = ()

    def __len__(self) -> int:
        return len(self.times)

    def summary(self) -> dict:
        active = len(self) if self.steps_to_goal < 0 else self.steps_to_goal + 1
        shadow_active = len(self) if self.shadow_steps < 0 else self.shadow_steps + 1
        out = {
            "converged": self.converged,
            "steps_to_goal": self.steps_to_goal,
            "shadow_steps_to_goal": self.shadow_steps,
            "mean_rula_corrected": float(np.mean(self.rula_corrected[:active])),
            "max_rula_corrected": float(np.max(self.rula_corrected[:active])),
            "mean_rula_uncorrected": float(np.mean(self.rula_uncorrected[:shadow_active])),
            "max_rula_uncorrected": float(np.max(self.rula_uncorrected[:shadow_active])),
        }
        finite_opt = self.rula_optimal[np.isfinite(self.rula_optimal)]
        out["mean_rula_optimal"] = float(np.mean(finite_opt)) if len(finite_opt) else float("nan")
        out["n_solves"] = len(self.solve_seconds)
        out["mean_solve_seconds"] = (
            float(np.mean(self.solve_seconds)) if self.solve_seconds else 0.0
        )
        return out


class _HumanSystem:
    """One human + follower pair stepped through the coupling."""

    def __init__(self, psi, lim, cfg, follower_home: Pose):
        self.psi, self.lim, self.cfg = psi, lim, cfg
        self.state = JointState(q=neutral_posture(), qdot=np.zeros(N_JOINTS))
        self.leader_pose = forward_kinematics(self.state.q, psi)
        self.follower_pose = follower_home
        self.goal_index = 0
        self.done_step = -1

    def hand_target(self, targets) -> Pose:
        goal = targets[min(self.goal_index, len(targets) - 1)]
        dp = (goal.position - self.follower_pose.position) / self.cfg.motion_scale
        rel = quat_multiply(goal.orientation, quat_conjugate(self.follower_pose.orientation))
        return Pose(position=self.leader_pose.position + dp,
                    orientation=quat_normalize(quat_multiply(rel, self.leader_pose.orientation)))

    def advance(self, q_star, targets, step_index):
        self.state = step_human(self.state, self.hand_target(targets), q_star,
                                self.cfg, self.psi, self.lim)
        new_leader = forward_kinematics(self.state.q, self.psi)
        dp = new_leader.position - self.leader_pose.position
        dq = quat_multiply(new_leader.orientation, quat_conjugate(self.leader_pose.orientation))
        f_dp, f_dq = couple_leader_follower((dp, dq), self.cfg.motion_scale, True)
        self.follower_pose = Pose(
            position=self.follower_pose.position + f_dp,
            orientation=quat_normalize(quat_multiply(f_dq, self.follower_pose.orientation)),
        )
        self.leader_pose = new_leader

        goal = targets[min(self.goal_index, len(targets) - 1)]
        if np.linalg.norm(self.follower_pose.position - goal.position) <= self.cfg.goal_tolerance:
            if self.goal_index < len(targets) - 1:
                self.goal_index += 1
            elif self.done_step < 0:
                self.done_step = step_index

    @property
    def converged(self) -> bool:
        return self.done_step >= 0


def _grand_score(q, ctx) -> int:
    return int(_score_arrays(np.asarray(q, dtype=float)[None, :], _ctx_to_arrays(ctx))["grand"][0])


def check_task_reachable(task: TeleopTask, cfg: SimConfig, psi: SegmentLengths,
                         lim: JointLimits) -> None:
    """Reject tasks whose required leader poses the chain cannot reach."""
    home = forward_kinematics(neutral_posture(), psi)
    follower = home
    for target in task.targets():
        dp = (target.position - follower.position) / cfg.motion_scale
        rel = quat_multiply(target.orientation, quat_conjugate(follower.orientation))
        leader_target = Pose(position=home.position + dp,
                             orientation=quat_normalize(quat_multiply(rel, home.orientation)))
        q = _project_to_pose(neutral_posture()[None, :], leader_target, psi, lim, iters=40)
        v = _pose_violation(q, leader_target, psi, cfg.goal_tolerance, 0.2)[0]
        if v > 1.0:
            raise ValueError(
                f"task target {target.position} is unreachable for the human "
                f"(reach violation {v:.2f}x tolerance)"
            )
        follower = target


def run_episode(task: TeleopTask, cfg: SimConfig, correction_source: str = "none",
                model=None, psi: SegmentLengths | None = None,
                lim: JointLimits | None = None,
                cem_config: CemConfig | None = None) -> EpisodeLog:
    """Simulate one teleoperation episode; fully deterministic given cfg.

    The optimizer (if any) re-solves the online problem every
    ``cfg.correction_period`` steps: CEM over the raw worksheet score, or
    the gradient solver over the differentiable surrogate (``model``
    required). The log carries the corrected trace, its uncorrected
    shadow twin and the suggested-optimal trace.
    """
    if correction_source not in CORRECTION_SOURCES:
        raise ValueError(f"correction_source must be one of {CORRECTION_SOURCES}")
    if correction_source == "gradient" and model is None:
        raise ValueError("gradient correction needs a trained surrogate model")
    if psi is None or lim is None:
        from .config import default_limits, default_segments

        psi = psi if psi is not None else default_segments()
        lim = lim if lim is not None else default_limits()
    check_task_reachable(task, cfg, psi, lim)
    if cem_config is None:
        cem_config = CemConfig(samples=1500, iterations=8, seed=cfg.seed)

    follower_home = forward_kinematics(neutral_posture(), psi)
    human = _HumanSystem(psi, lim, cfg, follower_home)
    shadow_cfg = SimConfig(dt=cfg.dt, alpha=0.0, motion_scale=cfg.motion_scale,
                           goal_tolerance=cfg.goal_tolerance, horizon=cfg.horizon,
                           human_speed_cap=cfg.human_speed_cap, seed=cfg.seed,
                           correction_period=cfg.correction_period)
    shadow = _HumanSystem(psi, lim, shadow_cfg, follower_home)

    if correction_source == "gradient":
        objective = dula_objective(model, task.ctx)
    elif correction_source == "cem":
        objective = rula_objective(task.ctx)
    else:
        objective = None

    targets = task.targets()
    q_star = None
    rows = {name: [] for name in (
        "t", "q", "qdot", "ip", "iq", "tw", "fp", "fq", "qs", "ru", "rc", "ro", "cl")}
    solve_seconds = []

    for step in range(cfg.horizon):
        if objective is not None and step % cfg.correction_period == 0 and not human.converged:
            leader = human.leader_pose
            twist_vec = jacobian(human.state.q, psi) @ human.state.qdot
            obs = Observation(pose=leader,
                              twist=Twist(linear=twist_vec[:3], angular=twist_vec[3:]),
                              time=step * cfg.dt)
            problem = OnlineProblem(q_current=human.state, z_current=obs, psi=psi, limits=lim)
            try:
                if correction_source == "gradient":
                    result = solve_online_gradient(problem, objective, warm_start=q_star,
                                                   extra_starts=True)
                else:
                    result = solve_online_cem(problem, objective, cem_config)
                q_star = result.q
                solve_seconds.append(result.solve_seconds)
            except InfeasibleProblemError:
                q_star = None

        human.advance(q_star if cfg.alpha > 0 else None, targets, step)
        if not shadow.converged:
            shadow.advance(None, targets, step)

        twist_vec = jacobian(human.state.q, psi) @ human.state.qdot
        rows["t"].append((step + 1) * cfg.dt)
        rows["q"].append(human.state.q)
        rows["qdot"].append(human.state.qdot)
        rows["ip"].append(human.leader_pose.position)
        rows["iq"].append(human.leader_pose.orientation)
        rows["tw"].append(twist_vec)
        rows["fp"].append(human.follower_pose.position)
        rows["fq"].append(human.follower_pose.orientation)
        rows["qs"].append(q_star if q_star is not None else np.full(N_JOINTS, np.nan))
        rows["ru"].append(_grand_score(shadow.state.q, task.ctx))
        rows["rc"].append(_grand_score(human.state.q, task.ctx))
        rows["ro"].append(_grand_score(q_star, task.ctx) if q_star is not None else np.nan)
        rows["cl"].append(True)

        if human.converged and shadow.converged:
            break

    return EpisodeLog(
        times=np.array(rows["t"]),
        q=np.array(rows["q"]),
        qdot=np.array(rows["qdot"]),
        interaction_pos=np.array(rows["ip"]),
        interaction_quat=np.array(rows["iq"]),
        interaction_twist=np.array(rows["tw"]),
        follower_pos=np.array(rows["fp"]),
        follower_quat=np.array(rows["fq"]),
        q_star=np.array(rows["qs"]),
        rula_uncorrected=np.array(rows["ru"], dtype=float),
        rula_corrected=np.array(rows["rc"], dtype=float),
        rula_optimal=np.array(rows["ro"], dtype=float),
        clutch=np.array(rows["cl"], dtype=bool),
        converged=human.converged,
        steps_to_goal=human.done_step,
        shadow_steps=shadow.done_step,
        correction_source=correction_source,
        alpha=cfg.alpha,
        solve_seconds=tuple(solve_seconds),
    )


def generate_ground_truth(task: TeleopTask, cfg: SimConfig,
                          psi: SegmentLengths | None = None,
                          lim: JointLimits | None = None,
                          noise_pos: float = 0.002, noise_rot: float = 0.005,
                          noise_vel: float = 0.002, noise_angvel: float = 0.005,
                          noise_seed: int | None = None):
    """Correction-free episode plus its (optionally noisy) observation stream.

    With all noise magnitudes zero the observations equal the logged
    interaction poses and twists exactly.
    """
    log = run_episode(task, cfg, correction_source="none", psi=psi, lim=lim)
    rng = np.random.default_rng(cfg.seed + 1 if noise_seed is None else noise_seed)
    observations = []
    for i in range(len(log)):
        pos = log.interaction_pos[i].copy()
        quat = log.interaction_quat[i].copy()
        twist = log.interaction_twist[i].copy()
        if noise_pos > 0:
            pos = pos + rng.normal(0.0, noise_pos, 3)
        if noise_rot > 0:
            dq = quat_from_rotvec(rng.normal(0.0, noise_rot, 3))
            quat = quat_normalize(quat_multiply(dq, quat))
        if noise_vel > 0:
            twist[:3] = twist[:3] + rng.normal(0.0, noise_vel, 3)
        if noise_angvel > 0:
            twist[3:] = twist[3:] + rng.normal(0.0, noise_angvel, 3)
        observations.append(
            Observation(pose=Pose(position=pos, orientation=quat),
                        twist=Twist(linear=twist[:3], angular=twist[3:]),
                        time=log.times[i])
        )
    return log, observations


# ---------------------------------------------------------------------------
# File interfaces: episode log CSV and task definition JSON.

EPISODE_COLUMNS = (
    ["t"]
    + [f"q_{i}" for i in range(N_JOINTS)]
    + [f"qdot_{i}" for i in range(N_JOINTS)]
    + ["ip_px", "ip_py", "ip_pz", "ip_qw", "ip_qx", "ip_qy", "ip_qz"]
    + ["ip_vx", "ip_vy", "ip_vz", "ip_wx", "ip_wy", "ip_wz"]
    + ["f_px", "f_py", "f_pz", "f_qw", "f_qx", "f_qy", "f_qz"]
    + [f"qstar_{i}" for i in range(N_JOINTS)]
    + ["rula_uncorrected", "rula_corrected", "rula_optimal", "clutch"]
)


def write_episode_csv(log: EpisodeLog, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EPISODE_COLUMNS)
        for i in range(len(log)):
            row = (
                [log.times[i]]
                + list(log.q[i]) + list(log.qdot[i])
                + list(log.interaction_pos[i]) + list(log.interaction_quat[i])
                + list(log.interaction_twist[i])
                + list(log.follower_pos[i]) + list(log.follower_quat[i])
                + list(log.q_star[i])
                + [log.rula_uncorrected[i], log.rula_corrected[i], log.rula_optimal[i]]
                + [int(log.clutch[i])]
            )
            writer.writerow([f"{v:.17g}" if isinstance(v, float) or isinstance(v, np.floating)
                             else str(v) for v in row])


def read_episode_csv(path) -> dict:
    """Episode CSV back as column arrays (named per EPISODE_COLUMNS)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != EPISODE_COLUMNS:
            raise ValueError("unexpected episode CSV columns")
        rows = [[float(p) for p in parts] for parts in reader]
    arr = np.array(rows)
    return {name: arr[:, i] for i, name in enumerate(EPISODE_COLUMNS)}


def _pose_to_json(pose: Pose) -> dict:
    return {"position": list(map(float, pose.position)),
            "quaternion": list(map(float, pose.orientation))}


def _pose_from_json(d: dict) -> Pose:
    return Pose(position=np.array(d["position"], dtype=float),
                orientation=np.array(d["quaternion"], dtype=float))


def save_task(task: TeleopTask, path) -> None:
    ctx = task.ctx
    payload = {
        "goal": _pose_to_json(task.follower_goal),
        "waypoints": [_pose_to_json(w) for w in task.waypoints],
        "ctx": {
            "load_category": int(ctx.load_category),
            "static_muscle_use": ctx.static_muscle_use,
            "repetition": ctx.repetition,
            "neck_angle": ctx.neck_angle,
            "neck_twist_or_side_bend": ctx.neck_twist_or_side_bend,
            "trunk_supported": ctx.trunk_supported,
            "legs_supported": ctx.legs_supported,
            "arm_supported": ctx.arm_supported,
            "shoulder_raised": ctx.shoulder_raised,
            "arm_abducted": ctx.arm_abducted,
            "working_across_midline": ctx.working_across_midline,
            "wrist_bent_from_midline": ctx.wrist_bent_from_midline,
            "wrist_twist_extreme": ctx.wrist_twist_extreme,
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2)


def load_task(path) -> TeleopTask:
    with open(path) as fh:
        payload = json.load(fh)
    ctx_d = dict(payload.get("ctx", {}))
    if "load_category" in ctx_d:
        ctx_d["load_category"] = LoadCategory(ctx_d["load_category"])
    return TeleopTask(
        follower_goal=_pose_from_json(payload["goal"]),
        waypoints=tuple(_pose_from_json(w) for w in payload.get("waypoints", [])),
        ctx=TaskContext(**ctx_d),
    )


def demo_task(psi: SegmentLengths | None = None,
              jitter: np.ndarray | None = None) -> TeleopTask:
    """The shipped demo reach: down and forward, then far across the midline.

    Tracking it drags the simulated human into torso flexion plus
    rotation with a bent wrist — an uncorrected worksheet risk well above
    the alert level. ``jitter`` (3-vector, meters) offsets every target
    to derive task variants.
    """
    if psi is None:
        from .config import default_segments

        psi = default_segments()
    home = forward_kinematics(neutral_posture(), psi)
    offset = np.zeros(3) if jitter is None else np.asarray(jitter, dtype=float)
    waypoints = (
        Pose(position=home.position + np.array([0.25, -0.05, -0.15]) + offset,
             orientation=home.orientation),
        Pose(position=home.position + np.array([0.32, 0.25, -0.25]) + offset,
             orientation=home.orientation),
    )
    goal = Pose(position=home.position + np.array([0.15, 0.42, -0.10]) + offset,
                orientation=home.orientation)
    return TeleopTask(follower_goal=goal, waypoints=waypoints)
