"""Postural optimization: gradient-free (cross-entropy) and gradient-based.

Three problem shapes:

- online: find the lowest-risk posture whose hand pose stays within a
  task-space tolerance of the current interaction pose;
- initial: choose the posture a recorded task should be restarted from,
  scoring the whole rollout induced by the recorded hand twists;
- reconfiguration: the same, but only for the part of the recording
  after a teleoperation pause.

Risk scores (worksheet grand score or its differentiable surrogate) are
minimized — lower is better. The recorded-twist rollouts resolve the
chain's velocity redundancy with a damped pseudoinverse, which turns the
initial/reconfiguration problems into a search over the start posture
only.

Cross-entropy sampling cannot hit the online task constraint by luck (a
6-dim tolerance tube has near-zero measure in the 10-dim box), so every
sample is first projected onto the constraint with a few damped
pseudoinverse steps and only then checked for feasibility.
"""

from __future__ import annotations

import enum
import time
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import least_squares, minimize

from .dula import MlpModel, forward, input_gradient, _raw_features
from .estimator import Observation, PostureTrajectory
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
from .rula import TaskContext, _ctx_to_arrays, _score_arrays


class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    INFEASIBLE = "infeasible"


class InfeasibleProblemError(RuntimeError):
    """No sample/iterate satisfied the task constraint."""

    def __init__(self, message: str, best_violation: float):
        super().__init__(f"{message} (best constraint violation {best_violation:.3g}x tolerance)")
        self.best_violation = best_violation


@dataclass(frozen=True)
class ErgonomicsObjective:
    """Risk objective over postures; lower is better.

    ``dula`` objectives are differentiable; ``rula_raw`` is the
    integer-valued worksheet score and suits gradient-free use only.
    """

    kind: str
    evaluate_batch: callable  # (N, 10) -> (N,)
    gradient: callable | None = None  # (10,) -> (10,), dula only

    def evaluate(self, q) -> float:
        return float(self.evaluate_batch(np.asarray(q, dtype=float)[None, :])[0])


def dula_objective(model: MlpModel, ctx: TaskContext) -> ErgonomicsObjective:
    ctx_arrays = _ctx_to_arrays(ctx)

    def evaluate_batch(Q):
        raw = _raw_features(np.asarray(Q, dtype=np.float64), ctx_arrays, model.include_ctx)
        x = (raw - model.norm_center) / model.norm_half
        out = forward(model, x)
        return np.atleast_1d(out)

    def gradient(q):
        raw = _raw_features(np.asarray(q, dtype=np.float64)[None, :], ctx_arrays,
                            model.include_ctx)
        x = ((raw - model.norm_center) / model.norm_half)[0]
        g = input_gradient(model, x)
        return g[:N_JOINTS] / model.norm_half[:N_JOINTS]

    return ErgonomicsObjective(kind="dula", evaluate_batch=evaluate_batch, gradient=gradient)


def rula_objective(ctx: TaskContext) -> ErgonomicsObjective:
    def evaluate_batch(Q):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        arrays = _ctx_to_arrays(ctx, len(Q))
        return _score_arrays(Q, arrays)["grand"].astype(float)

    return ErgonomicsObjective(kind="rula_raw", evaluate_batch=evaluate_batch)


@dataclass(frozen=True)
class OnlineProblem:
    q_current: JointState
    z_current: Observation
    psi: SegmentLengths
    limits: JointLimits
    epsilon_position: float = 0.005  # m
    epsilon_rotation: float = 0.02  # rad

    def __post_init__(self):
        if not (self.epsilon_position > 0 and self.epsilon_rotation > 0):
            raise ValueError("task-space tolerances must be positive")


@dataclass(frozen=True)
class RolloutProblem:
    """Recorded interaction-point twists plus the chain they apply to.

    ``start_index`` selects the tail of the recording (0 for the full
    task; a pause at step t_p means resuming from start_index = t_p + 1).
    ``reference_posture`` seeds the search and is always a candidate: the
    neutral posture for initial optimization, the paused posture for
    reconfiguration.
    """

    recorded_twists: tuple
    dt: float
    psi: SegmentLengths
    limits: JointLimits
    start_index: int = 0
    reference_posture: np.ndarray | None = None

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not -1 <= self.start_index <= len(self.recorded_twists):
            raise ValueError("start_index outside the recording")
        object.__setattr__(self, "recorded_twists", tuple(self.recorded_twists))


@dataclass(frozen=True)
class CemConfig:
    samples: int = 10000
    elite_fraction: float = 0.1
    iterations: int = 20
    init_std: float = 0.2  # rad
    min_std: float = 0.01  # rad
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.elite_fraction < 1.0:
            raise ValueError("elite_fraction must be in (0, 1)")
        if self.samples < 2 or self.iterations < 1:
            raise ValueError("need at least 2 samples and 1 iteration")


@dataclass(frozen=True)
class OptimizationResult:
    q: np.ndarray
    objective_value: float
    status: SolveStatus
    iterations: int
    solve_seconds: float
    constraint_violation: float = 0.0


_PROJECTION_DAMPING = 0.05
_PROJECTION_ITERS = 6
_ROLLOUT_DAMPING = 0.02
_ROLLOUT_QDOT_CAP = 20.0  # rad/s; beyond this the rollout has diverged


def _project_to_pose(Q, target: Pose, psi, lim,
                     iters: int = _PROJECTION_ITERS) -> np.ndarray:
    """Damped pseudoinverse steps pulling each posture onto the target pose."""
    Q = np.atleast_2d(np.asarray(Q, dtype=float)).copy()
    tp = np.broadcast_to(target.position, (len(Q), 3))
    tq = np.broadcast_to(target.orientation, (len(Q), 4))
    eye = (_PROJECTION_DAMPING ** 2) * np.eye(6)
    for _ in range(iters):
        pos, quat = fk_batch(Q, psi)
        err = pose_error_batch(pos, quat, tp, tq)
        J = jacobian_batch(Q, psi)
        JJt = J @ J.swapaxes(-1, -2) + eye
        dq = np.einsum("nji,nj->ni", J, np.linalg.solve(JJt, err[..., None])[..., 0])
        Q = np.clip(Q + dq, lim.q_min, lim.q_max)
    return Q


def _pose_violation(Q, target: Pose, psi, eps_pos: float, eps_rot: float) -> np.ndarray:
    """Constraint violation ratio per posture; <= 1 means feasible."""
    pos, quat = fk_batch(np.atleast_2d(Q), psi)
    err = pose_error_batch(pos, quat,
                           np.broadcast_to(target.position, pos.shape),
                           np.broadcast_to(target.orientation, quat.shape))
    pos_err = np.linalg.norm(err[:, :3], axis=1)
    rot_err = np.linalg.norm(err[:, 3:], axis=1)
    return np.maximum(pos_err / eps_pos, rot_err / eps_rot)


def _feasible_start(p: OnlineProblem) -> tuple[np.ndarray, float]:
    """q_current projected onto the constraint if it is not already inside."""
    q0 = clamp_to_limits(p.q_current.q, p.limits)
    v = float(_pose_violation(q0, p.z_current.pose, p.psi,
                              p.epsilon_position, p.epsilon_rotation)[0])
    if v <= 1.0:
        return q0, v
    q_proj = _project_to_pose(q0[None, :], p.z_current.pose, p.psi, p.limits, iters=20)[0]
    v = float(_pose_violation(q_proj, p.z_current.pose, p.psi,
                              p.epsilon_position, p.epsilon_rotation)[0])
    return q_proj, v


def solve_online_cem(p: OnlineProblem, obj: ErgonomicsObjective,
                     cfg: CemConfig) -> OptimizationResult:
    """Cross-entropy search over constraint-projected posture samples.

    The current posture (projected onto the constraint if needed) is a
    candidate in every iteration, so a feasible problem never returns a
    posture worse than where the human already is.
    """
    t0 = time.perf_counter()
    anchor, anchor_violation = _feasible_start(p)
    if anchor_violation > 1.0:
        raise InfeasibleProblemError("interaction pose unreachable within limits",
                                     anchor_violation)

    rng = np.random.default_rng(cfg.seed)
    mean = anchor.copy()
    std = np.full(N_JOINTS, cfg.init_std)
    n_elite = max(1, int(np.ceil(cfg.samples * cfg.elite_fraction)))

    best_q = anchor
    best_cost = obj.evaluate(anchor)
    best_violation = anchor_violation

    for _ in range(cfg.iterations):
        samples = rng.normal(mean, std, size=(cfg.samples, N_JOINTS))
        samples = np.clip(samples, p.limits.q_min, p.limits.q_max)
        samples = _project_to_pose(samples, p.z_current.pose, p.psi, p.limits)
        samples[0] = anchor  # keep the incumbent in the candidate set
        violation = _pose_violation(samples, p.z_current.pose, p.psi,
                                    p.epsilon_position, p.epsilon_rotation)
        feasible = violation <= 1.0
        best_violation = min(best_violation, float(violation.min()))
        cost = np.where(feasible, obj.evaluate_batch(samples), np.inf)

        order = np.argsort(cost, kind="stable")
        elites = samples[order[:n_elite]]
        elite_costs = cost[order[:n_elite]]
        if np.isfinite(elite_costs[0]) and elite_costs[0] < best_cost:
            best_cost = float(elite_costs[0])
            best_q = elites[0].copy()
        finite_elites = elites[np.isfinite(elite_costs)]
        if len(finite_elites) >= 2:
            mean = finite_elites.mean(axis=0)
            std = np.maximum(finite_elites.std(axis=0), cfg.min_std)

    if not np.isfinite(best_cost):
        raise InfeasibleProblemError("no feasible sample found", best_violation)
    return OptimizationResult(
        q=best_q,
        objective_value=best_cost,
        status=SolveStatus.CONVERGED,
        iterations=cfg.iterations,
        solve_seconds=time.perf_counter() - t0,
        constraint_violation=float(
            _pose_violation(best_q, p.z_current.pose, p.psi,
                            p.epsilon_position, p.epsilon_rotation)[0]
        ),
    )


def solve_online_gradient(p: OnlineProblem, obj: ErgonomicsObjective,
                          tol: float = 1e-3, max_iters: int = 60,
                          warm_start=None, extra_starts: bool = False) -> OptimizationResult:
    """Constrained local minimization of a differentiable risk objective.

    Sequential least-squares programming over the box limits with the
    task-space tolerance as inequality constraints (analytic gradients
    via the chain Jacobian). The current posture is always a candidate,
    so the returned risk never exceeds the starting risk. ``warm_start``
    (e.g. the previous control period's solution) adds a start point
    after projection onto the constraint; ``extra_starts`` adds a
    neutral-posture start, trading runtime for solution quality.
    """
    if obj.gradient is None:
        raise ValueError("gradient solver needs a differentiable objective")
    t0 = time.perf_counter()
    anchor, v0 = _feasible_start(p)
    if v0 > 1.0:
        raise InfeasibleProblemError("interaction pose unreachable within limits", v0)
    starts = [anchor]
    extra = [np.asarray(warm_start, dtype=float)] if warm_start is not None else []
    if extra_starts:
        extra.append(neutral_posture())
    for guess in extra:
        g = _project_to_pose(guess[None, :], p.z_current.pose, p.psi, p.limits, iters=12)[0]
        if float(_pose_violation(g, p.z_current.pose, p.psi, p.epsilon_position,
                                 p.epsilon_rotation)[0]) <= 1.0:
            starts.append(g)

    target = p.z_current.pose
    eps_p2 = p.epsilon_position ** 2
    eps_r2 = p.epsilon_rotation ** 2

    # SLSQP's line search evaluates the constraints far more often than
    # their jacobians; cache them separately so plain evaluations skip
    # the Jacobian entirely.
    err_cache = {"key": None, "value": None}
    jac_cache = {"key": None, "value": None}

    def pose_err(q):
        key = q.tobytes()
        if err_cache["key"] != key:
            err_cache["key"] = key
            err_cache["value"] = pose_error(forward_kinematics(q, p.psi), target)
        return err_cache["value"]

    def pose_jac(q):
        key = q.tobytes()
        if jac_cache["key"] != key:
            jac_cache["key"] = key
            jac_cache["value"] = jacobian(q, p.psi)
        return jac_cache["value"]

    def c_pos(q):
        err = pose_err(q)
        return eps_p2 - float(err[:3] @ err[:3])

    def c_pos_jac(q):
        # err = target (-) fk(q); d err / dq = -J
        return 2.0 * pose_err(q)[:3] @ pose_jac(q)[:3]

    def c_rot(q):
        err = pose_err(q)
        return eps_r2 - float(err[3:] @ err[3:])

    def c_rot_jac(q):
        return 2.0 * pose_err(q)[3:] @ pose_jac(q)[3:]

    candidates = list(starts)
    solver_found = False
    total_nit = 0
    with warnings.catch_warnings():
        # SLSQP probes slightly outside the box before clipping; harmless
        warnings.filterwarnings("ignore", message="Values in x were outside bounds")
        for x0 in starts:
            res = minimize(
                obj.evaluate,
                x0,
                jac=obj.gradient,
                bounds=list(zip(p.limits.q_min, p.limits.q_max)),
                constraints=[
                    {"type": "ineq", "fun": c_pos, "jac": c_pos_jac},
                    {"type": "ineq", "fun": c_rot, "jac": c_rot_jac},
                ],
                method="SLSQP",
                options={"maxiter": max_iters, "ftol": 1e-7},
            )
            total_nit += int(res.nit)
            if np.all(np.isfinite(res.x)):
                qx = clamp_to_limits(res.x, p.limits)
                if float(_pose_violation(qx, target, p.psi, p.epsilon_position,
                                         p.epsilon_rotation)[0]) <= 1.0 + tol:
                    candidates.append(qx)
                    solver_found = solver_found or res.success

    costs = [obj.evaluate(q) for q in candidates]
    best = int(np.argmin(costs))
    status = SolveStatus.CONVERGED if solver_found else SolveStatus.MAX_ITERS
    q_best = candidates[best]
    return OptimizationResult(
        q=q_best,
        objective_value=costs[best],
        status=status,
        iterations=total_nit,
        solve_seconds=time.perf_counter() - t0,
        constraint_violation=float(
            _pose_violation(q_best, target, p.psi,
                            p.epsilon_position, p.epsilon_rotation)[0]
        ),
    )


def _rollout_batch(Q0, twists, dt, psi, lim, accumulate=None):
    """Damped-pseudoinverse rollout for a batch of start postures.

    ``accumulate(Q_t)`` is called once per trajectory point (including
    the start) so callers can fold costs without storing trajectories.
    """
    Q = np.atleast_2d(np.asarray(Q0, dtype=float)).copy()
    eye = (_ROLLOUT_DAMPING ** 2) * np.eye(6)
    if accumulate is not None:
        accumulate(Q)
    for tw in twists:
        J = jacobian_batch(Q, psi)
        JJt = J @ J.swapaxes(-1, -2) + eye
        x = np.broadcast_to(tw.as_vector(), (len(Q), 6))
        qdot = np.einsum("nji,nj->ni", J, np.linalg.solve(JJt, x[..., None])[..., 0])
        qdot = np.clip(qdot, -_ROLLOUT_QDOT_CAP, _ROLLOUT_QDOT_CAP)
        Q = np.clip(Q + qdot * dt, lim.q_min, lim.q_max)
        if accumulate is not None:
            accumulate(Q)
    return Q


def rollout_posture(q0, rp: RolloutProblem) -> PostureTrajectory:
    """Posture trajectory induced by tracking the recorded twists from q0."""
    twists = rp.recorded_twists[max(rp.start_index, 0):]
    q0 = clamp_to_limits(q0, rp.limits)
    qs = [q0]
    qdots = [np.zeros(N_JOINTS)]
    q = q0
    eye = (_ROLLOUT_DAMPING ** 2) * np.eye(6)
    for tw in twists:
        J = jacobian(q, rp.psi)
        JJt = J @ J.T + eye
        qdot = J.T @ np.linalg.solve(JJt, tw.as_vector())
        if np.max(np.abs(qdot)) > _ROLLOUT_QDOT_CAP:
            raise RuntimeError(
                f"rollout diverged: |qdot| reached {np.max(np.abs(qdot)):.1f} rad/s "
                f"at step {len(qs) - 1}"
            )
        q = clamp_to_limits(q + qdot * rp.dt, rp.limits)
        qs.append(q)
        qdots.append(qdot)
    times = np.arange(len(qs)) * rp.dt
    return PostureTrajectory(times=times, q=np.array(qs), qdot=np.array(qdots))


def _rollout_cost_batch(Q0, rp: RolloutProblem, obj: ErgonomicsObjective) -> np.ndarray:
    twists = rp.recorded_twists[max(rp.start_index, 0):]
    total = np.zeros(len(np.atleast_2d(Q0)))

    def accumulate(Q):
        nonlocal total
        total = total + obj.evaluate_batch(Q)

    _rollout_batch(Q0, twists, rp.dt, rp.psi, rp.limits, accumulate=accumulate)
    return total


def solve_initial(rp: RolloutProblem, obj: ErgonomicsObjective,
                  cfg: CemConfig) -> OptimizationResult:
    """Cross-entropy search over the start posture of a recorded task.

    Minimizes the summed risk along the induced rollout; the reference
    posture (neutral by default) stays in the candidate set throughout.
    """
    t0 = time.perf_counter()
    reference = rp.reference_posture if rp.reference_posture is not None else neutral_posture()
    reference = clamp_to_limits(reference, rp.limits)
    rng = np.random.default_rng(cfg.seed)
    mean = reference.copy()
    std = np.full(N_JOINTS, cfg.init_std)
    n_elite = max(1, int(np.ceil(cfg.samples * cfg.elite_fraction)))

    best_q = reference
    best_cost = float(_rollout_cost_batch(reference[None, :], rp, obj)[0])

    for _ in range(cfg.iterations):
        samples = rng.normal(mean, std, size=(cfg.samples, N_JOINTS))
        samples = np.clip(samples, rp.limits.q_min, rp.limits.q_max)
        samples[0] = reference
        cost = _rollout_cost_batch(samples, rp, obj)
        order = np.argsort(cost, kind="stable")
        elites = samples[order[:n_elite]]
        if cost[order[0]] < best_cost:
            best_cost = float(cost[order[0]])
            best_q = samples[order[0]].copy()
        mean = elites.mean(axis=0)
        std = np.maximum(elites.std(axis=0), cfg.min_std)

    return OptimizationResult(
        q=best_q,
        objective_value=best_cost,
        status=SolveStatus.CONVERGED,
        iterations=cfg.iterations,
        solve_seconds=time.perf_counter() - t0,
    )


def solve_reconfig(rp: RolloutProblem, obj: ErgonomicsObjective,
                   cfg: CemConfig) -> OptimizationResult:
    """Resume-posture optimization over the post-pause tail of a recording.

    ``rp.start_index`` is t_p + 1; with start_index 0 (t_p = -1) this is
    exactly the initial optimization.
    """
    tail = replace(
        rp,
        recorded_twists=rp.recorded_twists[max(rp.start_index, 0):],
        start_index=0,
    )
    return solve_initial(tail, obj, cfg)
