"""Acceptance suite: every release criterion at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one PASS line
per criterion. The desk-scale surrogate training (criterion 2) dominates
the runtime at roughly 10-15 minutes on a 2-core laptop CPU; everything
else finishes in seconds to a few minutes.
"""

import time

import numpy as np
import pytest

from ergopose import dula, estimator, optimizer as opt, rula, simulator as sim
from ergopose.benchmarks import (
    DESK_DATASET_SIZE,
    ESTIMATION_EPISODES,
    benchmark_estimator_config,
    estimation_episode,
)
from ergopose.config import default_limits, default_segments
from ergopose.kinematics import JointState, Twist, forward_kinematics, jacobian, pose_error

PSI = default_segments()
LIM = default_limits()


def _report(criterion: str, detail: str) -> None:
    print(f"\nPASS {criterion}: {detail}")


# --------------------------------------------------------------------------
# Shared expensive fixtures.


@pytest.fixture(scope="module")
def desk_training():
    """Balanced desk-scale dataset, trained surrogate, report and timing."""
    dataset = rula.generate_dataset(DESK_DATASET_SIZE, balance=True, seed=42)
    t0 = time.perf_counter()
    model, report = dula.train(dataset, dula.desk_train_config(seed=0))
    train_seconds = time.perf_counter() - t0
    return {"dataset": dataset, "model": model, "report": report,
            "train_seconds": train_seconds}


@pytest.fixture(scope="module")
def estimation_results():
    """The 20 seeded benchmark episodes with particle-filter estimates."""
    t0 = time.perf_counter()
    results = []
    for episode in range(ESTIMATION_EPISODES):
        task, log, observations = estimation_episode(episode, PSI, LIM)
        traj = estimator.run_filter(observations, benchmark_estimator_config(), PSI, LIM)
        results.append({"task": task, "log": log, "trajectory": traj})
    return {"episodes": results, "seconds": time.perf_counter() - t0}


# --------------------------------------------------------------------------
# Criterion 1: worksheet scoring oracle equivalence.


def test_criterion_1_rula_oracle_equivalence():
    from test_rula import (
        FIXTURES,
        TABLE_A_FLAT,
        TABLE_B_FLAT,
        TABLE_C_ROWS,
    )

    t0 = time.perf_counter()
    for name, q, ctx, expected in FIXTURES:
        a = rula.score_posture(q, ctx)
        for field, value in expected.items():
            if field == "action":
                assert a.action_level == rula.ActionLevel(value), name
            else:
                assert getattr(a, field) == value, f"{name}: {field}"
    grands = {f[3]["grand"] for f in FIXTURES}
    assert len(FIXTURES) == 30 and grands == set(range(1, 8))

    for (ua, la), flat in TABLE_A_FLAT.items():
        for wi in range(4):
            for ti in range(2):
                assert rula.TABLE_A[ua - 1, la - 1, wi, ti] == flat[2 * wi + ti]
    for neck, flat in TABLE_B_FLAT.items():
        for ti in range(6):
            for li in range(2):
                assert rula.TABLE_B[neck - 1, ti, li] == flat[2 * ti + li]
    np.testing.assert_array_equal(rula.TABLE_C, np.array(TABLE_C_ROWS))

    elapsed = time.perf_counter() - t0
    assert elapsed < 1.0
    _report("criterion 1 (worksheet oracle)",
            f"30 hand-computed fixtures exact, tables cross-checked, {elapsed:.3f}s")


# --------------------------------------------------------------------------
# Criterion 2: surrogate accuracy at desk scale.


def test_criterion_2_surrogate_desk_accuracy(desk_training):
    report = desk_training["report"]
    assert desk_training["train_seconds"] <= 7200.0
    assert report.rounded_accuracy >= 0.97
    assert report.lowest_diagonal >= 0.95
    _report("criterion 2 (surrogate desk accuracy)",
            f"accuracy {report.rounded_accuracy:.4%}, lowest diagonal "
            f"{report.lowest_diagonal:.4%}, trained in "
            f"{desk_training['train_seconds']/60:.1f} min "
            f"(reference targets at full scale: 99.73% / 99.38%)")


# --------------------------------------------------------------------------
# Criterion 3: gradient fidelity.


def _min_preactivation(model, x):
    a = x[None, :].astype(np.float64)
    best = np.inf
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ W.astype(np.float64) + b.astype(np.float64)
        if i != last:
            best = min(best, float(np.abs(a).min()))
            a = np.maximum(a, 0)
    return best


def test_criterion_3_gradient_fidelity(desk_training):
    model = desk_training["model"]
    t0 = time.perf_counter()

    h = 1e-4
    rng = np.random.default_rng(1234)
    checked = 0
    worst = 0.0
    while checked < 1000:
        x = rng.uniform(-1.0, 1.0, model.d_in)
        if _min_preactivation(model, x) <= 20 * h:
            continue
        checked += 1
        g = dula.input_gradient(model, x)
        fd = np.empty(model.d_in)
        for j in range(model.d_in):
            xp, xm = x.copy(), x.copy()
            xp[j] += h
            xm[j] -= h
            fd[j] = (dula.forward(model, xp) - dula.forward(model, xm)) / (2 * h)
        rel = np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1e-8))
        worst = max(worst, rel)
    assert worst < 1e-4

    rng = np.random.default_rng(4321)
    worst_jac = 0.0
    for _ in range(1000):
        q = rng.uniform(LIM.q_min, LIM.q_max)
        J = jacobian(q, PSI)
        Jfd = np.zeros((6, 10))
        for j in range(10):
            qp, qm = q.copy(), q.copy()
            qp[j] += 1e-6
            qm[j] -= 1e-6
            pp = forward_kinematics(qp, PSI)
            pm = forward_kinematics(qm, PSI)
            Jfd[:, j] = pose_error(pm, pp) / 2e-6
        worst_jac = max(worst_jac, float(np.max(np.abs(J - Jfd) / (np.abs(Jfd) + 1e-4))))
    assert worst_jac < 1e-5

    elapsed = time.perf_counter() - t0
    assert elapsed < 60.0
    _report("criterion 3 (gradient fidelity)",
            f"surrogate grad rel err {worst:.2e} (<1e-4), chain Jacobian rel err "
            f"{worst_jac:.2e} (<1e-5), {elapsed:.1f}s")


# --------------------------------------------------------------------------
# Criterion 4: estimator accuracy on simulated ground truth.


def test_criterion_4_estimator_self_consistency(estimation_results):
    assert estimation_results["seconds"] < 600.0
    deviations = []
    for row in estimation_results["episodes"]:
        truth = estimator.PostureTrajectory(times=row["log"].times, q=row["log"].q,
                                            qdot=row["log"].qdot)
        metrics = estimator.deviation_metrics(row["trajectory"], truth)
        assert metrics is not None
        deviations.append(np.abs(row["trajectory"].q - row["log"].q))
    pooled = np.concatenate(deviations, axis=0)
    med = np.percentile(pooled, 50, axis=0)
    q3 = np.percentile(pooled, 75, axis=0)
    assert med.max() <= 0.09, f"worst per-joint median {med.max():.4f}"
    assert q3.max() <= 0.25, f"worst per-joint upper quartile {q3.max():.4f}"
    _report("criterion 4 (estimator self-consistency)",
            f"20 episodes at M=500: worst median {med.max():.4f} rad (<=0.09), "
            f"worst upper quartile {q3.max():.4f} rad (<=0.25), "
            f"{estimation_results['seconds']:.0f}s")


# --------------------------------------------------------------------------
# Criterion 5: risk-alert detection from estimated postures.


def test_criterion_5_risk_alert_detection(estimation_results):
    detections = []
    agreements = []
    for row in estimation_results["episodes"]:
        ctx = row["task"].ctx
        true_max = int(row["log"].rula_uncorrected.max())
        est_scores = rula._score_arrays(
            row["trajectory"].q, rula._ctx_to_arrays(ctx, len(row["trajectory"].q)))["grand"]
        est_max = int(est_scores.max())
        if true_max > 2:
            detections.append(est_max > 2)
        agreements.append(rula.interpret(est_max) is rula.interpret(true_max))
    assert len(detections) > 0, "benchmark episodes must contain alert instances"
    assert all(detections), f"missed {detections.count(False)} of {len(detections)} alerts"
    agreement = sum(agreements) / len(agreements)
    assert agreement >= 0.80
    _report("criterion 5 (risk alerts)",
            f"alerts detected {sum(detections)}/{len(detections)}, action-level "
            f"agreement {agreement:.0%} (>=80%)")


# --------------------------------------------------------------------------
# Criterion 6: postural correction efficacy.


def test_criterion_6_correction_efficacy(desk_training):
    t0 = time.perf_counter()
    task = sim.demo_task(PSI)
    cfg = sim.SimConfig(seed=0, alpha=0.75, horizon=1500, correction_period=5)
    log = sim.run_episode(task, cfg, "gradient", model=desk_training["model"],
                          psi=PSI, lim=LIM)
    summary = log.summary()
    elapsed = time.perf_counter() - t0
    assert elapsed < 300.0
    assert log.converged
    assert summary["mean_rula_corrected"] < summary["mean_rula_uncorrected"]
    assert summary["max_rula_corrected"] <= 4.0
    _report("criterion 6 (correction efficacy)",
            f"mean risk {summary['mean_rula_corrected']:.3f} < uncorrected "
            f"{summary['mean_rula_uncorrected']:.3f}, corrected max "
            f"{summary['max_rula_corrected']:.0f} <= 4, {elapsed:.0f}s")


# --------------------------------------------------------------------------
# Criterion 7: solver runtime gap.


def test_criterion_7_solver_runtime_gap(desk_training):
    model = desk_training["model"]
    task = sim.demo_task(PSI)
    log = sim.run_episode(task, sim.SimConfig(seed=0), "none", psi=PSI, lim=LIM)
    i = 50  # a mid-episode posture away from the start
    problem = opt.OnlineProblem(
        q_current=JointState(q=log.q[i], qdot=log.qdot[i]),
        z_current=estimator.Observation(
            pose=sim.Pose(position=log.interaction_pos[i],
                          orientation=log.interaction_quat[i]),
            twist=Twist(linear=log.interaction_twist[i][:3],
                        angular=log.interaction_twist[i][3:]),
            time=log.times[i]),
        psi=PSI, limits=LIM)

    g_obj = opt.dula_objective(model, task.ctx)
    opt.solve_online_gradient(problem, g_obj)  # warm numpy caches
    t0 = time.perf_counter()
    g_res = opt.solve_online_gradient(problem, g_obj)
    g_seconds = time.perf_counter() - t0

    r_obj = opt.rula_objective(task.ctx)
    t0 = time.perf_counter()
    c_res = opt.solve_online_cem(problem, r_obj,
                                 opt.CemConfig(samples=10000, iterations=20, seed=0))
    c_seconds = time.perf_counter() - t0

    assert g_seconds < 1.0, f"gradient solve took {g_seconds:.3f}s"
    ratio = c_seconds / g_seconds
    assert ratio >= 50.0, f"runtime ratio only {ratio:.0f}x"
    assert np.isfinite(g_res.objective_value) and np.isfinite(c_res.objective_value)
    _report("criterion 7 (solver runtime gap)",
            f"gradient {g_seconds*1000:.0f} ms (<1 s), sampling {c_seconds:.1f} s, "
            f"ratio {ratio:.0f}x (>=50x)")


# --------------------------------------------------------------------------
# Criterion 8: determinism of every seeded pipeline.


def test_criterion_8_determinism(tmp_path):
    ds_a = rula.generate_dataset(2000, balance=True, seed=13)
    ds_b = rula.generate_dataset(2000, balance=True, seed=13)
    assert ds_a.records.tobytes() == ds_b.records.tobytes()

    cfg = dula.TrainConfig(epochs=4, batch_size=512, seed=3)
    model_a, _ = dula.train(ds_a, cfg)
    model_b, _ = dula.train(ds_b, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(model_a.weights, model_b.weights))
    assert all(np.array_equal(x, y) for x, y in zip(model_a.biases, model_b.biases))

    _, _, observations = estimation_episode(0, PSI, LIM)
    est_cfg = benchmark_estimator_config()
    traj_a = estimator.run_filter(observations, est_cfg, PSI, LIM)
    traj_b = estimator.run_filter(observations, est_cfg, PSI, LIM)
    assert np.array_equal(traj_a.q, traj_b.q)
    assert np.array_equal(traj_a.qdot, traj_b.qdot)

    task = sim.demo_task(PSI)
    log_a = sim.run_episode(task, sim.SimConfig(seed=6), "none", psi=PSI, lim=LIM)
    log_b = sim.run_episode(task, sim.SimConfig(seed=6), "none", psi=PSI, lim=LIM)
    path_a, path_b = tmp_path / "a.csv", tmp_path / "b.csv"
    sim.write_episode_csv(log_a, path_a)
    sim.write_episode_csv(log_b, path_b)
    assert path_a.read_bytes() == path_b.read_bytes()

    _report("criterion 8 (determinism)",
            "dataset, training, estimation and simulation reruns are bit-identical")
