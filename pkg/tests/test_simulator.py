import numpy as np
import pytest

from ergopose import rula, simulator as sim
from ergopose.config import default_limits, default_segments
from ergopose.kinematics import (
    JointState,
    Pose,
    forward_kinematics,
    neutral_posture,
)
from ergopose.quatmath import quat_conjugate, quat_from_rotvec, quat_multiply, quat_normalize

PSI = default_segments()
LIM = default_limits()


def test_couple_identity_and_disengaged():
    dp = np.array([0.01, -0.02, 0.003])
    dq = quat_from_rotvec([0.01, 0.02, -0.01])
    out_p, out_q = sim.couple_leader_follower((dp, dq), 1.0, True)
    np.testing.assert_array_equal(out_p, dp)
    np.testing.assert_array_equal(out_q, dq)

    out_p, out_q = sim.couple_leader_follower((dp, dq), 1.0, False)
    np.testing.assert_array_equal(out_p, np.zeros(3))
    np.testing.assert_array_equal(out_q, [1.0, 0.0, 0.0, 0.0])

    out_p, _ = sim.couple_leader_follower((dp, dq), 0.5, True)
    np.testing.assert_allclose(out_p, 0.5 * dp)


def test_pause_move_resume_keeps_relative_path():
    """Disengaged leader motion does not show up in the follower's path."""
    rng = np.random.default_rng(0)
    engaged_deltas = [(rng.normal(0, 0.01, 3), quat_from_rotvec(rng.normal(0, 0.01, 3)))
                      for _ in range(10)]
    pause_deltas = [(rng.normal(0, 0.05, 3), quat_from_rotvec(rng.normal(0, 0.05, 3)))
                    for _ in range(5)]

    def run(schedule):
        pos = np.zeros(3)
        quat = np.array([1.0, 0.0, 0.0, 0.0])
        for delta, engaged in schedule:
            dp, dq = sim.couple_leader_follower(delta, 0.7, engaged)
            pos = pos + dp
            quat = quat_normalize(quat_multiply(dq, quat))
        return pos, quat

    plain = [(d, True) for d in engaged_deltas]
    with_pause = ([(d, True) for d in engaged_deltas[:5]]
                  + [(d, False) for d in pause_deltas]
                  + [(d, True) for d in engaged_deltas[5:]])
    pos_a, quat_a = run(plain)
    pos_b, quat_b = run(with_pause)
    np.testing.assert_allclose(pos_a, pos_b, atol=1e-12)
    assert min(np.linalg.norm(quat_a - quat_b), np.linalg.norm(quat_a + quat_b)) < 1e-9


def test_step_human_alpha_zero_ignores_suggestion():
    cfg = sim.SimConfig(alpha=0.0)
    state = JointState(q=neutral_posture(), qdot=np.zeros(10))
    target = forward_kinematics(neutral_posture() + 0.1, PSI)
    a = sim.step_human(state, target, None, cfg, PSI, LIM)
    b = sim.step_human(state, target, LIM.q_max, cfg, PSI, LIM)
    np.testing.assert_array_equal(a.q, b.q)


def test_step_human_alpha_one_converges_to_suggestion():
    cfg = sim.SimConfig(alpha=1.0)
    state = JointState(q=neutral_posture(), qdot=np.zeros(10))
    target = forward_kinematics(neutral_posture(), PSI)  # goal already reached
    q_star = neutral_posture()
    q_star[3] += 0.3
    dist = np.linalg.norm(state.q - q_star)
    for _ in range(60):
        state = sim.step_human(state, target, q_star, cfg, PSI, LIM)
        new_dist = np.linalg.norm(state.q - q_star)
        assert new_dist <= dist + 1e-12
        dist = new_dist
    assert dist < 0.01


def test_step_human_speed_cap():
    cfg = sim.SimConfig(alpha=0.0, human_speed_cap=0.5)
    state = JointState(q=neutral_posture(), qdot=np.zeros(10))
    far = forward_kinematics(np.clip(neutral_posture() + 0.8, LIM.q_min, LIM.q_max), PSI)
    for _ in range(20):
        new = sim.step_human(state, far, None, cfg, PSI, LIM)
        assert np.max(np.abs(new.qdot)) <= cfg.human_speed_cap + 1e-12
        state = new


def test_episode_none_correction_traces_coincide(psi, lim):
    task = sim.demo_task(psi)
    log = sim.run_episode(task, sim.SimConfig(seed=0), "none", psi=psi, lim=lim)
    np.testing.assert_array_equal(log.rula_corrected, log.rula_uncorrected)
    assert np.all(np.isnan(log.rula_optimal))
    assert log.converged


def test_episode_deterministic(psi, lim):
    task = sim.demo_task(psi)
    a = sim.run_episode(task, sim.SimConfig(seed=0), "none", psi=psi, lim=lim)
    b = sim.run_episode(task, sim.SimConfig(seed=0), "none", psi=psi, lim=lim)
    for field in ("times", "q", "qdot", "interaction_pos", "interaction_quat",
                  "interaction_twist", "follower_pos", "follower_quat",
                  "rula_corrected", "rula_uncorrected"):
        assert np.array_equal(getattr(a, field), getattr(b, field)), field


def test_episode_logged_rula_reverifies(psi, lim):
    task = sim.demo_task(psi)
    log = sim.run_episode(task, sim.SimConfig(seed=0), "none", psi=psi, lim=lim)
    for i in range(0, len(log), 7):
        assert log.rula_corrected[i] == rula.score_posture(log.q[i], task.ctx).grand


def test_episode_follower_is_scaled_integral_of_leader(psi, lim):
    task = sim.demo_task(psi)
    cfg = sim.SimConfig(seed=0, motion_scale=0.8)
    log = sim.run_episode(task, cfg, "none", psi=psi, lim=lim)
    home = forward_kinematics(neutral_posture(), psi)
    pos = home.position.copy()
    prev = home
    for i in range(len(log)):
        leader = Pose(position=log.interaction_pos[i], orientation=log.interaction_quat[i])
        dp, _ = sim.couple_leader_follower(
            (leader.position - prev.position,
             quat_multiply(leader.orientation, quat_conjugate(prev.orientation))),
            cfg.motion_scale, bool(log.clutch[i]))
        pos = pos + dp
        np.testing.assert_allclose(pos, log.follower_pos[i], atol=1e-9)
        prev = leader


def test_episode_interaction_is_forward_kinematics(psi, lim):
    task = sim.demo_task(psi)
    log = sim.run_episode(task, sim.SimConfig(seed=0), "none", psi=psi, lim=lim)
    for i in range(0, len(log), 11):
        pose = forward_kinematics(log.q[i], psi)
        np.testing.assert_allclose(pose.position, log.interaction_pos[i], atol=1e-12)


def test_alpha_monotone_correction_pull(psi, lim, small_model):
    task = sim.demo_task(psi)
    pulls = []
    for alpha in (0.3, 0.75):
        cfg = sim.SimConfig(seed=0, alpha=alpha, horizon=260, correction_period=5)
        log = sim.run_episode(task, cfg, "gradient", model=small_model, psi=psi, lim=lim)
        have = np.isfinite(log.rula_optimal)
        gaps = np.linalg.norm(log.q[have] - log.q_star[have], axis=1)
        pulls.append(np.mean(gaps))
    assert pulls[1] <= pulls[0]


def test_ground_truth_zero_noise_matches_log(psi, lim):
    task = sim.demo_task(psi)
    cfg = sim.SimConfig(seed=1)
    log, obs = sim.generate_ground_truth(task, cfg, psi=psi, lim=lim,
                                         noise_pos=0.0, noise_rot=0.0,
                                         noise_vel=0.0, noise_angvel=0.0)
    assert len(obs) == len(log)
    for i in range(0, len(log), 13):
        np.testing.assert_array_equal(obs[i].pose.position, log.interaction_pos[i])
        np.testing.assert_array_equal(obs[i].twist.as_vector(), log.interaction_twist[i])


def test_ground_truth_noise_magnitude(psi, lim):
    task = sim.demo_task(psi)
    cfg = sim.SimConfig(seed=1, horizon=1500)
    sigma = 0.002
    log, obs = sim.generate_ground_truth(task, cfg, psi=psi, lim=lim,
                                         noise_pos=sigma, noise_rot=0.0,
                                         noise_vel=0.0, noise_angvel=0.0,
                                         noise_seed=77)
    residuals = np.array([obs[i].pose.position - log.interaction_pos[i]
                          for i in range(len(log))])
    # empirical std within 10% of the injected value over a long run
    assert abs(residuals.std() - sigma) / sigma < 0.10


def test_ground_truth_seeded_repeatability(psi, lim):
    task = sim.demo_task(psi)
    cfg = sim.SimConfig(seed=2)
    _, a = sim.generate_ground_truth(task, cfg, psi=psi, lim=lim, noise_seed=5)
    _, b = sim.generate_ground_truth(task, cfg, psi=psi, lim=lim, noise_seed=5)
    for x, y in zip(a, b):
        assert np.array_equal(x.pose.position, y.pose.position)


def test_unreachable_task_rejected(psi, lim):
    home = forward_kinematics(neutral_posture(), psi)
    bad = sim.TeleopTask(follower_goal=Pose(position=home.position + [3.0, 0, 0],
                                            orientation=home.orientation))
    with pytest.raises(ValueError, match="unreachable"):
        sim.run_episode(bad, sim.SimConfig(seed=0), "none", psi=psi, lim=lim)


def test_task_file_round_trip(tmp_path, psi):
    task = sim.demo_task(psi)
    task = sim.TeleopTask(follower_goal=task.follower_goal, waypoints=task.waypoints,
                          ctx=rula.TaskContext(load_category=rula.LoadCategory.LOW,
                                               repetition=True))
    path = tmp_path / "task.json"
    sim.save_task(task, path)
    back = sim.load_task(path)
    np.testing.assert_array_equal(back.follower_goal.position, task.follower_goal.position)
    assert len(back.waypoints) == len(task.waypoints)
    assert back.ctx == task.ctx


def test_episode_csv_round_trip(tmp_path, psi, lim):
    task = sim.demo_task(psi)
    log = sim.run_episode(task, sim.SimConfig(seed=3), "none", psi=psi, lim=lim)
    path = tmp_path / "episode.csv"
    sim.write_episode_csv(log, path)
    cols = sim.read_episode_csv(path)
    np.testing.assert_array_equal(cols["t"], log.times)
    np.testing.assert_array_equal(cols["q_0"], log.q[:, 0])
    np.testing.assert_array_equal(cols["rula_corrected"], log.rula_corrected)
    np.testing.assert_array_equal(cols["f_pz"], log.follower_pos[:, 2])


def test_gradient_correction_requires_model(psi, lim):
    with pytest.raises(ValueError, match="model"):
        sim.run_episode(sim.demo_task(psi), sim.SimConfig(), "gradient",
                        psi=psi, lim=lim)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        sim.SimConfig(dt=0.0)
    with pytest.raises(ValueError):
        sim.SimConfig(alpha=1.5)
