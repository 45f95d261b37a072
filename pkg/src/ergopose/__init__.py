"""Seated upper-body posture estimation, worksheet risk scoring and
postural optimization for robot-mediated interaction.

Modules:
    kinematics — 10-DOF chain: forward kinematics, Jacobian, motion model
    rula       — worksheet risk scoring and labeled dataset generation
    dula       — differentiable risk surrogate (training and gradients)
    estimator  — particle filter and least-squares IK baselines
    optimizer  — cross-entropy and gradient-based postural optimization
    simulator  — deterministic leader/follower teleoperation simulation
    benchmarks — seeded desk-scale benchmark definitions
    cli        — command-line interface over all of the above
"""

__version__ = "0.1.0"

from .config import default_limits, default_segments, load_body_config, save_body_config
from .kinematics import (
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
    task_velocity,
)
from .rula import (
    ActionLevel,
    LoadCategory,
    PostureDataset,
    RulaAssessment,
    TaskContext,
    generate_dataset,
    interpret,
    load_dataset,
    sample_posture,
    save_dataset,
    score_posture,
)
from .dula import (
    EvalReport,
    MlpModel,
    TrainConfig,
    encode_input,
    forward,
    input_gradient,
    kfold_cv,
    load_model,
    save_model,
    train,
)
from .estimator import (
    EstimatorConfig,
    Observation,
    PostureTrajectory,
    deviation_metrics,
    offline_traj_ik,
    online_ik,
    run_filter,
)
from .optimizer import (
    CemConfig,
    ErgonomicsObjective,
    OnlineProblem,
    RolloutProblem,
    dula_objective,
    rollout_posture,
    rula_objective,
    solve_initial,
    solve_online_cem,
    solve_online_gradient,
    solve_reconfig,
)
from .simulator import (
    EpisodeLog,
    SimConfig,
    TeleopTask,
    couple_leader_follower,
    demo_task,
    generate_ground_truth,
    load_task,
    run_episode,
    save_task,
    step_human,
)
