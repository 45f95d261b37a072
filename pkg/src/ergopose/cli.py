"""Command-line entry point wiring the library end to end.

Subcommands: gen-dataset, train, eval, estimate, simulate, compare and
make-task. Every command writes a JSON run manifest next to its primary
output (atomically, via a temp file and rename) holding the resolved
parameters, seeds and input/output hashes, so any artifact can be
regenerated from its manifest alone.

Exit codes: 0 success, 1 usage error, 2 data error, 3 non-convergence.
Set ERGOPOSE_CONFIG_DIR to point --config-less runs at a directory
containing body.cfg instead of the packaged default.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import benchmarks, dula, estimator, rula, simulator
from .config import load_body_config
from .optimizer import CemConfig, InfeasibleProblemError

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NONCONVERGENCE = 3


class DataError(RuntimeError):
    pass


class NonConvergence(RuntimeError):
    pass


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _atomic_json(payload: dict, path: Path) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def _write_manifest(command: str, params: dict, inputs: list, outputs: list,
                    wall_seconds: float, primary_output: str) -> None:
    manifest = {
        "command": command,
        "params": params,
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): _sha256(p) for p in outputs if Path(p).exists()},
        "package_version": __version__,
        "wall_seconds": round(wall_seconds, 3),
    }
    _atomic_json(manifest, Path(str(primary_output) + ".manifest.json"))


def _body(args) -> tuple:
    path = getattr(args, "config", None)
    if path is None:
        cfg_dir = os.environ.get("ERGOPOSE_CONFIG_DIR")
        if cfg_dir and (Path(cfg_dir) / "body.cfg").exists():
            path = Path(cfg_dir) / "body.cfg"
    return load_body_config(path)


def cmd_gen_dataset(args) -> int:
    if args.n <= 0:
        raise DataError("--n must be positive")
    _, lim = _body(args)
    t0 = time.time()
    ds = rula.generate_dataset(args.n, balance=args.balance, seed=args.seed, lim=lim)
    rula.save_dataset(ds, args.out)
    outputs = [args.out]
    if args.csv:
        rula.export_dataset_csv(ds, args.csv)
        outputs.append(args.csv)
    _write_manifest("gen-dataset",
                    {"n": args.n, "balance": args.balance, "seed": args.seed,
                     "config": str(args.config) if args.config else None},
                    [], outputs, time.time() - t0, args.out)
    print(f"wrote {len(ds)} records to {args.out}")
    print("class counts:", ds.class_counts)
    return EXIT_OK


def _train_config(args) -> dula.TrainConfig:
    if args.desk_preset:
        return dula.desk_train_config(seed=args.seed, include_ctx=not args.posture_only)
    return dula.TrainConfig(
        epochs=args.epochs, learning_rate=args.lr, batch_size=args.batch,
        seed=args.seed, folds=args.folds, include_ctx=not args.posture_only)


def cmd_train(args) -> int:
    _, lim = _body(args)
    try:
        ds = rula.load_dataset(args.dataset)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dataset: {exc}") from exc
    cfg = _train_config(args)
    t0 = time.time()
    try:
        model, report = dula.train(ds, cfg, lim=lim)
    except dula.TrainingError as exc:
        raise DataError(str(exc)) from exc
    dula.save_model(model, args.out)
    text = report.summary()
    outputs = [args.out]
    if args.report:
        Path(args.report).write_text(text + "\n")
        outputs.append(args.report)
    _write_manifest("train", {**cfg.__dict__, "dataset": str(args.dataset)},
                    [args.dataset], outputs, time.time() - t0, args.out)
    print(text)
    return EXIT_OK


def cmd_eval(args) -> int:
    _, lim = _body(args)
    try:
        ds = rula.load_dataset(args.dataset)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read dataset: {exc}") from exc
    t0 = time.time()
    if args.model:
        try:
            model = dula.load_model(args.model)
        except dula.ModelFormatError as exc:
            raise DataError(str(exc)) from exc
        q, ctx_arrays, labels = ds.features_and_labels()
        X = dula.encode_batch(q, ctx_arrays, model).astype(np.float32)
        report = dula.evaluate(model, X, labels)
        reports = [report]
        print(report.summary())
    else:
        cfg = _train_config(args)
        try:
            reports = dula.kfold_cv(ds, cfg, lim=lim)
        except dula.TrainingError as exc:
            raise DataError(str(exc)) from exc
        for k, rep in enumerate(reports):
            print(f"--- fold {k} ---")
            print(rep.summary())
        accs = [r.rounded_accuracy for r in reports]
        print(f"mean fold accuracy: {np.mean(accs):.4%} (min {min(accs):.4%})")
    if args.report:
        text = "\n\n".join(r.summary() for r in reports)
        Path(args.report).write_text(text + "\n")
        _write_manifest("eval",
                        {"dataset": str(args.dataset),
                         "model": str(args.model) if args.model else None,
                         "folds": args.folds, "seed": args.seed},
                        [p for p in (args.dataset, args.model) if p],
                        [args.report], time.time() - t0, args.report)
    return EXIT_OK


def cmd_estimate(args) -> int:
    psi, lim = _body(args)
    try:
        observations = estimator.read_observations_csv(args.observations)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read observations: {exc}") from exc
    cfg = estimator.EstimatorConfig(
        num_particles=args.particles, seed=args.seed,
        init_std=np.full(10, args.init_std),
        process_accel_std=np.full(10, args.accel_std))
    t0 = time.time()
    if args.method == "pf":
        traj = estimator.run_filter(observations, cfg, psi, lim)
    elif args.method == "online-ik":
        traj = estimator.online_ik(observations, psi, lim)
    elif args.method == "offline-trajik":
        traj = estimator.offline_traj_ik(observations, psi, lim)
    else:
        raise DataError(f"unknown method {args.method!r}")
    estimator.write_trajectory_csv(traj, args.out)
    inputs = [args.observations]
    if args.truth:
        try:
            truth = estimator.read_trajectory_csv(args.truth)
            metrics = estimator.deviation_metrics(traj, truth)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot compare against truth: {exc}") from exc
        inputs.append(args.truth)
        print(metrics.table())
    _write_manifest("estimate",
                    {"observations": str(args.observations), "method": args.method,
                     "particles": args.particles, "seed": args.seed,
                     "truth": str(args.truth) if args.truth else None},
                    inputs, [args.out], time.time() - t0, args.out)
    print(f"wrote {len(traj)} estimates to {args.out}")
    return EXIT_OK


def _load_model_arg(args):
    if args.model is None:
        return None
    try:
        return dula.load_model(args.model)
    except dula.ModelFormatError as exc:
        raise DataError(str(exc)) from exc


def cmd_simulate(args) -> int:
    psi, lim = _body(args)
    try:
        task = simulator.load_task(args.task)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read task file: {exc}") from exc
    model = _load_model_arg(args)
    if args.correction == "gradient" and model is None:
        raise DataError("--correction gradient needs --model")
    cfg = simulator.SimConfig(alpha=args.alpha, seed=args.seed, horizon=args.horizon,
                              correction_period=args.correction_period)
    t0 = time.time()
    try:
        log = simulator.run_episode(task, cfg, args.correction, model=model,
                                    psi=psi, lim=lim,
                                    cem_config=CemConfig(samples=args.cem_samples,
                                                         iterations=8, seed=args.seed))
    except (ValueError, InfeasibleProblemError) as exc:
        raise DataError(str(exc)) from exc
    simulator.write_episode_csv(log, args.out)
    summary = log.summary()
    _write_manifest("simulate",
                    {"task": str(args.task), "alpha": args.alpha,
                     "correction": args.correction, "seed": args.seed,
                     "horizon": args.horizon,
                     "correction_period": args.correction_period,
                     "model": str(args.model) if args.model else None},
                    [p for p in (args.task, args.model) if p],
                    [args.out], time.time() - t0, args.out)
    for key, val in summary.items():
        print(f"{key}: {val}")
    if not log.converged:
        raise NonConvergence("episode hit the step cap before reaching the goal")
    return EXIT_OK


def cmd_compare(args) -> int:
    """Run the alpha x solver grid used for the correction comparisons."""
    psi, lim = _body(args)
    try:
        task = simulator.load_task(args.task)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read task file: {exc}") from exc
    model = _load_model_arg(args)
    if model is None:
        raise DataError("compare needs --model for the gradient runs")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    t0 = time.time()

    grid = [("none", 0.0)] + [(corr, alpha) for corr in ("cem", "gradient")
                              for alpha in (0.0, 0.75)]
    rows = []
    outputs = []
    failed = False
    for corr, alpha in grid:
        cfg = simulator.SimConfig(alpha=alpha, seed=args.seed, horizon=args.horizon,
                                  correction_period=args.correction_period)
        log = simulator.run_episode(task, cfg, corr, model=model, psi=psi, lim=lim,
                                    cem_config=CemConfig(samples=args.cem_samples,
                                                         iterations=8, seed=args.seed))
        name = f"episode_{corr}_alpha{alpha:g}.csv"
        simulator.write_episode_csv(log, out_dir / name)
        outputs.append(out_dir / name)
        s = log.summary()
        rows.append({"correction": corr, "alpha": alpha, **s})
        failed = failed or not log.converged

    table_path = out_dir / "comparison.csv"
    cols = ["correction", "alpha", "converged", "steps_to_goal",
            "mean_rula_corrected", "max_rula_corrected",
            "mean_rula_uncorrected", "max_rula_uncorrected",
            "mean_rula_optimal", "n_solves", "mean_solve_seconds"]
    with open(table_path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row.get(c, "")) for c in cols) + "\n")
    outputs.append(table_path)
    _write_manifest("compare",
                    {"task": str(args.task), "seed": args.seed,
                     "cem_samples": args.cem_samples, "horizon": args.horizon,
                     "correction_period": args.correction_period,
                     "model": str(args.model)},
                    [args.task, args.model], outputs, time.time() - t0, table_path)
    for row in rows:
        print(f"{row['correction']:>8} alpha={row['alpha']:<4} "
              f"mean={row['mean_rula_corrected']:.3f} max={row['max_rula_corrected']:.0f} "
              f"solve={row['mean_solve_seconds']*1000:.0f}ms")
    if failed:
        raise NonConvergence("at least one grid episode hit the step cap")
    return EXIT_OK


def cmd_make_task(args) -> int:
    psi, _ = _body(args)
    if args.kind == "demo":
        task = simulator.demo_task(psi)
    else:
        task = benchmarks.estimation_task(args.episode, psi)
    simulator.save_task(task, args.out)
    _write_manifest("make-task", {"kind": args.kind, "episode": args.episode},
                    [], [args.out], 0.0, args.out)
    print(f"wrote {args.kind} task to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ergopose",
        description="Seated-posture estimation, worksheet risk scoring and postural optimization.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_config(p):
        p.add_argument("--config", type=Path, default=None,
                       help="body config file (default: packaged, or $ERGOPOSE_CONFIG_DIR/body.cfg)")

    p = sub.add_parser("gen-dataset", help="generate a labeled posture dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--balance", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--csv", type=Path, default=None, help="also export a CSV mirror")
    add_config(p)
    p.set_defaults(fn=cmd_gen_dataset)

    def add_train_flags(p):
        p.add_argument("--epochs", type=int, default=200)
        p.add_argument("--lr", type=float, default=0.003)
        p.add_argument("--batch", type=int, default=128)
        p.add_argument("--folds", type=int, default=5)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--desk-preset", action="store_true",
                       help="use the desk-scale training preset")
        p.add_argument("--posture-only", action="store_true",
                       help="10-input variant without task-context features")

    p = sub.add_parser("train", help="train the risk surrogate on a dataset")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--report", type=Path, default=None)
    add_train_flags(p)
    add_config(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model, or k-fold cross-validate")
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--model", type=Path, default=None,
                   help="evaluate this model; omit to run k-fold training")
    p.add_argument("--report", type=Path, default=None)
    add_train_flags(p)
    add_config(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("estimate", help="estimate postures from an observation CSV")
    p.add_argument("--observations", type=Path, required=True)
    p.add_argument("--method", choices=("pf", "online-ik", "offline-trajik"), default="pf")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--truth", type=Path, default=None,
                   help="ground-truth trajectory CSV for deviation metrics")
    p.add_argument("--particles", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init-std", type=float, default=0.06,
                   help="initial posture spread around neutral, rad")
    p.add_argument("--accel-std", type=float, default=0.6,
                   help="process acceleration noise, rad/s^2")
    add_config(p)
    p.set_defaults(fn=cmd_estimate)

    def add_sim_flags(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--horizon", type=int, default=1500)
        p.add_argument("--correction-period", type=int, default=5)
        p.add_argument("--cem-samples", type=int, default=1500)
        p.add_argument("--model", type=Path, default=None)

    p = sub.add_parser("simulate", help="run one teleoperation episode")
    p.add_argument("--task", type=Path, required=True)
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--correction", choices=simulator.CORRECTION_SOURCES, default="none")
    p.add_argument("--out", type=Path, required=True)
    add_sim_flags(p)
    add_config(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("compare", help="run the alpha x solver comparison grid")
    p.add_argument("--task", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    add_sim_flags(p)
    add_config(p)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("make-task", help="write a bundled task definition file")
    p.add_argument("--kind", choices=("demo", "estimation"), default="demo")
    p.add_argument("--episode", type=int, default=0,
                   help="episode index for estimation tasks")
    p.add_argument("--out", type=Path, required=True)
    add_config(p)
    p.set_defaults(fn=cmd_make_task)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help/--version, 2 for usage errors
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.fn(args)
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NonConvergence as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE


if __name__ == "__main__":
    raise SystemExit(main())
