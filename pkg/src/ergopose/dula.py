"""Differentiable upper-limb risk surrogate.

A fully connected regression network (hidden layers 124-124-124-7, ReLU,
linear scalar head) fits the worksheet's integer grand score as a real
value, giving a smooth risk objective with exact input gradients for
posture optimization.

Inputs are the 10 joint angles normalized to [-1, 1] by the joint limits
plus an 8-entry task-context encoding: load/3, static muscle use,
repetition, neck angle normalized by pi/2, neck twist/side-bend, trunk
supported, legs supported, arm supported (booleans as 0/1). The remaining
worksheet checkboxes (shoulder raised, arm abducted, across midline,
wrist bent from midline, wrist twist extreme) are scorer-only flags: they
default to false in generated datasets and are not model features. A
posture-only 10-input variant is available via ``include_ctx=False``.

Weights are float32 (the model file's width). ``forward`` and
``input_gradient`` compute in the dtype of their input, so float64 probes
get float64 math — finite-difference checks need that.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kinematics import JointLimits, N_JOINTS
from .rula import TaskContext, _CTX_BOOL_FIELDS, PostureDataset

HIDDEN_DIMS = (124, 124, 124, 7)
CTX_DIM = 8
_NECK_SCALE = np.pi / 2.0

_CTX_ENCODED_BOOLS = (
    "static_muscle_use",
    "repetition",
    "neck_twist_or_side_bend",
    "trunk_supported",
    "legs_supported",
    "arm_supported",
)


class ModelFormatError(ValueError):
    """Raised for corrupt, truncated or wrong-version model files."""


class TrainingError(RuntimeError):
    """Raised when optimization diverges or the dataset is degenerate."""


@dataclass
class TrainConfig:
    epochs: int = 2000
    learning_rate: float = 0.001
    batch_size: int = 1024
    optimizer: str = "adaptive_moments"  # or "sgd_momentum"
    momentum: float = 0.9
    seed: int = 0
    folds: int = 5
    include_ctx: bool = True
    train_fraction: float = 0.8
    # step decay: multiply lr by the factor at these epoch fractions
    lr_decay_points: tuple = (0.6, 0.85)
    lr_decay_factor: float = 0.3

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size and learning_rate must be positive")
        if self.optimizer not in ("adaptive_moments", "sgd_momentum"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if not 0.0 < self.train_fraction < 1.0:
            raise ValueError("train_fraction must be in (0, 1)")


def desk_train_config(seed: int = 0, **overrides) -> TrainConfig:
    """Desk-scale preset: 200 epochs on a balanced 200k-sample dataset."""
    kwargs = dict(epochs=200, learning_rate=0.003, batch_size=128, seed=seed)
    kwargs.update(overrides)
    return TrainConfig(**kwargs)


@dataclass
class EvalReport:
    rounded_accuracy: float
    confusion: np.ndarray  # (7, 7) int, rows = true label, cols = prediction
    per_class_diagonal: np.ndarray  # fraction correct per true class
    mse: float
    loss_trace: np.ndarray | None = None

    def __post_init__(self):
        conf = np.asarray(self.confusion, dtype=np.int64)
        if conf.shape != (7, 7):
            raise ValueError("confusion matrix must be 7x7")
        total = conf.sum()
        if total > 0 and abs(self.rounded_accuracy - np.trace(conf) / total) > 1e-12:
            raise ValueError("rounded_accuracy inconsistent with confusion trace")
        self.confusion = conf

    @property
    def lowest_diagonal(self) -> float:
        present = self.confusion.sum(axis=1) > 0
        return float(self.per_class_diagonal[present].min())

    def summary(self) -> str:
        lines = [
            f"rounded accuracy: {self.rounded_accuracy:.4%}",
            f"lowest confusion diagonal: {self.lowest_diagonal:.4%}",
            f"mse: {self.mse:.6f}",
            "confusion matrix (rows true 1..7, cols predicted 1..7):",
        ]
        for row in self.confusion:
            lines.append("  " + " ".join(f"{v:7d}" for v in row))
        return "\n".join(lines)


@dataclass
class MlpModel:
    layer_dims: tuple
    weights: list  # per layer, float32, shape (in, out)
    biases: list  # per layer, float32, shape (out,)
    norm_center: np.ndarray  # raw-feature normalization: (x - center) / half
    norm_half: np.ndarray

    def __post_init__(self):
        dims = tuple(int(d) for d in self.layer_dims)
        if len(self.weights) != len(dims) - 1 or len(self.biases) != len(dims) - 1:
            raise ValueError("weight/bias count must match layer_dims")
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (dims[i], dims[i + 1]) or b.shape != (dims[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes")
        if not np.all(self.norm_half > 0):
            raise ValueError("normalization half-ranges must be positive")
        self.layer_dims = dims

    @property
    def d_in(self) -> int:
        return self.layer_dims[0]

    @property
    def include_ctx(self) -> bool:
        return self.d_in == N_JOINTS + CTX_DIM


def feature_normalization(lim: JointLimits, include_ctx: bool = True):
    """(center, half) pairs turning raw features into the network input."""
    center = ((lim.q_min + lim.q_max) / 2.0).tolist()
    half = ((lim.q_max - lim.q_min) / 2.0).tolist()
    if include_ctx:
        center += [0.0] * CTX_DIM
        half += [3.0, 1.0, 1.0, _NECK_SCALE, 1.0, 1.0, 1.0, 1.0]
    return np.array(center), np.array(half)


def _raw_features(q, ctx_arrays, include_ctx: bool):
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if not include_ctx:
        return q
    n = q.shape[0]

    def col(name):
        return np.broadcast_to(np.asarray(ctx_arrays[name], dtype=float), (n,))

    cols = [
        col("load_category"),
        col("static_muscle_use"),
        col("repetition"),
        col("neck_angle"),
        col("neck_twist_or_side_bend"),
        col("trunk_supported"),
        col("legs_supported"),
        col("arm_supported"),
    ]
    return np.concatenate([q, np.stack(cols, axis=1)], axis=1)


def encode_input(q, ctx: TaskContext | None, lim: JointLimits, include_ctx: bool = True):
    """Normalized network input for one posture (+ optional context)."""
    from .rula import _ctx_to_arrays

    ctx_arrays = _ctx_to_arrays(ctx if ctx is not None else TaskContext())
    center, half = feature_normalization(lim, include_ctx)
    raw = _raw_features(np.asarray(q, dtype=float)[None, :], ctx_arrays, include_ctx)
    return ((raw - center) / half)[0]


def encode_batch(q, ctx_arrays, model: MlpModel):
    raw = _raw_features(q, ctx_arrays, model.include_ctx)
    return (raw - model.norm_center) / model.norm_half


def forward(model: MlpModel, x):
    """Network output for encoded input x; scalar for a single sample.

    Math runs in x's dtype: float32 for training speed, float64 when a
    float64 probe is supplied.
    """
    x = np.asarray(x)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != model.d_in:
        raise ValueError(f"input dim {a.shape[1]} != model dim {model.d_in}")
    dtype = np.float64 if a.dtype == np.float64 else np.float32
    a = a.astype(dtype, copy=False)
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ W.astype(dtype, copy=False) + b.astype(dtype, copy=False)
        if i != last:
            a = np.maximum(a, 0)
    out = a[:, 0]
    return float(out[0]) if single else out


def input_gradient(model: MlpModel, x):
    """Exact gradient of forward w.r.t. x (ReLU subgradient 0 at kinks)."""
    x = np.asarray(x)
    single = x.ndim == 1
    a = np.atleast_2d(x)
    if a.shape[1] != model.d_in:
        raise ValueError(f"input dim {a.shape[1]} != model dim {model.d_in}")
    dtype = np.float64 if a.dtype == np.float64 else np.float32
    a = a.astype(dtype, copy=False)

    masks = []
    last = len(model.weights) - 1
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ W.astype(dtype, copy=False) + b.astype(dtype, copy=False)
        if i != last:
            mask = a > 0
            masks.append(mask)
            a = np.maximum(a, 0)

    g = np.ones((a.shape[0], 1), dtype=dtype)
    for i in range(last, -1, -1):
        g = g @ model.weights[i].astype(dtype, copy=False).T
        if i > 0:
            g = g * masks[i - 1]
    return g[0] if single else g


def _init_model(d_in: int, lim: JointLimits, include_ctx: bool, rng) -> MlpModel:
    dims = (d_in,) + HIDDEN_DIMS + (1,)
    weights, biases = [], []
    for i in range(len(dims) - 1):
        bound = 1.0 / np.sqrt(dims[i])
        weights.append(rng.uniform(-bound, bound, size=(dims[i], dims[i + 1])).astype(np.float32))
        biases.append(rng.uniform(-bound, bound, size=dims[i + 1]).astype(np.float32))
    center, half = feature_normalization(lim, include_ctx)
    return MlpModel(layer_dims=dims, weights=weights, biases=biases,
                    norm_center=center, norm_half=half)


def _forward_backward(model: MlpModel, X, y):
    """Mean-squared-error loss and parameter gradients for one batch."""
    acts = [X]
    a = X
    last = len(model.weights) - 1
    masks = []
    for i, (W, b) in enumerate(zip(model.weights, model.biases)):
        a = a @ W + b
        if i != last:
            masks.append(a > 0)
            a = np.maximum(a, 0)
        acts.append(a)

    out = acts[-1][:, 0]
    err = out - y
    loss = float(np.mean(err * err))

    n = X.shape[0]
    delta = (2.0 / n) * err[:, None].astype(np.float32)
    grads_w = [None] * len(model.weights)
    grads_b = [None] * len(model.biases)
    for i in range(last, -1, -1):
        grads_w[i] = acts[i].T @ delta
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ model.weights[i].T) * masks[i - 1]
    return loss, grads_w, grads_b


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1t = 1.0 - self.b1 ** self.t
        b2t = 1.0 - self.b2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * (g * g)
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


class _Momentum:
    def __init__(self, params, lr, momentum):
        self.lr, self.mu = lr, momentum
        self.vel = [np.zeros_like(p) for p in params]

    def step(self, params, grads):
        for p, g, v in zip(params, grads, self.vel):
            v *= self.mu
            v -= self.lr * g
            p += v


def _prepare_xy(dataset: PostureDataset, cfg: TrainConfig, lim: JointLimits,
                require_all_classes: bool = True):
    if len(dataset) == 0:
        raise TrainingError("dataset is empty")
    counts = dataset.class_counts
    missing = [label for label, c in counts.items() if c == 0]
    if missing and require_all_classes:
        raise TrainingError(f"dataset is missing label classes {missing}")
    q, ctx_arrays, labels = dataset.features_and_labels()
    center, half = feature_normalization(lim, cfg.include_ctx)
    raw = _raw_features(q, ctx_arrays, cfg.include_ctx)
    X = ((raw - center) / half).astype(np.float32)
    y = labels.astype(np.float32)
    return X, y


def _fit(X, y, cfg: TrainConfig, lim: JointLimits, rng) -> tuple[MlpModel, np.ndarray]:
    model = _init_model(X.shape[1], lim, cfg.include_ctx, rng)
    params = model.weights + model.biases
    if cfg.optimizer == "adaptive_moments":
        opt = _Adam(params, cfg.learning_rate)
    else:
        opt = _Momentum(params, cfg.learning_rate, cfg.momentum)

    decay_epochs = {int(frac * cfg.epochs) for frac in cfg.lr_decay_points}
    n = len(X)
    trace = np.empty(cfg.epochs)
    for epoch in range(cfg.epochs):
        if epoch in decay_epochs:
            opt.lr *= cfg.lr_decay_factor
        perm = rng.permutation(n)
        total = 0.0
        batches = 0
        for start in range(0, n, cfg.batch_size):
            idx = perm[start : start + cfg.batch_size]
            loss, gw, gb = _forward_backward(model, X[idx], y[idx])
            if not np.isfinite(loss):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {batches} "
                    f"(lr={cfg.learning_rate}, optimizer={cfg.optimizer})"
                )
            opt.step(params, gw + gb)
            total += loss
            batches += 1
        trace[epoch] = total / batches
    return model, trace


def evaluate(model: MlpModel, X, y, loss_trace=None) -> EvalReport:
    pred = forward(model, X.astype(np.float32, copy=False))
    rounded = np.clip(np.rint(pred), 1, 7).astype(np.int64)
    true = np.asarray(y).astype(np.int64)
    confusion = np.zeros((7, 7), dtype=np.int64)
    np.add.at(confusion, (true - 1, rounded - 1), 1)
    row_sums = confusion.sum(axis=1)
    diag = np.where(row_sums > 0, np.diag(confusion) / np.maximum(row_sums, 1), 0.0)
    total = confusion.sum()
    return EvalReport(
        rounded_accuracy=float(np.trace(confusion) / total),
        confusion=confusion,
        per_class_diagonal=diag,
        mse=float(np.mean((pred - np.asarray(y, dtype=pred.dtype)) ** 2)),
        loss_trace=loss_trace,
    )


def train(dataset: PostureDataset, cfg: TrainConfig,
          lim: JointLimits | None = None,
          require_all_classes: bool = True) -> tuple[MlpModel, EvalReport]:
    """Seeded train/test split, minibatch MSE regression, held-out report.

    ``require_all_classes=False`` admits degenerate (e.g. single-class)
    datasets for diagnostic fits; the standard pipeline keeps the check.
    """
    if lim is None:
        from .config import default_limits

        lim = default_limits()
    X, y = _prepare_xy(dataset, cfg, lim, require_all_classes=require_all_classes)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(X))
    n_train = int(round(len(X) * cfg.train_fraction))
    train_idx, test_idx = perm[:n_train], perm[n_train:]
    model, trace = _fit(X[train_idx], y[train_idx], cfg, lim, rng)
    report = evaluate(model, X[test_idx], y[test_idx], loss_trace=trace)
    return model, report


def kfold_cv(dataset: PostureDataset, cfg: TrainConfig,
             lim: JointLimits | None = None) -> list[EvalReport]:
    """Disjoint seeded folds; one held-out report per fold."""
    if cfg.folds < 2:
        raise ValueError("folds must be at least 2")
    if cfg.folds > len(dataset):
        raise ValueError("more folds than records")
    if lim is None:
        from .config import default_limits

        lim = default_limits()
    X, y = _prepare_xy(dataset, cfg, lim)
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(len(X))
    folds = np.array_split(perm, cfg.folds)
    reports = []
    for k, test_idx in enumerate(folds):
        train_idx = np.concatenate([f for j, f in enumerate(folds) if j != k])
        fold_rng = np.random.default_rng((cfg.seed, k))
        model, trace = _fit(X[train_idx], y[train_idx], cfg, lim, fold_rng)
        reports.append(evaluate(model, X[test_idx], y[test_idx], loss_trace=trace))
    return reports


# ---------------------------------------------------------------------------
# Model file format: magic, version, layer dims, normalization table,
# then per-layer float32 weight blocks (row-major) and biases.

_MAGIC = b"DULAMODL"
_VERSION = 1


def save_model(model: MlpModel, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HH", _VERSION, len(model.layer_dims)))
        fh.write(np.asarray(model.layer_dims, dtype="<u4").tobytes())
        fh.write(model.norm_center.astype("<f4").tobytes())
        fh.write(model.norm_half.astype("<f4").tobytes())
        for W, b in zip(model.weights, model.biases):
            fh.write(np.ascontiguousarray(W, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def load_model(path) -> MlpModel:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:8] != _MAGIC:
        raise ModelFormatError("not a model file (bad magic)")
    version, n_dims = struct.unpack("<HH", data[8:12])
    if version != _VERSION:
        raise ModelFormatError(f"unsupported model version {version} (expected {_VERSION})")
    off = 12

    def take(count, dtype):
        nonlocal off
        width = np.dtype(dtype).itemsize * count
        if off + width > len(data):
            raise ModelFormatError("truncated model file")
        out = np.frombuffer(data[off : off + width], dtype=dtype).copy()
        off += width
        return out

    dims = tuple(int(d) for d in take(n_dims, "<u4"))
    center = take(dims[0], "<f4").astype(np.float64)
    half = take(dims[0], "<f4").astype(np.float64)
    weights, biases = [], []
    for i in range(len(dims) - 1):
        weights.append(take(dims[i] * dims[i + 1], "<f4").reshape(dims[i], dims[i + 1]))
        biases.append(take(dims[i + 1], "<f4"))
    if off != len(data):
        raise ModelFormatError("trailing bytes after model payload")
    return MlpModel(layer_dims=dims, weights=weights, biases=biases,
                    norm_center=center, norm_half=half)
