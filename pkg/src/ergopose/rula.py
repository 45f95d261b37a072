"""RULA worksheet scoring and labeled posture dataset generation.

Scoring follows the published upper-limb worksheet: angle bands for each
body segment, checkbox adjustments, lookup tables A/B/C and the four
action levels. The tables are hand-entered constants; ``tests`` carry an
independently re-entered copy plus hand-computed fixtures.

The worksheet is categorical where a continuous model needs thresholds.
The declared deadbands (radians unless noted) are module constants below:
wrist "neutral" band, "near end of range" pronation, trunk/neck twist and
side-bend checkboxes, and the neck extension cutoff. Hand-computed test
fixtures use the same constants.

Single-context scoring is exposed as :func:`score_posture`; dataset
generation runs the same band logic vectorized over record arrays.
"""

from __future__ import annotations

import enum
import io
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .kinematics import (
    ELBOW_FLEXION,
    FOREARM_PRONATION,
    N_JOINTS,
    SHOULDER_FLEXION,
    TORSO_FLEXION,
    TORSO_LATERAL,
    TORSO_ROTATION,
    WRIST_FLEXION,
    JointLimits,
)

_DEG = np.pi / 180.0

# Declared deadbands for the worksheet's categorical checkboxes.
WRIST_NEUTRAL_BAND = 5.0 * _DEG
WRIST_BAND_LIMIT = 15.0 * _DEG
WRIST_TWIST_NEAR_END = 1.0  # rad of pronation counting as "end of range"
TRUNK_TWIST_THRESHOLD = 20.0 * _DEG
TRUNK_SIDE_THRESHOLD = 20.0 * _DEG
NECK_EXTENSION_THRESHOLD = -5.0 * _DEG

UPPER_ARM_BAND = (20.0 * _DEG, 45.0 * _DEG, 90.0 * _DEG)
LOWER_ARM_BAND = (60.0 * _DEG, 100.0 * _DEG)
NECK_BAND = (10.0 * _DEG, 20.0 * _DEG)
TRUNK_BAND = (20.0 * _DEG, 60.0 * _DEG)


class LoadCategory(enum.IntEnum):
    """Worksheet force/load categories; the value is the score add."""

    NONE = 0      # < 2 kg intermittent
    LOW = 1       # 2-10 kg intermittent
    MEDIUM = 2    # 2-10 kg static or repeated
    HIGH = 3      # > 10 kg, or repeated/static, or shock


class ActionLevel(enum.Enum):
    ACCEPTABLE = "acceptable"
    INVESTIGATE = "investigate"
    INVESTIGATE_CHANGE_SOON = "investigate_change_soon"
    INVESTIGATE_CHANGE_NOW = "investigate_change_now"


def interpret(grand: int) -> ActionLevel:
    """Action level for a grand score: 1-2, 3-4, 5-6, 7."""
    if not 1 <= int(grand) <= 7:
        raise ValueError(f"grand score must be in [1, 7], got {grand}")
    if grand <= 2:
        return ActionLevel.ACCEPTABLE
    if grand <= 4:
        return ActionLevel.INVESTIGATE
    if grand <= 6:
        return ActionLevel.INVESTIGATE_CHANGE_SOON
    return ActionLevel.INVESTIGATE_CHANGE_NOW


@dataclass(frozen=True)
class TaskContext:
    """Worksheet task parameters.

    Defaults describe the benign seated task: no load, no repetition,
    trunk and legs supported, every penalty checkbox off.
    """

    load_category: LoadCategory = LoadCategory.NONE
    static_muscle_use: bool = False   # posture held > 1 min
    repetition: bool = False          # action 4x/min or more
    neck_angle: float = 0.0           # radians, + is flexion
    neck_twist_or_side_bend: bool = False
    trunk_supported: bool = True
    legs_supported: bool = True
    arm_supported: bool = False
    shoulder_raised: bool = False
    arm_abducted: bool = False
    working_across_midline: bool = False
    wrist_bent_from_midline: bool = False
    wrist_twist_extreme: bool = False

    def __post_init__(self):
        if not np.isfinite(self.neck_angle):
            raise ValueError("neck_angle must be finite")
        object.__setattr__(self, "load_category", LoadCategory(self.load_category))


# ---------------------------------------------------------------------------
# Worksheet lookup tables (hand-entered).

# Table A, indexed [upper_arm-1][lower_arm-1][wrist-1][wrist_twist-1].
TABLE_A = np.array(
    [
        [  # upper arm 1
            [[1, 2], [2, 2], [2, 3], [3, 3]],
            [[2, 2], [2, 2], [3, 3], [3, 3]],
            [[2, 3], [3, 3], [3, 3], [4, 4]],
        ],
        [  # upper arm 2
            [[2, 3], [3, 3], [3, 4], [4, 4]],
            [[3, 3], [3, 3], [3, 4], [4, 4]],
            [[3, 4], [4, 4], [4, 4], [5, 5]],
        ],
        [  # upper arm 3
            [[3, 3], [4, 4], [4, 4], [5, 5]],
            [[3, 4], [4, 4], [4, 4], [5, 5]],
            [[4, 4], [4, 4], [4, 5], [5, 5]],
        ],
        [  # upper arm 4
            [[4, 4], [4, 4], [4, 5], [5, 5]],
            [[4, 4], [4, 4], [4, 5], [5, 5]],
            [[4, 4], [4, 5], [5, 5], [6, 6]],
        ],
        [  # upper arm 5
            [[5, 5], [5, 5], [5, 6], [6, 7]],
            [[5, 6], [6, 6], [6, 7], [7, 7]],
            [[6, 6], [6, 7], [7, 7], [7, 8]],
        ],
        [  # upper arm 6
            [[7, 7], [7, 7], [7, 8], [8, 9]],
            [[8, 8], [8, 8], [8, 9], [9, 9]],
            [[9, 9], [9, 9], [9, 9], [9, 9]],
        ],
    ],
    dtype=np.int64,
)

# Table B, indexed [neck-1][trunk-1][legs-1].
TABLE_B = np.array(
    [
        [[1, 3], [2, 3], [3, 4], [5, 5], [6, 6], [7, 7]],
        [[2, 3], [2, 3], [4, 5], [5, 5], [6, 7], [7, 7]],
        [[3, 3], [3, 4], [4, 5], [5, 6], [6, 7], [7, 7]],
        [[5, 5], [5, 6], [6, 7], [7, 7], [7, 7], [8, 8]],
        [[7, 7], [7, 7], [7, 8], [8, 8], [8, 8], [8, 8]],
        [[8, 8], [8, 8], [8, 8], [8, 9], [9, 9], [9, 9]],
    ],
    dtype=np.int64,
)

# Table C, indexed [score_c-1][score_d-1]; scores above the table clamp
# to the last row/column.
TABLE_C = np.array(
    [
        [1, 2, 3, 3, 4, 5, 5],
        [2, 2, 3, 4, 4, 5, 5],
        [3, 3, 3, 4, 4, 5, 6],
        [3, 3, 3, 4, 5, 6, 6],
        [4, 4, 4, 5, 6, 7, 7],
        [4, 4, 5, 6, 6, 7, 7],
        [5, 5, 6, 6, 7, 7, 7],
        [5, 5, 6, 7, 7, 7, 7],
    ],
    dtype=np.int64,
)


def grand_from_tables(score_c: int, score_d: int) -> int:
    """Table C lookup with the worksheet's clamp-above-range rule."""
    row = min(max(int(score_c), 1), 8) - 1
    col = min(max(int(score_d), 1), 7) - 1
    return int(TABLE_C[row, col])


@dataclass(frozen=True)
class RulaAssessment:
    upper_arm: int
    lower_arm: int
    wrist: int
    wrist_twist: int
    table_a: int
    muscle_add: int
    force_add: int
    score_c_wrist_arm: int
    neck: int
    trunk: int
    legs: int
    table_b: int
    score_d_neck_trunk_leg: int
    grand: int
    action_level: ActionLevel

    def __post_init__(self):
        if not 1 <= self.grand <= 7:
            raise ValueError("grand score out of [1, 7]")
        if self.grand != grand_from_tables(self.score_c_wrist_arm, self.score_d_neck_trunk_leg):
            raise ValueError("grand inconsistent with Table C lookup")
        if self.action_level is not interpret(self.grand):
            raise ValueError("action_level inconsistent with grand score")


# ---------------------------------------------------------------------------
# Vectorized band logic. Every helper takes/returns numpy arrays so the
# same code path serves scalar scoring and bulk dataset labeling.


def _upper_arm_score(q3, raised, abducted, supported):
    mag = np.abs(q3)
    score = np.where(
        mag <= UPPER_ARM_BAND[0],
        1,
        np.where(q3 < -UPPER_ARM_BAND[0], 2, np.where(q3 <= UPPER_ARM_BAND[1], 2, np.where(q3 <= UPPER_ARM_BAND[2], 3, 4))),
    )
    score = score + raised + abducted - supported
    return np.clip(score, 1, 6)


def _lower_arm_score(q6, across_midline):
    inside = (q6 >= LOWER_ARM_BAND[0]) & (q6 <= LOWER_ARM_BAND[1])
    score = np.where(inside, 1, 2) + across_midline
    return np.clip(score, 1, 3)


def _wrist_score(q8, bent_from_midline):
    mag = np.abs(q8)
    score = np.where(mag <= WRIST_NEUTRAL_BAND, 1, np.where(mag <= WRIST_BAND_LIMIT, 2, 3))
    return np.clip(score + bent_from_midline, 1, 4)


def _wrist_twist_score(q7, twist_extreme):
    near_end = np.abs(q7) > WRIST_TWIST_NEAR_END
    return np.where(near_end | (twist_extreme > 0), 2, 1)


def _neck_score(neck_angle, twist_or_side):
    extended = neck_angle < NECK_EXTENSION_THRESHOLD
    flex = np.maximum(neck_angle, 0.0)
    banded = np.where(flex <= NECK_BAND[0], 1, np.where(flex <= NECK_BAND[1], 2, 3))
    score = np.where(extended, 4, banded) + twist_or_side
    return np.clip(score, 1, 6)


def _trunk_score(q0, q1, q2, supported):
    upright_supported = (supported > 0) & (q0 <= 0.0)
    banded = np.where(q0 <= TRUNK_BAND[0], 2, np.where(q0 <= TRUNK_BAND[1], 3, 4))
    score = np.where(upright_supported, 1, banded)
    score = score + (np.abs(q2) > TRUNK_TWIST_THRESHOLD) + (np.abs(q1) > TRUNK_SIDE_THRESHOLD)
    return np.clip(score, 1, 6)


def _score_arrays(q, ctx_arrays):
    """Score a (N, 10) posture block against per-record context arrays."""
    q = np.asarray(q, dtype=float)
    c = ctx_arrays
    upper = _upper_arm_score(
        q[:, SHOULDER_FLEXION], c["shoulder_raised"], c["arm_abducted"], c["arm_supported"]
    )
    lower = _lower_arm_score(q[:, ELBOW_FLEXION], c["working_across_midline"])
    wrist = _wrist_score(q[:, WRIST_FLEXION], c["wrist_bent_from_midline"])
    twist = _wrist_twist_score(q[:, FOREARM_PRONATION], c["wrist_twist_extreme"])
    table_a = TABLE_A[upper - 1, lower - 1, wrist - 1, twist - 1]

    muscle = ((c["static_muscle_use"] > 0) | (c["repetition"] > 0)).astype(np.int64)
    force = c["load_category"].astype(np.int64)
    score_c = table_a + muscle + force

    neck = _neck_score(c["neck_angle"], c["neck_twist_or_side_bend"])
    trunk = _trunk_score(
        q[:, TORSO_FLEXION], q[:, TORSO_LATERAL], q[:, TORSO_ROTATION], c["trunk_supported"]
    )
    legs = np.where(c["legs_supported"] > 0, 1, 2)
    table_b = TABLE_B[neck - 1, trunk - 1, legs - 1]
    score_d = table_b + muscle + force

    grand = TABLE_C[np.clip(score_c, 1, 8) - 1, np.clip(score_d, 1, 7) - 1]
    return {
        "upper_arm": upper,
        "lower_arm": lower,
        "wrist": wrist,
        "wrist_twist": twist,
        "table_a": table_a,
        "muscle_add": muscle,
        "force_add": force,
        "score_c": score_c,
        "neck": neck,
        "trunk": trunk,
        "legs": legs,
        "table_b": table_b,
        "score_d": score_d,
        "grand": grand,
    }


_CTX_BOOL_FIELDS = (
    "static_muscle_use",
    "repetition",
    "neck_twist_or_side_bend",
    "trunk_supported",
    "legs_supported",
    "arm_supported",
    "shoulder_raised",
    "arm_abducted",
    "working_across_midline",
    "wrist_bent_from_midline",
    "wrist_twist_extreme",
)


def _ctx_to_arrays(ctx: TaskContext, n: int = 1) -> dict:
    out = {"load_category": np.full(n, int(ctx.load_category), dtype=np.int64),
           "neck_angle": np.full(n, float(ctx.neck_angle))}
    for name in _CTX_BOOL_FIELDS:
        out[name] = np.full(n, int(getattr(ctx, name)), dtype=np.int64)
    return out


def score_posture(q, ctx: TaskContext) -> RulaAssessment:
    """Full worksheet assessment of one posture under one task context."""
    q = np.asarray(q, dtype=float)
    if q.shape != (N_JOINTS,):
        raise ValueError("posture must be a 10-vector")
    r = _score_arrays(q[None, :], _ctx_to_arrays(ctx))
    grand = int(r["grand"][0])
    return RulaAssessment(
        upper_arm=int(r["upper_arm"][0]),
        lower_arm=int(r["lower_arm"][0]),
        wrist=int(r["wrist"][0]),
        wrist_twist=int(r["wrist_twist"][0]),
        table_a=int(r["table_a"][0]),
        muscle_add=int(r["muscle_add"][0]),
        force_add=int(r["force_add"][0]),
        score_c_wrist_arm=int(r["score_c"][0]),
        neck=int(r["neck"][0]),
        trunk=int(r["trunk"][0]),
        legs=int(r["legs"][0]),
        table_b=int(r["table_b"][0]),
        score_d_neck_trunk_leg=int(r["score_d"][0]),
        grand=grand,
        action_level=interpret(grand),
    )


# ---------------------------------------------------------------------------
# Posture sampling and dataset generation.


def sample_posture(rng: np.random.Generator, lim: JointLimits) -> np.ndarray:
    """One uniform draw per joint within the limit box."""
    return rng.uniform(lim.q_min, lim.q_max)


def default_ctx_sampler(rng: np.random.Generator) -> TaskContext:
    """The fixed benign context (task parameters held constant)."""
    return TaskContext()


class DatasetGenerationError(RuntimeError):
    """Raised when class balancing exhausts its draw budget."""

    def __init__(self, message: str, histogram: dict):
        super().__init__(f"{message}; achieved histogram {histogram}")
        self.histogram = histogram


RECORD_DTYPE = np.dtype(
    [("q", "<f4", (N_JOINTS,)), ("neck_angle", "<f4"), ("load_category", "u1")]
    + [(name, "u1") for name in _CTX_BOOL_FIELDS]
    + [("label", "u1")]
)

_MAGIC = b"RULADSET"
_VERSION = 1


@dataclass(frozen=True)
class LabeledPosture:
    q: np.ndarray
    ctx: TaskContext
    label: int


class PostureDataset:
    """Labeled postures stored as a structured record array.

    Angles are float32 (the file format's width); labels were computed on
    the stored float32 values, so relabeling any record reproduces it.
    """

    def __init__(self, records: np.ndarray):
        if records.dtype != RECORD_DTYPE:
            raise ValueError("records must use RECORD_DTYPE")
        self.records = records

    def __len__(self) -> int:
        return len(self.records)

    @property
    def labels(self) -> np.ndarray:
        return self.records["label"].astype(np.int64)

    @property
    def class_counts(self) -> dict:
        counts = np.bincount(self.labels, minlength=8)[1:8]
        return {label: int(c) for label, c in enumerate(counts, start=1)}

    def record(self, i: int) -> LabeledPosture:
        row = self.records[i]
        ctx = TaskContext(
            load_category=LoadCategory(int(row["load_category"])),
            neck_angle=float(row["neck_angle"]),
            **{name: bool(row[name]) for name in _CTX_BOOL_FIELDS},
        )
        return LabeledPosture(q=row["q"].astype(np.float64), ctx=ctx, label=int(row["label"]))

    def features_and_labels(self):
        """(q float64 (N,10), ctx arrays dict, labels int64 (N,))."""
        q = self.records["q"].astype(np.float64)
        ctx = {"load_category": self.records["load_category"].astype(np.int64),
               "neck_angle": self.records["neck_angle"].astype(np.float64)}
        for name in _CTX_BOOL_FIELDS:
            ctx[name] = self.records[name].astype(np.int64)
        return q, ctx, self.labels


def save_dataset(ds: PostureDataset, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(np.uint16(_VERSION).tobytes())
        fh.write(np.uint64(len(ds)).tobytes())
        fh.write(ds.records.tobytes())


def load_dataset(path) -> PostureDataset:
    data = Path(path).read_bytes()
    if data[:8] != _MAGIC:
        raise ValueError("not a posture dataset file (bad magic)")
    version = int(np.frombuffer(data[8:10], dtype=np.uint16)[0])
    if version != _VERSION:
        raise ValueError(f"unsupported dataset version {version} (expected {_VERSION})")
    n = int(np.frombuffer(data[10:18], dtype=np.uint64)[0])
    body = data[18:]
    if len(body) != n * RECORD_DTYPE.itemsize:
        raise ValueError("truncated or oversized dataset file")
    records = np.frombuffer(body, dtype=RECORD_DTYPE).copy()
    return PostureDataset(records)


CSV_COLUMNS = (
    [f"q_{i}" for i in range(N_JOINTS)]
    + ["neck_angle", "load_category"]
    + list(_CTX_BOOL_FIELDS)
    + ["label"]
)


def export_dataset_csv(ds: PostureDataset, path) -> None:
    """Textual mirror of the binary format, for inspection."""
    with open(path, "w") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in ds.records:
            vals = [f"{v:.9g}" for v in row["q"]]
            vals.append(f"{row['neck_angle']:.9g}")
            vals.append(str(int(row["load_category"])))
            vals.extend(str(int(row[name])) for name in _CTX_BOOL_FIELDS)
            vals.append(str(int(row["label"])))
            fh.write(",".join(vals) + "\n")


def read_dataset_csv(path) -> PostureDataset:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header != CSV_COLUMNS:
            raise ValueError("unexpected dataset CSV columns")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    records = np.zeros(len(rows), dtype=RECORD_DTYPE)
    for i, parts in enumerate(rows):
        records[i]["q"] = [np.float32(p) for p in parts[:N_JOINTS]]
        records[i]["neck_angle"] = np.float32(parts[N_JOINTS])
        records[i]["load_category"] = int(parts[N_JOINTS + 1])
        for j, name in enumerate(_CTX_BOOL_FIELDS):
            records[i][name] = int(parts[N_JOINTS + 2 + j])
        records[i]["label"] = int(parts[-1])
    return PostureDataset(records)


def _targeted_box(label: int, lim: JointLimits):
    """Joint-range overrides biasing draws toward a rare label.

    Boxes are derived from the band thresholds; draws are still verified
    by the scorer, so the boxes only have to be likely, not exact.
    """
    lo = lim.q_min.copy()
    hi = lim.q_max.copy()

    def clip_set(j, a, b):
        lo[j] = max(lim.q_min[j], a)
        hi[j] = min(lim.q_max[j], b)
        if lo[j] >= hi[j]:  # degenerate overlap: fall back to full range
            lo[j], hi[j] = lim.q_min[j], lim.q_max[j]

    if label in (1, 2):
        clip_set(TORSO_FLEXION, lim.q_min[TORSO_FLEXION], 0.0 if label == 1 else 18 * _DEG)
        clip_set(TORSO_LATERAL, -TRUNK_SIDE_THRESHOLD, TRUNK_SIDE_THRESHOLD)
        clip_set(TORSO_ROTATION, -TRUNK_TWIST_THRESHOLD, TRUNK_TWIST_THRESHOLD)
        clip_set(SHOULDER_FLEXION, -UPPER_ARM_BAND[0], UPPER_ARM_BAND[0])
        clip_set(ELBOW_FLEXION, LOWER_ARM_BAND[0], LOWER_ARM_BAND[1])
        clip_set(FOREARM_PRONATION, -WRIST_TWIST_NEAR_END, WRIST_TWIST_NEAR_END)
        band = WRIST_NEUTRAL_BAND if label == 1 else WRIST_BAND_LIMIT - _DEG
        clip_set(WRIST_FLEXION, -band, band)
    elif label == 6:
        clip_set(TORSO_FLEXION, 22 * _DEG, 58 * _DEG)
        clip_set(SHOULDER_FLEXION, 50 * _DEG, 88 * _DEG)
        clip_set(ELBOW_FLEXION, 0.0, 55 * _DEG)
        clip_set(WRIST_FLEXION, 6 * _DEG, 14 * _DEG)
    elif label == 7:
        clip_set(TORSO_FLEXION, 62 * _DEG, lim.q_max[TORSO_FLEXION])
        clip_set(TORSO_LATERAL, 12 * _DEG, lim.q_max[TORSO_LATERAL])
        clip_set(TORSO_ROTATION, 12 * _DEG, lim.q_max[TORSO_ROTATION])
        clip_set(SHOULDER_FLEXION, 92 * _DEG, lim.q_max[SHOULDER_FLEXION])
        clip_set(ELBOW_FLEXION, 0.0, 55 * _DEG)
        clip_set(FOREARM_PRONATION, 61 * _DEG, lim.q_max[FOREARM_PRONATION])
        clip_set(WRIST_FLEXION, 16 * _DEG, lim.q_max[WRIST_FLEXION])
    else:
        return None  # labels 3-5 are abundant under uniform draws
    return lo, hi


def _draw_chunk(rng, lim, size, ctx_sampler, box=None):
    """Draw, cast to float32 and label one chunk of records."""
    lo, hi = (lim.q_min, lim.q_max) if box is None else box
    q32 = rng.uniform(lo, hi, size=(size, N_JOINTS)).astype(np.float32)
    q = q32.astype(np.float64)

    records = np.zeros(size, dtype=RECORD_DTYPE)
    records["q"] = q32
    if ctx_sampler is None:
        ctx_arrays = _ctx_to_arrays(TaskContext(), size)
    else:
        ctxs = [ctx_sampler(rng) for _ in range(size)]
        neck32 = np.array([np.float32(c.neck_angle) for c in ctxs], dtype=np.float32)
        ctx_arrays = {
            "load_category": np.array([int(c.load_category) for c in ctxs], dtype=np.int64),
            "neck_angle": neck32.astype(np.float64),
        }
        for name in _CTX_BOOL_FIELDS:
            ctx_arrays[name] = np.array([int(getattr(c, name)) for c in ctxs], dtype=np.int64)
    records["neck_angle"] = ctx_arrays["neck_angle"].astype(np.float32)
    records["load_category"] = ctx_arrays["load_category"]
    for name in _CTX_BOOL_FIELDS:
        records[name] = ctx_arrays[name]

    labels = _score_arrays(q, ctx_arrays)["grand"]
    records["label"] = labels
    return records, labels


def generate_dataset(
    n: int,
    balance: bool = True,
    ctx_sampler=None,
    seed: int = 0,
    lim: JointLimits | None = None,
    chunk_size: int = 8192,
    max_extra_draws: int | None = None,
) -> PostureDataset:
    """Seeded uniform posture sampling with optional class balancing.

    With ``balance`` every label class ends up with at least floor(n/14)
    records; rare classes are oversampled via targeted joint-range boxes
    (labels 1, 2, 6 and 7 are infrequent under uniform draws). Chunks use
    independently seeded generators, so generation order — and hence the
    output — is deterministic for a given seed and chunk size.
    """
    if n <= 0:
        raise ValueError("n must be positive")
    if lim is None:
        from .config import default_limits

        lim = default_limits()

    ss = np.random.SeedSequence(seed)
    chunk_seeds = iter_spawn(ss)

    pools = {label: [] for label in range(1, 8)}
    draw_order = []
    drawn = 0

    def absorb(records, labels):
        nonlocal drawn
        draw_order.append(records)
        for label in range(1, 8):
            mask = labels == label
            if np.any(mask):
                pools[label].append(records[mask])
        drawn += len(records)

    while drawn < n:
        size = min(chunk_size, n - drawn)
        rng = np.random.Generator(np.random.PCG64(next(chunk_seeds)))
        absorb(*_draw_chunk(rng, lim, size, ctx_sampler))

    if not balance:
        return PostureDataset(np.concatenate(draw_order)[:n])

    def counts():
        return {label: sum(len(block) for block in pools[label]) for label in range(1, 8)}

    target = n // 14
    budget = max_extra_draws if max_extra_draws is not None else max(200 * n, 1_000_000)
    extra = 0
    while True:
        have = counts()
        deficient = [label for label in range(1, 8) if have[label] < target]
        if not deficient:
            break
        if extra >= budget:
            raise DatasetGenerationError(
                f"class balancing exhausted its draw budget ({budget} extra draws)", have
            )
        for label in deficient:
            rng = np.random.Generator(np.random.PCG64(next(chunk_seeds)))
            box = _targeted_box(label, lim)
            absorb(*_draw_chunk(rng, lim, chunk_size, ctx_sampler, box=box))
            extra += chunk_size

    blocks = []
    leftovers = {}
    for label in range(1, 8):
        pool = np.concatenate(pools[label]) if pools[label] else np.zeros(0, dtype=RECORD_DTYPE)
        blocks.append(pool[:target])
        leftovers[label] = pool[target:]
    # round-robin the remainder across classes so no single class dominates
    need = n - 7 * target
    taken = {label: 0 for label in range(1, 8)}
    filler_rows = []
    while need > 0:
        progressed = False
        for label in range(1, 8):
            if need == 0:
                break
            if taken[label] < len(leftovers[label]):
                filler_rows.append(leftovers[label][taken[label]])
                taken[label] += 1
                need -= 1
                progressed = True
        if not progressed:
            break  # pools exhausted; n - need records is all we have
    records = np.concatenate(blocks + [np.array(filler_rows, dtype=RECORD_DTYPE)])
    return PostureDataset(records[:n])


def iter_spawn(ss: np.random.SeedSequence):
    """Yield child seed sequences one at a time (deterministic order)."""
    i = 0
    while True:
        yield np.random.SeedSequence(entropy=ss.entropy, spawn_key=(i,))
        i += 1
