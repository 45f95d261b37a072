"""Body configuration: anthropometry and joint limits.

The on-disk format is a plain INI file (``configparser``) with three
sections. Lengths are meters, angles radians::

    [segments]
    torso_length = 0.55
    ...

    [chair_to_robot]
    position = 0.0 0.0 0.0
    quaternion = 1.0 0.0 0.0 0.0   ; w x y z

    [limits]
    torso_flexion = -0.26 1.22     ; min max
    ...

``load_body_config()`` with no path returns the shipped 50th-percentile
defaults. Segment lengths are per-subject inputs; swap the file to change
subjects.
"""

from __future__ import annotations

import configparser
from importlib import resources
from pathlib import Path

import numpy as np

from .kinematics import JOINT_NAMES, JointLimits, SegmentLengths

_SEGMENT_KEYS = ("torso_length", "shoulder_offset", "upper_arm", "forearm", "hand")

DEFAULT_CONFIG_NAME = "default_body.cfg"


def default_segments() -> SegmentLengths:
    return SegmentLengths()


def default_limits() -> JointLimits:
    """Fixed box limits for a seated adult, radians.

    Posture-dependent limit models can be plugged in behind the same
    ``JointLimits.contains`` interface; only the box is shipped.
    """
    return JointLimits(
        q_min=np.array([-0.26, -0.52, -0.70, -1.05, -0.35, -1.57, 0.00, -1.48, -1.22, -0.35]),
        q_max=np.array([1.22, 0.52, 0.70, 3.14, 1.92, 1.57, 2.53, 1.48, 1.22, 0.44]),
    )


def _parse_vector(text: str, n: int) -> np.ndarray:
    parts = text.split()
    if len(parts) != n:
        raise ValueError(f"expected {n} numbers, got {text!r}")
    return np.array([float(p) for p in parts])


def load_body_config(path: str | Path | None = None) -> tuple[SegmentLengths, JointLimits]:
    """Read (segments, limits) from an INI file; None loads the shipped default."""
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    if path is None:
        text = resources.files("ergopose").joinpath("data", DEFAULT_CONFIG_NAME).read_text()
        parser.read_string(text)
    else:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(path)
        parser.read(path)

    seg = parser["segments"]
    chair = parser["chair_to_robot"]
    segments = SegmentLengths(
        **{k: seg.getfloat(k) for k in _SEGMENT_KEYS},
        chair_position=_parse_vector(chair["position"], 3),
        chair_quat=_parse_vector(chair["quaternion"], 4),
    )

    lim = parser["limits"]
    q_min = np.empty(len(JOINT_NAMES))
    q_max = np.empty(len(JOINT_NAMES))
    for i, name in enumerate(JOINT_NAMES):
        q_min[i], q_max[i] = _parse_vector(lim[name], 2)
    return segments, JointLimits(q_min=q_min, q_max=q_max)


def save_body_config(path: str | Path, segments: SegmentLengths, limits: JointLimits) -> None:
    parser = configparser.ConfigParser()
    parser["segments"] = {k: repr(getattr(segments, k)) for k in _SEGMENT_KEYS}
    parser["chair_to_robot"] = {
        "position": " ".join(repr(v) for v in segments.chair_position),
        "quaternion": " ".join(repr(v) for v in segments.chair_quat),
    }
    parser["limits"] = {
        name: f"{limits.q_min[i]!r} {limits.q_max[i]!r}" for i, name in enumerate(JOINT_NAMES)
    }
    with open(path, "w") as fh:
        fh.write("; lengths in meters, angles in radians; quaternion is w x y z\n")
        parser.write(fh)
