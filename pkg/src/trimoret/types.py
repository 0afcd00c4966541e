"""Shared data model: the three modalities, latent vectors, and sample tuples.

All geometry is in meters. Instances are immutable after construction
(backing numpy arrays are marked read-only) and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Latent source tags, one per encoder.
SOURCES = ("t", "m", "s", "st", "mt", "ms")

DEFAULT_TEXT_DIM = 768

# Fixed 22-joint skeleton convention (SMPL-like ordering, pelvis is the root
# and defines the motion's ground-plane position).
JOINT_NAMES = (
    "pelvis",
    "left_hip", "right_hip",
    "spine1",
    "left_knee", "right_knee",
    "spine2",
    "left_ankle", "right_ankle",
    "spine3",
    "left_foot", "right_foot",
    "neck",
    "left_collar", "right_collar",
    "head",
    "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow",
    "left_wrist", "right_wrist",
)

JOINT_COUNT = len(JOINT_NAMES)
PELVIS = 0

# Sanity bound on pairwise joint distances within a frame, in meters.
MAX_JOINT_SPAN = 2.5


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class TextFeature:
    """A fixed-length real feature vector for one caption."""

    values: np.ndarray  # (d_text,) float32
    raw_caption: str

    def __post_init__(self):
        object.__setattr__(self, "values", _freeze(np.asarray(self.values, dtype=np.float32)))


@dataclass(frozen=True)
class ObjectInstance:
    """One placed object: axis-aligned box with a class label and color."""

    class_label: str
    anchor: np.ndarray        # (3,) box center, meters
    half_extents: np.ndarray  # (3,) meters
    color: np.ndarray         # (3,) rgb in [0, 1]
    point_range: tuple[int, int] = (0, 0)  # [start, end) rows in the point cloud

    def __post_init__(self):
        object.__setattr__(self, "anchor", _freeze(np.asarray(self.anchor, dtype=np.float64)))
        object.__setattr__(self, "half_extents", _freeze(np.asarray(self.half_extents, dtype=np.float64)))
        object.__setattr__(self, "color", _freeze(np.asarray(self.color, dtype=np.float64)))

    @property
    def box_min(self) -> np.ndarray:
        return self.anchor - self.half_extents

    @property
    def box_max(self) -> np.ndarray:
        return self.anchor + self.half_extents


@dataclass(frozen=True)
class SceneGraphMeta:
    """Ground-truth object layout backing a point cloud.

    Used by the generator and evaluators only; encoders never see it.
    """

    objects: tuple[ObjectInstance, ...]
    room_bounds: np.ndarray  # (2, 3) [min, max] corners, meters

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "room_bounds", _freeze(np.asarray(self.room_bounds, dtype=np.float64)))


@dataclass(frozen=True)
class ScenePointCloud:
    """A colored point cloud: (x, y, z) meters + (r, g, b) in [0, 1]."""

    points: np.ndarray  # (N, 6) float32
    meta: SceneGraphMeta | None = None

    def __post_init__(self):
        object.__setattr__(self, "points", _freeze(np.asarray(self.points, dtype=np.float32)))

    @property
    def point_count(self) -> int:
        return self.points.shape[0]


@dataclass(frozen=True)
class MotionSequence:
    """Joint-position motion: T frames x 22 joints x (x, y, z) meters."""

    frames: np.ndarray  # (T, 22, 3) float32
    joint_names: tuple[str, ...] = JOINT_NAMES

    def __post_init__(self):
        object.__setattr__(self, "frames", _freeze(np.asarray(self.frames, dtype=np.float32)))

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    def pelvis_path(self) -> np.ndarray:
        """(T, 3) pelvis positions."""
        return self.frames[:, PELVIS, :]


@dataclass(frozen=True)
class LatentVector:
    """A d-dimensional embedding tagged with its source encoder."""

    values: np.ndarray  # (d,) float32
    source: str         # one of SOURCES
    sample_id: str

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ValueError(f"unknown latent source {self.source!r}")
        object.__setattr__(self, "values", _freeze(np.asarray(self.values, dtype=np.float32)))


@dataclass(frozen=True)
class SampleTruth:
    """Generator ground truth for one sample."""

    target_index: int
    action: str
    waypoints: np.ndarray  # (k, 2) planned pelvis path, xy meters

    def __post_init__(self):
        object.__setattr__(self, "waypoints", _freeze(np.asarray(self.waypoints, dtype=np.float64)))


@dataclass(frozen=True)
class TrimodalSample:
    """One aligned (text, motion, scene) event."""

    id: str
    text: TextFeature
    motion: MotionSequence
    scene: ScenePointCloud
    truth: SampleTruth = field(default=None)


def validate_sample(sample: TrimodalSample, d_text: int = DEFAULT_TEXT_DIM) -> list[str]:
    """Return the list of violated invariants (empty iff the sample is valid)."""
    report: list[str] = []

    tv = sample.text.values
    if tv.shape != (d_text,):
        report.append("text length mismatch")
    if not np.all(np.isfinite(tv)):
        report.append("non-finite text")

    m = sample.motion.frames
    if m.ndim != 3 or m.shape[1:] != (JOINT_COUNT, 3):
        report.append("motion shape mismatch")
    else:
        if m.shape[0] < 2:
            report.append("motion too short")
        if not np.all(np.isfinite(m)):
            report.append("non-finite motion")
        else:
            # max pairwise inter-joint distance per frame
            diffs = m[:, :, None, :] - m[:, None, :, :]
            span = np.sqrt((diffs ** 2).sum(-1)).max()
            if span > MAX_JOINT_SPAN:
                report.append("joint span exceeds bound")

    pts = sample.scene.points
    if pts.ndim != 2 or pts.shape[1] != 6:
        report.append("scene shape mismatch")
    else:
        if not np.all(np.isfinite(pts)):
            report.append("non-finite scene")
        else:
            if pts.shape[0] > 0 and (pts[:, 3:].min() < 0 or pts[:, 3:].max() > 1):
                report.append("scene color out of range")
            meta = sample.scene.meta
            if meta is not None and pts.shape[0] > 0:
                lo, hi = meta.room_bounds
                if (pts[:, :3] < lo - 1e-6).any() or (pts[:, :3] > hi + 1e-6).any():
                    report.append("scene points outside room bounds")

    meta = sample.scene.meta
    if meta is not None:
        lo, hi = meta.room_bounds
        for k, obj in enumerate(meta.objects):
            if (obj.box_min < lo - 1e-9).any() or (obj.box_max > hi + 1e-9).any():
                report.append(f"object {k} outside room bounds")
            if (obj.anchor < obj.box_min - 1e-9).any() or (obj.anchor > obj.box_max + 1e-9).any():
                report.append(f"object {k} anchor outside its box")

    if sample.truth is not None:
        if meta is None or not (0 <= sample.truth.target_index < len(meta.objects)):
            report.append("target index invalid")
        elif "motion shape mismatch" not in report and "non-finite motion" not in report:
            anchor = meta.objects[sample.truth.target_index].anchor
            final = sample.motion.frames[-1, PELVIS, :]
            # horizontal distance: the anchor sits at box-center height while the
            # pelvis may end on top of the object, so only xy is constrained;
            # bound = worst diagonal exit distance plus the standing clearance
            if np.hypot(final[0] - anchor[0], final[1] - anchor[1]) > 0.65:
                report.append("motion endpoint far from target anchor")

    return report
