"""Scene-flow fields aligned with a sampled point cloud.

A flow field assigns one 3D motion vector to every point of the previous
frame's working cloud.  Three sources are supported behind one interface:
exact flow derived from known per-instance rigid motions, a nearest-neighbor
baseline, and precomputed fields loaded from disk.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Protocol

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Box3D, points_in_box, wrap_angle
from .preprocess import PointCloud

FLOW_MAGIC = b"SFL1"
# Maximum allowed deviation between stored source coordinates and the cloud
# the field is meant to align with, meters.
SOURCE_ALIGNMENT_TOL = 1e-4


class FlowDataError(ValueError):
    """Raised for malformed flow files or inconsistent flow inputs."""


@dataclass
class FlowField:
    """Per-point motion vectors, row-aligned with a source cloud.

    Attributes
    ----------
    vectors : np.ndarray
        Array of shape (n, 3), finite.
    """

    vectors: np.ndarray

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.vectors)):
            raise FlowDataError("flow vectors must be finite")

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class RigidMotion:
    """Rigid motion ``p -> rotation @ p + translation`` in the sensor frame."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self) -> None:
        self.rotation = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=float).reshape(3)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (n, 3)."""
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation

    def compose(self, earlier: "RigidMotion") -> "RigidMotion":
        """Motion equivalent to applying ``earlier`` first, then this one."""
        return RigidMotion(
            rotation=self.rotation @ earlier.rotation,
            translation=self.rotation @ earlier.translation + self.translation,
        )

    @classmethod
    def identity(cls) -> "RigidMotion":
        return cls(rotation=np.eye(3), translation=np.zeros(3))

    @classmethod
    def from_pose_delta(cls, prev_box: Box3D, curr_box: Box3D) -> "RigidMotion":
        """Motion carrying a box pose at one frame onto its next pose.

        The rotation is the yaw change about the vertical axis; the
        translation is whatever maps the rotated previous center onto the
        current center.
        """
        dtheta = wrap_angle(curr_box.theta - prev_box.theta)
        c, s = math.cos(dtheta), math.sin(dtheta)
        rotation = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
        translation = curr_box.center - rotation @ prev_box.center
        return cls(rotation=rotation, translation=translation)


class FlowEstimator(Protocol):
    """Anything that can produce a flow field for one frame pair.

    ``frame_index`` identifies the previous frame of the pair; estimators
    backed by files or per-frame ground truth need it, the others ignore it.
    """

    def estimate(
        self, prev: PointCloud, curr: PointCloud, frame_index: int
    ) -> FlowField:  # pragma: no cover - protocol
        ...


def estimate_oracle(prev: PointCloud, motions: Mapping[int, RigidMotion]) -> FlowField:
    """Exact flow from known per-instance rigid motions.

    Every point labeled with instance id ``i`` moves by ``motions[i]``;
    unlabeled and ground points are static and get zero flow.

    Raises
    ------
    FlowDataError
        If an instance label present in the cloud has no motion entry.
    """
    vectors = np.zeros((len(prev), 3))
    instance_ids = np.unique(prev.labels[prev.labels >= 0])
    for instance_id in instance_ids:
        if int(instance_id) not in motions:
            raise FlowDataError(f"no rigid motion for instance id {int(instance_id)}")
        mask = prev.labels == instance_id
        points = prev.positions[mask]
        vectors[mask] = motions[int(instance_id)].apply(points) - points
    return FlowField(vectors=vectors)


def estimate_nn(
    prev: PointCloud, curr: PointCloud, max_match_distance: float = 2.0
) -> FlowField:
    """Nearest-neighbor flow baseline.

    Each previous-frame point flows onto its nearest current-frame point
    when that neighbor lies within ``max_match_distance``; points without a
    neighbor in range get zero flow.  The search is exact (k-d tree).
    """
    if max_match_distance <= 0:
        raise ValueError(f"max_match_distance must be positive, got {max_match_distance}")
    vectors = np.zeros((len(prev), 3))
    if len(curr) > 0 and len(prev) > 0:
        tree = cKDTree(curr.positions)
        distances, indices = tree.query(prev.positions, k=1)
        matched = distances <= max_match_distance
        vectors[matched] = curr.positions[indices[matched]] - prev.positions[matched]
    return FlowField(vectors=vectors)


def _flow_path(path: Path, frame_index: int) -> Path:
    return Path(path) / f"{frame_index:06d}.sfl"


def write_flow_file(file_path: Path, sources: np.ndarray, field: FlowField) -> None:
    """Write one flow field with its source coordinates.

    Layout: magic ``SFL1``, little-endian u32 point count, then per point
    six little-endian f32 values (source x, y, z, flow dx, dy, dz).  The
    stored source coordinates let readers verify that a file really belongs
    to the cloud it is loaded for.
    """
    sources = np.asarray(sources, dtype=float).reshape(-1, 3)
    if len(sources) != len(field):
        raise FlowDataError(
            f"source count {len(sources)} does not match flow count {len(field)}"
        )
    records = np.hstack([sources, field.vectors]).astype("<f4")
    file_path = Path(file_path)
    file_path.parent.mkdir(parents=True, exist_ok=True)
    with open(file_path, "wb") as handle:
        handle.write(FLOW_MAGIC)
        handle.write(struct.pack("<I", len(sources)))
        handle.write(records.tobytes())


def save_flow(path: Path, frame_index: int, sources: np.ndarray, field: FlowField) -> Path:
    """Write the flow for one frame pair under ``path``, named by the index
    of the pair's previous frame."""
    file_path = _flow_path(path, frame_index)
    write_flow_file(file_path, sources, field)
    return file_path


def read_flow_file(file_path: Path) -> tuple[np.ndarray, FlowField]:
    """Read one flow file, returning ``(sources, field)``.

    Raises
    ------
    FlowDataError
        On a bad magic, a count that disagrees with the payload size, or
        non-finite values.
    """
    file_path = Path(file_path)
    data = file_path.read_bytes()
    if len(data) < 8 or data[:4] != FLOW_MAGIC:
        raise FlowDataError(f"{file_path}: not a flow file (bad magic)")
    (count,) = struct.unpack("<I", data[4:8])
    payload = data[8:]
    if len(payload) != count * 24:
        raise FlowDataError(
            f"{file_path}: declared {count} points but payload holds "
            f"{len(payload) / 24:g}"
        )
    records = np.frombuffer(payload, dtype="<f4").reshape(-1, 6).astype(float)
    if not np.all(np.isfinite(records)):
        raise FlowDataError(f"{file_path}: non-finite values")
    return records[:, :3], FlowField(vectors=records[:, 3:])


def load_flow(
    path: Path, frame_index: int, sources: np.ndarray | None = None
) -> FlowField:
    """Load the flow field for one frame pair from a directory.

    Parameters
    ----------
    path : Path
        Directory holding one ``.sfl`` file per frame pair.
    frame_index : int
        Index of the pair's previous frame.
    sources : np.ndarray, optional
        Positions of the cloud the field must align with.  When given, the
        stored source coordinates are checked against them.

    Raises
    ------
    FlowDataError
        On a missing file, a malformed file, a point-count mismatch, or a
        source coordinate deviating by more than ``SOURCE_ALIGNMENT_TOL``.
    """
    file_path = _flow_path(path, frame_index)
    if not file_path.exists():
        raise FlowDataError(f"no flow file for frame {frame_index}: {file_path}")
    stored_sources, field = read_flow_file(file_path)
    if sources is not None:
        sources = np.asarray(sources, dtype=float).reshape(-1, 3)
        if len(sources) != len(field):
            raise FlowDataError(
                f"frame {frame_index}: flow has {len(field)} points, cloud has "
                f"{len(sources)}"
            )
        deviation = float(np.max(np.abs(stored_sources - sources), initial=0.0))
        if deviation > SOURCE_ALIGNMENT_TOL:
            raise FlowDataError(
                f"frame {frame_index}: flow sources deviate from the cloud by "
                f"{deviation:.2e} m (max {SOURCE_ALIGNMENT_TOL:.0e})"
            )
    return field


def motions_from_boxes(
    prev_boxes: Mapping[int, Box3D], curr_boxes: Mapping[int, Box3D]
) -> dict[int, RigidMotion]:
    """Per-instance motions from two frames of ground-truth boxes.

    Only instances present in both frames get an entry; everything else is
    treated as static.
    """
    return {
        instance_id: RigidMotion.from_pose_delta(prev_boxes[instance_id], box)
        for instance_id, box in curr_boxes.items()
        if instance_id in prev_boxes
    }


class OracleFlowEstimator:
    """Exact flow derived from ground-truth boxes.

    Points of the previous cloud are attributed to instances by box
    membership (with a small face margin so surface points are not lost to
    rounding), motions come from the pose change of each box, and instances
    that disappear in the next frame are treated as static.
    """

    def __init__(
        self, boxes_by_frame: Mapping[int, Mapping[int, Box3D]], margin: float = 1e-6
    ) -> None:
        self.boxes_by_frame = boxes_by_frame
        self.margin = margin

    def estimate(self, prev: PointCloud, curr: PointCloud, frame_index: int) -> FlowField:
        prev_boxes = self.boxes_by_frame.get(frame_index, {})
        curr_boxes = self.boxes_by_frame.get(frame_index + 1, {})
        motions = motions_from_boxes(prev_boxes, curr_boxes)
        labels = np.full(len(prev), -1, dtype=int)
        for instance_id in sorted(motions):
            inside = points_in_box(prev_boxes[instance_id], prev.positions, margin=self.margin)
            unclaimed = inside[labels[inside] < 0]
            labels[unclaimed] = instance_id
        labeled = PointCloud(positions=prev.positions, features=prev.features, labels=labels)
        return estimate_oracle(labeled, motions)


class NearestNeighborFlowEstimator:
    """Estimator wrapper around :func:`estimate_nn`."""

    def __init__(self, max_match_distance: float = 2.0) -> None:
        self.max_match_distance = max_match_distance

    def estimate(self, prev: PointCloud, curr: PointCloud, frame_index: int) -> FlowField:
        return estimate_nn(prev, curr, self.max_match_distance)


class FileFlowEstimator:
    """Estimator that loads precomputed fields, validating alignment.

    The loaded field must have exactly one vector per point of the previous
    cloud and its stored source coordinates must match that cloud; a
    mismatch usually means the files were computed against a different
    preprocessing seed.
    """

    def __init__(self, directory: Path) -> None:
        self.directory = Path(directory)

    def estimate(self, prev: PointCloud, curr: PointCloud, frame_index: int) -> FlowField:
        return load_flow(self.directory, frame_index, sources=prev.positions)
