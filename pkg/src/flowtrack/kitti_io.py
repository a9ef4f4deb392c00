"""Reading and writing KITTI-style tracking files.

Label rows use the standard whitespace-separated columns.  Four layouts are
accepted: plain detection rows (15 columns), detection rows with a trailing
score (16), tracking rows with frame and track id (17), and tracking rows
with a score (18).  Point clouds are the usual packed float32 x/y/z/intensity
records, and calibration files carry the projection, rectification and
sensor-to-camera keys.

Object locations in label files live in the camera frame (x right, y down,
z forward) at the bottom-face center; the tracker works in the sensor frame
(z up) with volumetric centers.  The conversions between the two shift by
half the box height along the vertical axis and flip the yaw convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .geometry import Box3D, wrap_angle
from .preprocess import Calibration, CalibrationError, PointCloud, UNLABELED
from .tracker import EmittedTrack


class LabelFormatError(ValueError):
    """Raised for label rows that fit none of the accepted layouts."""


class VelodyneFormatError(ValueError):
    """Raised for point-cloud files whose size is not a whole number of
    x/y/z/intensity records."""


@dataclass
class LabelRow:
    """One row of a KITTI-style label or result file.

    ``track_id`` is -1 for detection rows.  ``score`` is ``None`` when the
    row has no confidence column (ground truth does not).
    """

    frame: int
    track_id: int
    category: str
    truncated: float
    occluded: int
    alpha: float
    bbox: tuple[float, float, float, float]
    h: float
    w: float
    l: float
    x: float
    y: float
    z: float
    rotation_y: float
    score: float | None = None


def _parse_row(tokens: list[str], path: Path, line_number: int) -> LabelRow:
    n = len(tokens)
    if n in (15, 16):
        frame, track_id = 0, -1
        rest = tokens
    elif n in (17, 18):
        frame, track_id = int(tokens[0]), int(float(tokens[1]))
        rest = tokens[2:]
    else:
        raise LabelFormatError(
            f"{path}:{line_number}: row has {n} columns; expected 15-18"
        )
    try:
        return LabelRow(
            frame=frame,
            track_id=track_id,
            category=rest[0],
            truncated=float(rest[1]),
            occluded=int(float(rest[2])),
            alpha=float(rest[3]),
            bbox=(float(rest[4]), float(rest[5]), float(rest[6]), float(rest[7])),
            h=float(rest[8]),
            w=float(rest[9]),
            l=float(rest[10]),
            x=float(rest[11]),
            y=float(rest[12]),
            z=float(rest[13]),
            rotation_y=float(rest[14]),
            score=float(rest[15]) if len(rest) == 16 else None,
        )
    except ValueError as exc:
        raise LabelFormatError(f"{path}:{line_number}: {exc}") from exc


def read_labels(path: Path) -> dict[int, list[LabelRow]]:
    """Read a label file, grouping rows by frame in their original order.

    Raises
    ------
    LabelFormatError
        For any row with an unaccepted column count or unparsable field,
        naming the line number.
    """
    path = Path(path)
    frames: dict[int, list[LabelRow]] = {}
    for line_number, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        row = _parse_row(line.split(), path, line_number)
        frames.setdefault(row.frame, []).append(row)
    return frames


def label_to_box(row: LabelRow) -> Box3D:
    """Box of a label row in the nominal sensor frame.

    Uses the fixed camera-to-sensor axis permutation (sensor x = camera z,
    sensor y = -camera x, sensor z = -camera y), so no calibration is
    needed.  Both sides of an evaluation go through the same permutation,
    which leaves IoU untouched.
    """
    return Box3D(
        x=row.z,
        y=-row.x,
        z=-row.y + row.h / 2.0,
        l=row.l,
        w=row.w,
        h=row.h,
        theta=wrap_angle(-row.rotation_y - math.pi / 2.0),
    )


def camera_to_lidar_box(row: LabelRow, calib: Calibration) -> Box3D:
    """Box of a label row in the sensor frame, via the calibration.

    The camera-frame location is the bottom-face center; the result uses
    the volumetric center, shifted by ``h / 2`` along the vertical axis.
    """
    bottom_cam = np.array([[row.x, row.y, row.z]])
    center_cam = bottom_cam - np.array([[0.0, row.h / 2.0, 0.0]])
    center = calib.camera_to_lidar(center_cam)[0]
    return Box3D(
        x=float(center[0]),
        y=float(center[1]),
        z=float(center[2]),
        l=row.l,
        w=row.w,
        h=row.h,
        theta=wrap_angle(-row.rotation_y - math.pi / 2.0),
    )


def lidar_to_camera_location(box: Box3D, calib: Calibration) -> tuple[np.ndarray, float]:
    """Camera-frame bottom-face center and yaw of a sensor-frame box."""
    center_cam = calib.lidar_to_camera(box.center.reshape(1, 3))[0]
    bottom_cam = center_cam + np.array([0.0, box.h / 2.0, 0.0])
    rotation_y = wrap_angle(-box.theta - math.pi / 2.0)
    return bottom_cam, rotation_y


def read_velodyne(path: Path) -> PointCloud:
    """Read a packed float32 point-cloud file.

    Each record is x, y, z, intensity (little-endian).  Intensity lands in
    the feature column; labels start unlabeled.

    Raises
    ------
    VelodyneFormatError
        If the file size is not a multiple of one record (16 bytes).
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) % 16 != 0:
        raise VelodyneFormatError(
            f"{path}: size {len(data)} is not a multiple of 16-byte records"
        )
    records = np.frombuffer(data, dtype="<f4").reshape(-1, 4).astype(float)
    return PointCloud(
        positions=records[:, :3],
        features=records[:, 3:4],
        labels=np.full(len(records), UNLABELED, dtype=int),
    )


def write_velodyne(path: Path, cloud: PointCloud) -> None:
    """Write a cloud as packed float32 x/y/z/intensity records."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if cloud.features.shape[1] >= 1:
        intensity = cloud.features[:, :1]
    else:
        intensity = np.zeros((len(cloud), 1))
    records = np.hstack([cloud.positions, intensity]).astype("<f4")
    records.tofile(path)


def read_calib(path: Path) -> Calibration:
    """Read a calibration file.

    Recognized keys (with or without a trailing colon): ``P2``; ``R0_rect``
    or ``R_rect``; ``Tr_velo_to_cam`` or ``Tr_velo_cam``.

    Raises
    ------
    CalibrationError
        Naming the first missing key.
    """
    path = Path(path)
    values: dict[str, np.ndarray] = {}
    for raw in path.read_text().splitlines():
        line = raw.strip()
        if not line:
            continue
        if ":" in line:
            key, _, payload = line.partition(":")
        else:
            key, _, payload = line.partition(" ")
        try:
            numbers = np.array([float(tok) for tok in payload.split()])
        except ValueError:
            continue
        values[key.strip()] = numbers

    def pick(*keys: str) -> np.ndarray:
        for key in keys:
            if key in values:
                return values[key]
        raise CalibrationError(f"{path}: missing calibration key {keys[0]!r}")

    projection = pick("P2").reshape(3, 4)
    rect_values = pick("R0_rect", "R_rect")
    rect = np.eye(4)
    rect[:3, :3] = rect_values.reshape(3, 3)
    tr_values = pick("Tr_velo_to_cam", "Tr_velo_cam")
    velo_to_cam = np.eye(4)
    velo_to_cam[:3, :4] = tr_values.reshape(3, 4)
    return Calibration(projection=projection, rect=rect, velo_to_cam=velo_to_cam)


def write_calib(path: Path, calib: Calibration) -> None:
    """Write a calibration file readable by :func:`read_calib`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def fmt(values: np.ndarray) -> str:
        return " ".join(f"{v:.12e}" for v in np.asarray(values).ravel())

    lines = [
        f"P2: {fmt(calib.projection)}",
        f"R0_rect: {fmt(calib.rect[:3, :3])}",
        f"Tr_velo_to_cam: {fmt(calib.velo_to_cam[:3, :4])}",
    ]
    path.write_text("\n".join(lines) + "\n")


def _format_row(row: LabelRow) -> str:
    fields = [
        str(row.frame),
        str(row.track_id),
        row.category,
        f"{row.truncated:.6f}",
        str(row.occluded),
        f"{row.alpha:.6f}",
        f"{row.bbox[0]:.6f}",
        f"{row.bbox[1]:.6f}",
        f"{row.bbox[2]:.6f}",
        f"{row.bbox[3]:.6f}",
        f"{row.h:.6f}",
        f"{row.w:.6f}",
        f"{row.l:.6f}",
        f"{row.x:.6f}",
        f"{row.y:.6f}",
        f"{row.z:.6f}",
        f"{row.rotation_y:.6f}",
    ]
    if row.score is not None:
        fields.append(f"{row.score:.6f}")
    return " ".join(fields)


def write_labels(path: Path, frames: Mapping[int, Sequence[LabelRow]]) -> None:
    """Write label rows sorted by (frame, track id)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = [row for frame in sorted(frames) for row in frames[frame]]
    rows.sort(key=lambda r: (r.frame, r.track_id))
    path.write_text("".join(_format_row(row) + "\n" for row in rows))


def _project_bbox(box: Box3D, calib: Calibration) -> tuple[float, float, float, float]:
    """2D bounds of the projected box corners; (-1, -1, -1, -1) when any
    corner sits at or behind the camera plane."""
    from .geometry import corners_bev

    bev = corners_bev(box)
    corners = np.zeros((8, 3))
    corners[:4, :2] = bev
    corners[4:, :2] = bev
    corners[:4, 2] = box.z - box.h / 2.0
    corners[4:, 2] = box.z + box.h / 2.0
    uv, depth = calib.project_to_image(corners)
    if np.any(depth <= 0.1):
        return (-1.0, -1.0, -1.0, -1.0)
    return (
        float(uv[:, 0].min()),
        float(uv[:, 1].min()),
        float(uv[:, 0].max()),
        float(uv[:, 1].max()),
    )


def result_row(
    frame: int, track: EmittedTrack, calib: Calibration | None = None
) -> LabelRow:
    """Label row of one emitted track, converted to the camera frame."""
    calibration = calib if calib is not None else Calibration.nominal()
    bottom_cam, rotation_y = lidar_to_camera_location(track.box, calibration)
    alpha = wrap_angle(rotation_y - math.atan2(bottom_cam[0], bottom_cam[2]))
    return LabelRow(
        frame=frame,
        track_id=track.track_id,
        category=track.category,
        truncated=0.0,
        occluded=0,
        alpha=alpha,
        bbox=_project_bbox(track.box, calibration),
        h=track.box.h,
        w=track.box.w,
        l=track.box.l,
        x=float(bottom_cam[0]),
        y=float(bottom_cam[1]),
        z=float(bottom_cam[2]),
        rotation_y=rotation_y,
        score=track.confidence,
    )


def write_results(
    path: Path,
    tracks_by_frame: Mapping[int, Sequence[EmittedTrack]],
    calib: Calibration | None = None,
) -> None:
    """Write emitted tracks as a tracking result file.

    Rows carry the score column and are sorted by (frame, track id).
    """
    frames = {
        frame: [result_row(frame, track, calib) for track in tracks]
        for frame, tracks in tracks_by_frame.items()
    }
    write_labels(path, frames)
