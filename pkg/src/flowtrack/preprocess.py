"""Point-cloud container and the per-frame preprocessing chain.

The chain mirrors what a LiDAR tracking front end needs before motion
estimation: restrict the cloud to the camera frustum, label the ground plane
so it can be excluded, then draw a fixed-size working subset of points.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

# Per-point label values.  Non-negative labels are instance ids.
UNLABELED = -1
GROUND = -2


class CalibrationError(ValueError):
    """Raised when calibration data is missing or degenerate."""


@dataclass
class PointCloud:
    """Point set with per-point features and labels.

    Attributes
    ----------
    positions : np.ndarray
        Array of shape (n, 3), finite.
    features : np.ndarray
        Array of shape (n, c); c may be zero.  Intensity lives here for
        LiDAR data.
    labels : np.ndarray
        Array of shape (n,), int.  ``UNLABELED``, ``GROUND`` or a
        non-negative instance id.
    """

    positions: np.ndarray
    features: np.ndarray = field(default=None)  # type: ignore[assignment]
    labels: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("point positions must be finite")
        n = len(self.positions)
        if self.features is None:
            self.features = np.empty((n, 0))
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features.reshape(-1, 1)
        if self.features.shape[0] != n:
            raise ValueError(
                f"features have {self.features.shape[0]} rows for {n} points"
            )
        if self.labels is None:
            self.labels = np.full(n, UNLABELED, dtype=int)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.labels.shape != (n,):
            raise ValueError(f"labels have shape {self.labels.shape} for {n} points")

    def __len__(self) -> int:
        return len(self.positions)

    def take(self, indices: np.ndarray) -> "PointCloud":
        """Subset the cloud, keeping positions, features and labels aligned."""
        indices = np.asarray(indices, dtype=int)
        return PointCloud(
            positions=self.positions[indices],
            features=self.features[indices],
            labels=self.labels[indices],
        )


@dataclass
class Calibration:
    """Sensor-to-image calibration.

    Attributes
    ----------
    projection : np.ndarray
        Camera projection matrix, shape (3, 4), applied to rectified camera
        coordinates.
    rect : np.ndarray
        Rectifying rotation as a 4x4 homogeneous matrix.
    velo_to_cam : np.ndarray
        Rigid sensor-to-camera transform as a 4x4 homogeneous matrix.
    """

    projection: np.ndarray
    rect: np.ndarray
    velo_to_cam: np.ndarray

    def __post_init__(self) -> None:
        self.projection = np.asarray(self.projection, dtype=float).reshape(3, 4)
        self.rect = np.asarray(self.rect, dtype=float).reshape(4, 4)
        self.velo_to_cam = np.asarray(self.velo_to_cam, dtype=float).reshape(4, 4)

    @property
    def velo_to_cam_rect(self) -> np.ndarray:
        """Composed sensor-to-rectified-camera transform, shape (4, 4)."""
        return self.rect @ self.velo_to_cam

    def lidar_to_camera(self, points: np.ndarray) -> np.ndarray:
        """Map points of shape (n, 3) from the sensor frame to the rectified
        camera frame."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        homo = np.hstack([points, np.ones((len(points), 1))])
        return (homo @ self.velo_to_cam_rect.T)[:, :3]

    def camera_to_lidar(self, points: np.ndarray) -> np.ndarray:
        """Inverse of :meth:`lidar_to_camera`."""
        points = np.asarray(points, dtype=float).reshape(-1, 3)
        homo = np.hstack([points, np.ones((len(points), 1))])
        inv = np.linalg.inv(self.velo_to_cam_rect)
        return (homo @ inv.T)[:, :3]

    def project_to_image(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project sensor-frame points into the image.

        Returns
        -------
        tuple
            ``(uv, depth)`` where ``uv`` has shape (n, 2) and ``depth`` is
            the rectified camera z coordinate.  Points at or behind the
            camera plane get ``uv`` rows of NaN.
        """
        cam = self.lidar_to_camera(points)
        homo = np.hstack([cam, np.ones((len(cam), 1))])
        uvw = homo @ self.projection.T
        uv = np.full((len(cam), 2), np.nan)
        valid = uvw[:, 2] > 0
        uv[valid] = uvw[valid, :2] / uvw[valid, 2:3]
        return uv, cam[:, 2]

    @classmethod
    def nominal(
        cls,
        focal: float = 600.0,
        image_width: int = 1200,
        image_height: int = 400,
    ) -> "Calibration":
        """Idealized forward-facing camera.

        The camera optical axis points along sensor +x, image x runs along
        sensor -y and image y along sensor -z.  Principal point sits at the
        image center.
        """
        velo_to_cam = np.array(
            [
                [0.0, -1.0, 0.0, 0.0],
                [0.0, 0.0, -1.0, 0.0],
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]
        )
        projection = np.array(
            [
                [focal, 0.0, image_width / 2.0, 0.0],
                [0.0, focal, image_height / 2.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
            ]
        )
        return cls(projection=projection, rect=np.eye(4), velo_to_cam=velo_to_cam)


@dataclass
class Frustum:
    """Camera viewing volume used to crop point clouds.

    Attributes
    ----------
    calibration : Calibration
        Projection used to decide image-bounds membership.
    image_width, image_height : int
        Image bounds in pixels.
    margin_deg : float
        Half-angle widening applied to each image edge, degrees.  Points
        projecting up to this angle outside the image are still kept, so
        objects about to leave the field of view survive one more frame.
    max_depth : float, optional
        Far cutoff along the optical axis, meters.  ``None`` disables it.
    depth_margin : float
        Extra range kept beyond ``max_depth`` when a far cutoff is set.
    """

    calibration: Calibration
    image_width: int
    image_height: int
    margin_deg: float = 10.0
    max_depth: float | None = None
    depth_margin: float = 20.0


@dataclass
class GroundFit:
    """Outcome of a ground-plane search.

    ``plane`` holds ``(a, b, c, d)`` with ``a*x + b*y + c*z + d = 0`` and a
    unit normal; it is ``None`` when no plane was found.
    """

    found: bool
    plane: tuple[float, float, float, float] | None = None
    num_inliers: int = 0


def filter_fov(cloud: PointCloud, frustum: Frustum) -> PointCloud:
    """Keep the points whose projection falls inside the widened image.

    Membership is evaluated per point, so the operation is idempotent, and
    the kept set grows monotonically with ``margin_deg``.  Points at or
    behind the camera plane are always removed, regardless of margin.

    Raises
    ------
    CalibrationError
        If the projection has a zero focal length or the sensor-to-camera
        transform is not invertible.
    """
    calib = frustum.calibration
    fx = calib.projection[0, 0]
    fy = calib.projection[1, 1]
    cx = calib.projection[0, 2]
    cy = calib.projection[1, 2]
    if not (np.isfinite(fx) and np.isfinite(fy)) or fx == 0.0 or fy == 0.0:
        raise CalibrationError(f"degenerate projection: fx={fx} fy={fy}")
    if abs(np.linalg.det(calib.velo_to_cam_rect)) < 1e-12:
        raise CalibrationError("sensor-to-camera transform is not invertible")

    uv, depth = calib.project_to_image(cloud.positions)
    keep = depth > 0.0

    margin = math.radians(frustum.margin_deg)
    az = np.arctan2(uv[:, 0] - cx, fx)
    el = np.arctan2(uv[:, 1] - cy, fy)
    az_lo = math.atan2(0.0 - cx, fx) - margin
    az_hi = math.atan2(frustum.image_width - cx, fx) + margin
    el_lo = math.atan2(0.0 - cy, fy) - margin
    el_hi = math.atan2(frustum.image_height - cy, fy) + margin
    with np.errstate(invalid="ignore"):
        keep &= (az >= az_lo) & (az <= az_hi) & (el >= el_lo) & (el <= el_hi)

    if frustum.max_depth is not None:
        keep &= depth <= frustum.max_depth + frustum.depth_margin
    return cloud.take(np.nonzero(keep)[0])


def _plane_distances(positions: np.ndarray, normal: np.ndarray, offset: float) -> np.ndarray:
    return np.abs(positions @ normal + offset)


def _refit_plane(positions: np.ndarray) -> tuple[np.ndarray, float]:
    """Total-least-squares plane through a point set: centroid plus the
    singular vector of the smallest singular value."""
    centroid = positions.mean(axis=0)
    _, _, vt = np.linalg.svd(positions - centroid, full_matrices=False)
    normal = vt[-1]
    return normal, -float(normal @ centroid)


def fit_ground(
    cloud: PointCloud,
    inlier_threshold: float = 0.15,
    iterations: int = 200,
    min_inlier_fraction: float = 0.25,
    seed: int | tuple = 0,
) -> tuple[PointCloud, GroundFit]:
    """Label ground points by random-sample-consensus plane fitting.

    Three-point plane hypotheses are drawn for a fixed number of iterations;
    the best one is refined by a least-squares fit over its inliers.  Points
    within ``inlier_threshold`` of the refined plane are labeled ``GROUND``.
    Only unlabeled (or already ground) points are relabeled; instance labels
    are never touched, and coordinates are never modified.

    Parameters
    ----------
    cloud : PointCloud
        Input cloud, at least 3 points.
    inlier_threshold : float
        Maximum point-to-plane distance for an inlier, meters.
    iterations : int
        Number of random hypotheses.
    min_inlier_fraction : float
        Minimum fraction of the cloud the winning plane must explain.
    seed : int or tuple
        Seed for the hypothesis sampler.

    Returns
    -------
    tuple
        ``(labeled_cloud, fit)``.  When no plane reaches
        ``min_inlier_fraction`` the cloud is returned unchanged and
        ``fit.found`` is False.
    """
    n = len(cloud)
    if n < 3:
        raise ValueError(f"ground fitting needs at least 3 points, got {n}")
    rng = np.random.default_rng(seed)
    positions = cloud.positions

    best_count = -1
    best_plane: tuple[np.ndarray, float] | None = None
    for _ in range(iterations):
        idx = rng.choice(n, size=3, replace=False)
        p0, p1, p2 = positions[idx]
        normal = np.cross(p1 - p0, p2 - p0)
        norm = np.linalg.norm(normal)
        if norm < 1e-12:
            continue
        normal = normal / norm
        count = int(np.sum(_plane_distances(positions, normal, -float(normal @ p0)) <= inlier_threshold))
        if count > best_count:
            best_count = count
            best_plane = (normal, -float(normal @ p0))

    if best_plane is None or best_count / n < min_inlier_fraction:
        return cloud, GroundFit(found=False)

    inliers = _plane_distances(positions, *best_plane) <= inlier_threshold
    normal, offset = _refit_plane(positions[inliers])
    refined = _plane_distances(positions, normal, offset) <= inlier_threshold
    if refined.sum() < best_count:
        # Refinement should not lose ground; keep the raw hypothesis if it did.
        normal, offset = best_plane
        refined = inliers

    labels = cloud.labels.copy()
    relabelable = (labels == UNLABELED) | (labels == GROUND)
    labels[refined & relabelable] = GROUND
    labeled = PointCloud(positions=cloud.positions, features=cloud.features, labels=labels)
    fit = GroundFit(
        found=True,
        plane=(float(normal[0]), float(normal[1]), float(normal[2]), float(offset)),
        num_inliers=int(refined.sum()),
    )
    return labeled, fit


def sample_points(cloud: PointCloud, n: int, seed: int | tuple = 0) -> PointCloud:
    """Draw a uniform working subset of the non-ground points.

    Parameters
    ----------
    cloud : PointCloud
        Input cloud.
    n : int
        Requested sample size, at least 1.  When the non-ground pool holds
        fewer than ``n`` points the whole pool is returned in its original
        order.
    seed : int or tuple
        Seed for the sampler; a fixed seed gives an identical subset.

    Returns
    -------
    PointCloud
        Sampled cloud with positions, features and labels aligned; the
        selected indices are ascending, so the output is a subsequence of
        the input.  If every point is labeled ground the full cloud is
        returned and a ``RuntimeWarning`` is emitted.
    """
    if n < 1:
        raise ValueError(f"sample size must be positive, got {n}")
    pool = np.nonzero(cloud.labels != GROUND)[0]
    if len(pool) == 0:
        warnings.warn(
            "every point is labeled ground; sampling from the full cloud",
            RuntimeWarning,
            stacklevel=2,
        )
        pool = np.arange(len(cloud))
    if len(pool) == 0:
        raise ValueError("cannot sample from an empty cloud")
    if n >= len(pool):
        return cloud.take(pool)
    rng = np.random.default_rng(seed)
    chosen = rng.choice(pool, size=n, replace=False)
    chosen.sort()
    return cloud.take(chosen)
