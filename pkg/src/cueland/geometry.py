"""Frames, rotations, and the pinhole projection model.

Conventions used by every module in this package:

* Cue frame: origin at the central inner corner of the checkerboard.
  X points to the right of a zero-heading approaching camera, Y points
  down along gravity (valid because the gimbal keeps the camera level),
  and Z completes the right-handed triad, i.e. it runs along the board
  normal *away* from the approach side.  All corners lie in the Z = 0
  plane, so a camera facing the board from d meters away sits at
  (0, 0, -d) in cue coordinates and carries the identity rotation.
* Camera frame: standard optics.  Z forward through the lens, X right,
  Y down.
* A pose maps cue coordinates into camera coordinates:
  ``p_cam = R @ p_cue + t``.
* Relative heading ("yaw") is the camera's rotation about the vertical
  cue axis, positive when the camera noses to its right.  The pure-yaw
  pose matrix is ``[[cos a, 0, -sin a], [0, 1, 0], [sin a, 0, cos a]]``;
  its middle row shows the vertical coordinate is untouched by heading,
  and the camera position is unchanged by heading entirely, so the
  forward distance estimate is independent of yaw.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

#: Minimum forward distance (m) for a point to be considered projectable.
MIN_PROJECTION_DEPTH = 1e-6

_ORTHONORMAL_TOL = 1e-9


class BehindCameraError(ValueError):
    """A point to be projected has non-positive camera-frame depth."""


class PixelPoint(NamedTuple):
    """Real-valued image position: u = column, v = row, in pixels."""

    u: float
    v: float


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole parameters with focal lengths already in pixel units.

    ``fx``/``fy`` fold the metric focal length and the pixel pitch into a
    single pixels-per-radian-ish scale, so no separate pixel-size factors
    appear anywhere downstream.
    """

    fx: float
    fy: float
    u0: float
    v0: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if not (0 < self.u0 < self.width and 0 < self.v0 < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int = 1280, height: int = 720, hfov_deg: float = 69.0) -> "CameraIntrinsics":
        """Build intrinsics from a horizontal field of view.

        The defaults model a 720p gimbal camera with a 69 degree
        horizontal FOV, which puts fx = fy at roughly 931 px.
        """
        fx = (width / 2.0) / math.tan(math.radians(hfov_deg) / 2.0)
        return cls(fx=fx, fy=fx, u0=width / 2.0, v0=height / 2.0, width=width, height=height)

    @property
    def matrix(self) -> np.ndarray:
        """3x3 intrinsic matrix [[fx, 0, u0], [0, fy, v0], [0, 0, 1]]."""
        return np.array([[self.fx, 0.0, self.u0], [0.0, self.fy, self.v0], [0.0, 0.0, 1.0]])


def _as_vec3(x) -> np.ndarray:
    v = np.asarray(x, dtype=float).reshape(3)
    return v


@dataclass(frozen=True)
class Pose:
    """Rigid transform taking cue coordinates to camera coordinates."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3).copy()
        t = _as_vec3(self.translation).copy()
        if not np.allclose(R.T @ R, np.eye(3), atol=_ORTHONORMAL_TOL):
            raise ValueError("rotation must be orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHONORMAL_TOL:
            raise ValueError("rotation must have determinant +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))


@dataclass(frozen=True)
class CueModel:
    """Checkerboard visual cue: an inner-corner grid on the Z = 0 plane.

    The physical board is (rows+1) x (cols+1) alternating squares; the
    detector and the pose estimator work with the rows x cols inner
    corners.  Corners are stored row-major from the image's top-left
    (most negative X and Y) to bottom-right, with the grid centered on
    the cue-frame origin.
    """

    rows: int = 3
    cols: int = 3
    square_size: float = 0.120
    corner_points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.rows < 2 or self.cols < 2:
            raise ValueError("cue grid needs at least 2x2 inner corners")
        if self.square_size <= 0:
            raise ValueError("square size must be positive")
        ys = (np.arange(self.rows) - (self.rows - 1) / 2.0) * self.square_size
        xs = (np.arange(self.cols) - (self.cols - 1) / 2.0) * self.square_size
        pts = np.array([[x, y, 0.0] for y in ys for x in xs])
        pts.setflags(write=False)
        object.__setattr__(self, "corner_points", pts)

    @property
    def corner_count(self) -> int:
        return self.rows * self.cols

    @property
    def half_extent(self) -> float:
        """Half the physical board width, quiet border included."""
        # squares span (cols+1)/2 squares either side of center, plus a
        # one-square-wide white border
        return (max(self.rows, self.cols) + 1) / 2.0 * self.square_size + self.square_size


def project_points(K: CameraIntrinsics, pose: Pose, points) -> np.ndarray:
    """Project an (N, 3) array of cue-frame points to (N, 2) pixels.

    Raises :class:`BehindCameraError` if any point has camera-frame depth
    at or below :data:`MIN_PROJECTION_DEPTH`.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    cam = pts @ pose.rotation.T + pose.translation
    z = cam[:, 2]
    if np.any(z <= MIN_PROJECTION_DEPTH):
        raise BehindCameraError("point at or behind the camera plane")
    uv = np.empty((len(pts), 2))
    uv[:, 0] = K.u0 + K.fx * cam[:, 0] / z
    uv[:, 1] = K.v0 + K.fy * cam[:, 1] / z
    return uv


def project_point(K: CameraIntrinsics, pose: Pose, p) -> PixelPoint:
    """Project a single cue-frame point; the homogeneous scale cancels."""
    uv = project_points(K, pose, _as_vec3(p)[None, :])[0]
    return PixelPoint(float(uv[0]), float(uv[1]))


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def rodrigues_to_matrix(r) -> np.ndarray:
    """Exponential map: axis-angle 3-vector (radians) to rotation matrix."""
    r = _as_vec3(r)
    theta = np.linalg.norm(r)
    if theta < 1e-12:
        # second-order series keeps the round trip exact near zero
        K = _skew(r)
        return np.eye(3) + K + 0.5 * (K @ K)
    axis = r / theta
    K = _skew(axis)
    return np.eye(3) + math.sin(theta) * K + (1.0 - math.cos(theta)) * (K @ K)


def matrix_to_rodrigues(R) -> np.ndarray:
    """Log map: rotation matrix to axis-angle 3-vector.

    Rejects non-orthonormal input.  Exact round trip partner of
    :func:`rodrigues_to_matrix` for rotation angles in (0, pi).
    """
    R = np.asarray(R, dtype=float).reshape(3, 3)
    if not np.allclose(R.T @ R, np.eye(3), atol=1e-6) or np.linalg.det(R) < 0:
        raise ValueError("input is not a proper rotation matrix")
    cos_theta = max(-1.0, min(1.0, (np.trace(R) - 1.0) / 2.0))
    theta = math.acos(cos_theta)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-7:
        return w / 2.0
    if math.pi - theta < 1e-5:
        # sin(theta) ~ 0: recover the axis from the symmetric part
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        k = int(np.argmax(axis))
        if axis[k] > 0:
            for i in range(3):
                if i != k:
                    axis[i] = A[k, i] / axis[k]
        axis /= np.linalg.norm(axis)
        # fix the overall sign using the skew part when it survives
        if np.dot(axis, w) < 0:
            axis = -axis
        return axis * theta
    return w * (theta / (2.0 * math.sin(theta)))


def camera_position_in_cue(pose: Pose) -> np.ndarray:
    """Camera center in cue coordinates: -R^T t (R^T = R^-1)."""
    return -pose.rotation.T @ pose.translation


def yaw_matrix(alpha: float) -> np.ndarray:
    """Pose rotation for a camera with pure relative heading ``alpha``.

    Positive alpha noses the camera to its right.  The middle row/column
    is untouched: heading never mixes into the vertical coordinate.
    """
    c, s = math.cos(alpha), math.sin(alpha)
    return np.array([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]])


def yaw_from_rotation(R) -> float:
    """Relative heading of a gimbal-leveled camera pose.

    Reads the rotation of the horizontal in-plane cue axis, which is
    robust to the sub-degree roll/pitch residue the gimbal leaves behind.
    """
    R = np.asarray(R, dtype=float)
    return math.atan2(R[2, 0], R[0, 0])


def rotation_zyx(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """Standard Z-Y-X Euler composition Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def pose_from_camera(position, yaw: float = 0.0) -> Pose:
    """Pose of a leveled camera at ``position`` (cue frame) with heading ``yaw``.

    Inverse of (:func:`camera_position_in_cue`, :func:`yaw_from_rotation`):
    the camera must be on the approach side (negative cue Z) to see the
    board.
    """
    R = yaw_matrix(yaw)
    return Pose(R, -R @ _as_vec3(position))


def wrap_angle(a: float) -> float:
    """Wrap an angle to [-pi, pi]."""
    return float(math.atan2(math.sin(a), math.cos(a)))
