"""Synthetic sensor for the vision loop.

Two fidelity modes share the same visibility model:

* geometric: projects the true inner corners, adds Gaussian pixel noise,
  and reports a detection failure outside the valid range.  This is the
  fast path used by Monte-Carlo landing batches.
* raster: renders an anti-aliased grayscale checkerboard so the full
  corner-detection pipeline can be exercised honestly.

The range model declares the cue undetectable once the projected side
of a checker square drops below ``min_square_px``.  The default of
6.4 px is calibrated so a 120 mm square seen by the default 720p camera
cuts off near 17.5 m; resolution/size trade-offs fold into this single
threshold, which is an approximation of the real detector's limits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import (
    MIN_PROJECTION_DEPTH,
    BehindCameraError,
    CameraIntrinsics,
    CueModel,
    Pose,
    project_points,
)

#: Projected square side (px) below which detection is declared failed.
DEFAULT_MIN_SQUARE_PX = 6.4

_BACKGROUND = 0.5
_SUPERSAMPLE = 4  # 4x sub-pixel sampling per axis; coarser grids bias corners


@dataclass(frozen=True)
class GrayImage:
    """Grayscale frame with row-major float intensities in [0, 1]."""

    width: int
    height: int
    intensity: np.ndarray  # shape (height, width)

    def __post_init__(self):
        a = np.asarray(self.intensity, dtype=float)
        if a.shape != (self.height, self.width):
            raise ValueError(f"intensity shape {a.shape} does not match {self.height}x{self.width}")
        object.__setattr__(self, "intensity", a)

    def clipped(self) -> "GrayImage":
        return GrayImage(self.width, self.height, np.clip(self.intensity, 0.0, 1.0))


@dataclass(frozen=True)
class ObservationNoise:
    """Sensor imperfection model.

    ``sigma_px`` contaminates geometric-mode corner observations;
    ``blur_radius`` (Gaussian sigma, px) and ``intensity_sigma`` act on
    rasterized frames.  The default sigma_px of 0.15 is calibrated to
    reproduce sub-centimeter close-range pose accuracy once propagated
    through the PnP solver.
    """

    sigma_px: float = 0.15
    blur_radius: float = 1.0
    intensity_sigma: float = 0.01

    def __post_init__(self):
        if self.sigma_px < 0 or self.blur_radius < 0 or self.intensity_sigma < 0:
            raise ValueError("noise magnitudes must be non-negative")


NO_NOISE = ObservationNoise(sigma_px=0.0, blur_radius=0.0, intensity_sigma=0.0)


def ground_truth_corners(K: CameraIntrinsics, pose: Pose, cue: CueModel) -> np.ndarray:
    """Exact projections of the inner corners, row-major order preserved.

    Raises :class:`~cueland.geometry.BehindCameraError` when any corner
    fails to project.
    """
    return project_points(K, pose, cue.corner_points)


def min_projected_square_px(corners: np.ndarray, rows: int, cols: int) -> float:
    """Smallest projected side of a checker square, from ordered corners."""
    grid = np.asarray(corners, dtype=float).reshape(rows, cols, 2)
    sides = []
    if cols > 1:
        sides.append(np.linalg.norm(np.diff(grid, axis=1), axis=2).ravel())
    if rows > 1:
        sides.append(np.linalg.norm(np.diff(grid, axis=0), axis=2).ravel())
    return float(np.min(np.concatenate(sides)))


def observe_corners_geometric(
    K: CameraIntrinsics,
    pose: Pose,
    cue: CueModel,
    noise: ObservationNoise,
    rng: np.random.Generator,
    min_square_px: float = DEFAULT_MIN_SQUARE_PX,
) -> np.ndarray | None:
    """Noisy corner observation, or ``None`` when detection would fail.

    Failure cases: a corner projects outside the frame (or behind the
    camera), or the projected square side is under ``min_square_px``.
    The visibility gate is evaluated on the true projections so that
    detectability is a deterministic function of the geometry.
    """
    try:
        truth = ground_truth_corners(K, pose, cue)
    except BehindCameraError:
        return None
    u, v = truth[:, 0], truth[:, 1]
    if np.any((u < 0) | (u > K.width - 1) | (v < 0) | (v > K.height - 1)):
        return None
    if min_projected_square_px(truth, cue.rows, cue.cols) < min_square_px:
        return None
    if noise.sigma_px > 0:
        return truth + rng.normal(scale=noise.sigma_px, size=truth.shape)
    return truth.copy()


def _cue_plane_homography(K: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Homography mapping cue-plane (X, Y) to homogeneous pixel coords."""
    H = K.matrix @ np.column_stack([pose.rotation[:, 0], pose.rotation[:, 1], pose.translation])
    return H


def _board_intensity(X: np.ndarray, Y: np.ndarray, cue: CueModel) -> np.ndarray:
    """Checkerboard pattern on the cue plane: squares, quiet border, background."""
    s = cue.square_size
    half_rows = (cue.rows + 1) / 2.0 * s
    half_cols = (cue.cols + 1) / 2.0 * s
    out = np.full(X.shape, _BACKGROUND)
    on_border = (np.abs(X) <= half_cols + s) & (np.abs(Y) <= half_rows + s)
    out[on_border] = 1.0
    on_board = (np.abs(X) < half_cols) & (np.abs(Y) < half_rows)
    i = np.floor((X + half_cols) / s).astype(int)
    j = np.floor((Y + half_rows) / s).astype(int)
    black = ((i + j) % 2 == 0) & on_board
    white = ((i + j) % 2 == 1) & on_board
    out[black] = 0.0
    out[white] = 1.0
    return out


def render_cue_image(
    K: CameraIntrinsics,
    pose: Pose,
    cue: CueModel,
    noise: ObservationNoise,
    rng: np.random.Generator | None = None,
) -> GrayImage:
    """Rasterize the board: 4x supersampling, Gaussian PSF, additive noise.

    A mid-gray background surrounds a white quiet border one square wide;
    if the cue is entirely out of view the frame is plain background.
    """
    h, w, ss = K.height, K.width, _SUPERSAMPLE
    img = np.full((h, w), _BACKGROUND)
    region = _board_pixel_bounds(K, pose, cue, margin=3.0 * noise.blur_radius + 3.0)
    if region is not None:
        u_lo, u_hi, v_lo, v_hi = region
        H = _cue_plane_homography(K, pose)
        Hinv = np.linalg.inv(H)
        # sub-pixel sample centers covering the board's bounding box only
        us = u_lo + (np.arange((u_hi - u_lo) * ss) + 0.5) / ss - 0.5
        vs = v_lo + (np.arange((v_hi - v_lo) * ss) + 0.5) / ss - 0.5
        U, V = np.meshgrid(us, vs)
        q = np.stack([U, V, np.ones_like(U)], axis=0).reshape(3, -1)
        p = Hinv @ q
        with np.errstate(divide="ignore", invalid="ignore"):
            X = p[0] / p[2]
            Y = p[1] / p[2]
        valid = np.isfinite(X) & np.isfinite(Y) & _ray_hits_plane(K, pose, q)
        shade = np.full(U.size, _BACKGROUND)
        shade[valid] = _board_intensity(X[valid], Y[valid], cue)
        fine = shade.reshape(len(vs), len(us))
        patch = fine.reshape(v_hi - v_lo, ss, u_hi - u_lo, ss).mean(axis=(1, 3))
        img[v_lo:v_hi, u_lo:u_hi] = patch
    if noise.blur_radius > 0:
        img = ndimage.gaussian_filter(img, sigma=noise.blur_radius, mode="nearest")
    if noise.intensity_sigma > 0:
        if rng is None:
            raise ValueError("rng required when intensity noise is enabled")
        img = img + rng.normal(scale=noise.intensity_sigma, size=img.shape)
    return GrayImage(w, h, np.clip(img, 0.0, 1.0))


def _board_pixel_bounds(
    K: CameraIntrinsics, pose: Pose, cue: CueModel, margin: float
) -> tuple[int, int, int, int] | None:
    """Clipped integer pixel bounds of the board (border included).

    Returns ``None`` when the board is entirely out of view or behind
    the camera.
    """
    e = cue.half_extent
    quad = np.array([[-e, -e, 0.0], [e, -e, 0.0], [e, e, 0.0], [-e, e, 0.0]])
    cam = quad @ pose.rotation.T + pose.translation
    if np.any(cam[:, 2] <= MIN_PROJECTION_DEPTH):
        # degenerate perspective: fall back to the whole frame when the
        # board straddles the camera plane, plain background if behind
        if np.all(cam[:, 2] <= MIN_PROJECTION_DEPTH):
            return None
        return 0, K.width, 0, K.height
    uv = np.empty((4, 2))
    uv[:, 0] = K.u0 + K.fx * cam[:, 0] / cam[:, 2]
    uv[:, 1] = K.v0 + K.fy * cam[:, 1] / cam[:, 2]
    u_lo = int(np.floor(uv[:, 0].min() - margin))
    u_hi = int(np.ceil(uv[:, 0].max() + margin)) + 1
    v_lo = int(np.floor(uv[:, 1].min() - margin))
    v_hi = int(np.ceil(uv[:, 1].max() + margin)) + 1
    u_lo, u_hi = max(0, u_lo), min(K.width, u_hi)
    v_lo, v_hi = max(0, v_lo), min(K.height, v_hi)
    if u_hi <= u_lo or v_hi <= v_lo:
        return None
    return u_lo, u_hi, v_lo, v_hi


def _ray_hits_plane(K: CameraIntrinsics, pose: Pose, q: np.ndarray) -> np.ndarray:
    """Mask of pixel rays that intersect the cue plane in front of the lens."""
    rays = np.linalg.inv(K.matrix) @ q  # camera-frame directions
    n_cam = pose.rotation[:, 2]  # cue-plane normal in camera frame
    d = float(n_cam @ pose.translation)  # plane offset: n . p_cam = d on the plane
    denom = n_cam @ rays
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = d / denom
    return np.isfinite(depth) & (depth > 0)


def write_pgm(img: GrayImage, path) -> None:
    """Dump a frame as a binary PGM (P5) file for debugging."""
    data = np.clip(np.round(img.intensity * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{img.width} {img.height}\n255\n".encode("ascii"))
        f.write(data.tobytes())


def read_pgm(path) -> GrayImage:
    """Read back a binary PGM (P5) file written by :func:`write_pgm`."""
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic != b"P5":
            raise ValueError(f"not a binary PGM file: {path}")
        line = f.readline()
        while line.startswith(b"#"):
            line = f.readline()
        w, h = (int(x) for x in line.split())
        maxval = int(f.readline())
        data = np.frombuffer(f.read(w * h), dtype=np.uint8).reshape(h, w)
    return GrayImage(w, h, data.astype(float) / maxval)
