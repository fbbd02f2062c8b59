"""Pose estimation from corner observations and state filtering.

The estimator is a two-stage PnP: an exhaustive RANSAC over minimal
4-point subsets produces a rough pose and an inlier set, which seed a
full Levenberg-Marquardt refinement of the reprojection error over all
inliers.  The recovered pose converts to the relative state the
controller consumes (sideward / vertical / forward distances plus
relative heading), and a bounded moving-average filter suppresses the
long-range noise on the yaw and lateral channels.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .geometry import (
    MIN_PROJECTION_DEPTH,
    CameraIntrinsics,
    CueModel,
    Pose,
    camera_position_in_cue,
    rodrigues_to_matrix,
    wrap_angle,
    yaw_from_rotation,
)


class EstimationError(RuntimeError):
    """Pose estimation failed; the caller should mark the state stale."""


class NoConsensusError(EstimationError):
    """RANSAC could not find a model with at least 4 inliers."""


@dataclass(frozen=True)
class RelativeState:
    """Camera state relative to the cue, in controller conventions.

    ``x_side`` is positive when the camera sits to its own right of the
    cue center, ``y_vert`` is positive upward, ``z_fwd`` is the distance
    from the cue plane (positive on the approach side), ``yaw`` is the
    relative heading in radians (positive nose-right).
    """

    x_side: float
    y_vert: float
    z_fwd: float
    yaw: float
    t: float
    fresh: bool


@dataclass(frozen=True)
class PnPResult:
    pose: Pose
    inliers: np.ndarray  # indices into the observed corner list
    reproj_rms: float
    iterations: int
    converged: bool

    def __post_init__(self):
        idx = np.asarray(self.inliers, dtype=int)
        if len(idx) < 4:
            raise ValueError("a PnP solution needs at least 4 inliers")
        if self.reproj_rms < 0:
            raise ValueError("reprojection RMS cannot be negative")
        object.__setattr__(self, "inliers", idx)


def reprojection_error(
    pose: Pose, K: CameraIntrinsics, object_pts, image_pts
) -> tuple[np.ndarray, float]:
    """Per-point residuals (observed - projected) and their RMS in pixels.

    RMS is over points: sqrt(sum(|residual_i|^2) / N).
    """
    obj = np.asarray(object_pts, dtype=float).reshape(-1, 3)
    img = np.asarray(image_pts, dtype=float).reshape(-1, 2)
    if len(obj) != len(img):
        raise ValueError("object/image point counts differ")
    from .geometry import project_points

    proj = project_points(K, pose, obj)
    residuals = img - proj
    rms = float(np.sqrt(np.sum(residuals**2) / len(obj)))
    return residuals, rms


def _rotation_jacobian(r: np.ndarray, R: np.ndarray) -> np.ndarray:
    """d(R)/d(r) as a (3, 3, 3) tensor: slice i is dR/dr_i.

    Closed form for the derivative of the exponential map in rotation
    coordinates; collapses to the skew generators at r = 0.
    """
    theta2 = float(r @ r)
    out = np.empty((3, 3, 3))
    if theta2 < 1e-24:
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1.0
            out[i] = _skew(e)
        return out
    ImR = np.eye(3) - R
    rx = _skew(r)
    for i in range(3):
        e = np.zeros(3)
        e[i] = 1.0
        out[i] = ((r[i] * rx + _skew(np.cross(r, ImR @ e))) / theta2) @ R
    return out


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _project_and_jacobian(
    K: CameraIntrinsics, r: np.ndarray, t: np.ndarray, pts: np.ndarray
) -> tuple[np.ndarray, np.ndarray] | None:
    """Projections (N, 2) and residual Jacobian (2N, 6), or None if any
    point falls behind the camera.  Parameter order: (r, t)."""
    R = rodrigues_to_matrix(r)
    cam = pts @ R.T + t
    z = cam[:, 2]
    if np.any(z <= MIN_PROJECTION_DEPTH):
        return None
    n = len(pts)
    uv = np.empty((n, 2))
    uv[:, 0] = K.u0 + K.fx * cam[:, 0] / z
    uv[:, 1] = K.v0 + K.fy * cam[:, 1] / z
    # dRP/dr: (N, 3, 3) with column i = (dR/dr_i) @ p
    dR = _rotation_jacobian(r, R)
    drot = np.stack([pts @ dR[i].T for i in range(3)], axis=2)
    # d(uv)/d(cam): (N, 2, 3)
    A = np.zeros((n, 2, 3))
    A[:, 0, 0] = K.fx / z
    A[:, 0, 2] = -K.fx * cam[:, 0] / z**2
    A[:, 1, 1] = K.fy / z
    A[:, 1, 2] = -K.fy * cam[:, 1] / z**2
    dcam = np.concatenate([drot, np.broadcast_to(np.eye(3), (n, 3, 3))], axis=2)  # (N, 3, 6)
    dproj = A @ dcam  # (N, 2, 6)
    # residual = observed - projected, so its Jacobian is -dproj
    J = -dproj.reshape(2 * n, 6)
    return uv, J


def _bootstrap_translation(K: CameraIntrinsics, obj: np.ndarray, img: np.ndarray) -> np.ndarray:
    """Canonical depth seed for a degenerate (zero) initial pose.

    The pinhole model is undefined at zero depth, so a requested
    zero-translation start resolves to the camera axis at the
    similar-triangles depth estimate.
    """
    obj_spread = np.max(np.linalg.norm(obj - obj.mean(axis=0), axis=1))
    img_spread = np.max(np.linalg.norm(img - img.mean(axis=0), axis=1))
    depth = K.fx * obj_spread / max(img_spread, 1e-9)
    return np.array([0.0, 0.0, float(depth)])


def solve_pnp_lm(
    K: CameraIntrinsics,
    object_pts,
    image_pts,
    initial: Pose | None = None,
    max_iterations: int = 100,
) -> PnPResult:
    """Levenberg-Marquardt PnP minimizing the summed squared reprojection error.

    Parameters are a rotation 3-vector and translation, both zero by
    default (degenerate zero depth resolves to a canonical bootstrap).
    Damping starts at 1e-3, grows 10x on a rejected step and shrinks 10x
    on an accepted one; iteration stops when the step's infinity norm
    drops below 1e-10, the RMS change drops below 1e-12, or after
    ``max_iterations``.  The Jacobian is analytic (finite-difference
    checked in the test suite).  A non-converged run returns the best
    pose found, flagged.
    """
    obj = np.asarray(object_pts, dtype=float).reshape(-1, 3)
    img = np.asarray(image_pts, dtype=float).reshape(-1, 2)
    n = len(obj)
    if n < 4:
        raise ValueError("PnP needs at least 4 points")
    if len(img) != n:
        raise ValueError("object/image point counts differ")
    if initial is None:
        r = np.zeros(3)
        t = np.zeros(3)
    else:
        from .geometry import matrix_to_rodrigues

        r = matrix_to_rodrigues(initial.rotation)
        t = initial.translation.copy()
    depths = (obj @ rodrigues_to_matrix(r).T + t)[:, 2]
    if np.any(depths <= MIN_PROJECTION_DEPTH):
        t = _bootstrap_translation(K, obj, img)
        r = np.zeros(3)

    evaluated = _project_and_jacobian(K, r, t, obj)
    if evaluated is None:
        raise EstimationError("initial pose is not projectable")
    uv, J = evaluated
    res = (img - uv).ravel()
    cost = float(res @ res)
    lam = 1e-3
    iterations = 0
    converged = False
    singular_strikes = 0
    while iterations < max_iterations:
        iterations += 1
        JtJ = J.T @ J
        g = J.T @ res
        try:
            step = np.linalg.solve(JtJ + lam * np.eye(6), -g)
        except np.linalg.LinAlgError:
            singular_strikes += 1
            if singular_strikes >= 8:
                raise EstimationError("normal equations remained singular")
            lam *= 10.0
            continue
        if float(np.max(np.abs(step))) < 1e-10:
            converged = True
            break
        trial_r = r + step[:3]
        trial_t = t + step[3:]
        trial_eval = _project_and_jacobian(K, trial_r, trial_t, obj)
        if trial_eval is None:
            lam *= 10.0
            continue
        trial_uv, trial_J = trial_eval
        trial_res = (img - trial_uv).ravel()
        trial_cost = float(trial_res @ trial_res)
        if trial_cost < cost:
            rms_change = abs(math.sqrt(cost / n) - math.sqrt(trial_cost / n))
            r, t, uv, J, res, cost = trial_r, trial_t, trial_uv, trial_J, trial_res, trial_cost
            lam = max(lam / 10.0, 1e-15)
            if rms_change < 1e-12:
                converged = True
                break
        else:
            lam *= 10.0
            if lam > 1e12:
                break
    pose = Pose(rodrigues_to_matrix(r), t)
    rms = math.sqrt(cost / n)
    return PnPResult(
        pose=pose,
        inliers=np.arange(n),
        reproj_rms=rms,
        iterations=iterations,
        converged=converged,
    )


def ransac_pnp(
    K: CameraIntrinsics,
    object_pts,
    image_pts,
    reproj_threshold: float = 2.0,
    max_iters: int | None = None,
) -> tuple[Pose, np.ndarray]:
    """Rough pose and inlier set via exhaustive minimal-subset search.

    With the small corner counts this system uses, every 4-point subset
    is tried in deterministic order (strictly better than random
    sampling at this size); each is fit with a short 10-iteration LM run
    and scored by its inlier count at ``reproj_threshold``.  A full
    consensus stops the search early.  Raises
    :class:`NoConsensusError` when no model reaches 4 inliers.
    """
    obj = np.asarray(object_pts, dtype=float).reshape(-1, 3)
    img = np.asarray(image_pts, dtype=float).reshape(-1, 2)
    n = len(obj)
    if n < 4:
        raise ValueError("RANSAC needs at least 4 points")
    best: tuple[int, float, Pose, np.ndarray] | None = None
    for tried, subset in enumerate(combinations(range(n), 4)):
        if max_iters is not None and tried >= max_iters:
            break
        idx = list(subset)
        try:
            fit = solve_pnp_lm(K, obj[idx], img[idx], max_iterations=10)
        except EstimationError:
            continue
        try:
            residuals, rms_all = reprojection_error(fit.pose, K, obj, img)
        except Exception:
            continue
        norms = np.linalg.norm(residuals, axis=1)
        inliers = np.nonzero(norms <= reproj_threshold)[0]
        score = (len(inliers), -rms_all)
        if best is None or score > (best[0], -best[1]):
            best = (len(inliers), rms_all, fit.pose, inliers)
            if len(inliers) == n:
                break
    if best is None or best[0] < 4:
        raise NoConsensusError("no 4-point model reached consensus")
    return best[2], best[3]


def estimate_pose(
    K: CameraIntrinsics,
    object_pts,
    image_pts,
    reproj_threshold: float = 2.0,
) -> PnPResult:
    """Two-stage pipeline: RANSAC rough estimate feeding the full LM refine."""
    obj = np.asarray(object_pts, dtype=float).reshape(-1, 3)
    img = np.asarray(image_pts, dtype=float).reshape(-1, 2)
    rough, inliers = ransac_pnp(K, obj, img, reproj_threshold)
    refined = solve_pnp_lm(K, obj[inliers], img[inliers], initial=rough)
    return PnPResult(
        pose=refined.pose,
        inliers=inliers,
        reproj_rms=refined.reproj_rms,
        iterations=refined.iterations,
        converged=refined.converged,
    )


def estimate_relative_state(
    observed_corners,
    cue: CueModel,
    K: CameraIntrinsics,
    t: float,
    reproj_threshold: float = 2.0,
) -> tuple[RelativeState, PnPResult]:
    """Relative state from one corner observation.

    The camera position in cue coordinates gives the distances directly
    (the vertical and forward axes flip sign so that up and approach-side
    are positive); heading comes from the leveled-camera yaw extraction.
    Raises :class:`EstimationError` when no valid pose exists.
    """
    result = estimate_pose(K, cue.corner_points, observed_corners, reproj_threshold)
    p = camera_position_in_cue(result.pose)
    z_fwd = -float(p[2])
    if z_fwd <= 0:
        raise EstimationError("estimated camera on the wrong side of the cue plane")
    state = RelativeState(
        x_side=float(p[0]),
        y_vert=-float(p[1]),
        z_fwd=z_fwd,
        yaw=wrap_angle(yaw_from_rotation(result.pose.rotation)),
        t=t,
        fresh=True,
    )
    return state, result


@dataclass
class MovingAverageFilter:
    """Bounded moving average over the yaw and lateral channels.

    Until the window fills, samples pass through untouched (the filter
    is "not activated").  Once active, a sample deviating from the
    running mean by more than the channel bound is rejected and the mean
    substituted in its place; the output is the updated window mean.
    The forward distance is already clean and always passes through raw.
    """

    window: int = 10
    yaw_bound: float = math.radians(5.0)
    xy_bound: float = 0.25
    _yaw: deque = field(init=False, repr=False)
    _x: deque = field(init=False, repr=False)
    _y: deque = field(init=False, repr=False)

    def __post_init__(self):
        if self.window < 1:
            raise ValueError("window must be at least 1")
        if self.yaw_bound <= 0 or self.xy_bound <= 0:
            raise ValueError("filter bounds must be positive")
        self._yaw = deque(maxlen=self.window)
        self._x = deque(maxlen=self.window)
        self._y = deque(maxlen=self.window)

    @property
    def active(self) -> bool:
        """True once the history window is full and filtering engages."""
        return len(self._yaw) >= self.window

    def reset(self) -> None:
        self._yaw.clear()
        self._x.clear()
        self._y.clear()

    def _admit(self, hist: deque, value: float, bound: float, angular: bool) -> float:
        if len(hist) < self.window:
            hist.append(value)
            return value
        mean = sum(hist) / len(hist)
        deviation = wrap_angle(value - mean) if angular else value - mean
        hist.append(mean if abs(deviation) > bound else value)
        return sum(hist) / len(hist)


def moving_average_update(filt: MovingAverageFilter, raw: RelativeState) -> RelativeState:
    """Run one fresh sample through the filter; see the filter docstring."""
    if not raw.fresh:
        raise ValueError("only fresh states may enter the filter")
    return RelativeState(
        x_side=filt._admit(filt._x, raw.x_side, filt.xy_bound, angular=False),
        y_vert=filt._admit(filt._y, raw.y_vert, filt.xy_bound, angular=False),
        z_fwd=raw.z_fwd,
        yaw=filt._admit(filt._yaw, raw.yaw, filt.yaw_bound, angular=True),
        t=raw.t,
        fresh=True,
    )


class RelativeStateEstimator:
    """Per-vehicle estimation front end: PnP plus filtering plus staleness.

    Owns one moving-average filter and the previous output, so a missed
    detection yields the carried state flagged stale.  Single-owner
    mutable state: one instance per vehicle, not shared across threads.
    """

    def __init__(self, K: CameraIntrinsics, cue: CueModel, filt: MovingAverageFilter,
                 reproj_threshold: float = 2.0):
        self.K = K
        self.cue = cue
        self.filter = filt
        self.reproj_threshold = reproj_threshold
        self.last_raw: RelativeState | None = None
        self.last_filtered: RelativeState | None = None
        self.last_result: PnPResult | None = None

    def update(self, observed_corners, t: float) -> tuple[RelativeState, RelativeState]:
        """One tick: returns (raw, filtered); both stale on failure."""
        if observed_corners is not None:
            try:
                raw, result = estimate_relative_state(
                    observed_corners, self.cue, self.K, t, self.reproj_threshold
                )
            except EstimationError:
                raw, result = None, None
        else:
            raw, result = None, None
        if raw is None:
            stale_from = self.last_filtered or RelativeState(0.0, 0.0, 0.0, 0.0, t, False)
            stale = RelativeState(
                stale_from.x_side, stale_from.y_vert, stale_from.z_fwd, stale_from.yaw, t, False
            )
            self.last_raw = stale
            self.last_filtered = stale
            self.last_result = None
            return stale, stale
        filtered = moving_average_update(self.filter, raw)
        self.last_raw = raw
        self.last_filtered = filtered
        self.last_result = result
        return raw, filtered
