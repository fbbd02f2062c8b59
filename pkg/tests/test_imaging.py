import numpy as np
import pytest

from cueland.geometry import CameraIntrinsics, CueModel, pose_from_camera, project_point
from cueland.imaging import (
    DEFAULT_MIN_SQUARE_PX,
    NO_NOISE,
    GrayImage,
    ObservationNoise,
    ground_truth_corners,
    min_projected_square_px,
    observe_corners_geometric,
    read_pgm,
    render_cue_image,
    write_pgm,
)

K = CameraIntrinsics.from_fov()
CUE = CueModel()


def facing_pose(x=0.0, y=0.0, dist=2.0, yaw=0.0):
    return pose_from_camera((x, y, -dist), yaw)


class TestGroundTruthCorners:
    def test_on_axis_grid_symmetric_about_principal_point(self):
        uv = ground_truth_corners(K, facing_pose(dist=2.0), CUE)
        center = uv.mean(axis=0)
        assert center == pytest.approx((K.u0, K.v0))
        # mirror symmetry of the 3x3 grid
        assert np.allclose(uv + uv[::-1], 2 * center, atol=1e-9)

    def test_returns_nine_corners_for_default_grid(self):
        assert ground_truth_corners(K, facing_pose(), CUE).shape == (9, 2)

    def test_sideward_offset_shifts_corners_left(self):
        dist = 4.0
        base = ground_truth_corners(K, facing_pose(dist=dist), CUE)
        moved = ground_truth_corners(K, facing_pose(x=0.5, dist=dist), CUE)
        shift = base[:, 0] - moved[:, 0]
        expected = K.fx * 0.5 / dist
        assert np.all(shift > 0)  # corners move left in the image
        assert np.allclose(shift, expected, rtol=0.01)

    def test_row_major_order_preserved(self):
        uv = ground_truth_corners(K, facing_pose(), CUE)
        for i, p in enumerate(CUE.corner_points):
            assert np.allclose(uv[i], project_point(K, facing_pose(), p))


class TestGeometricObservation:
    def test_zero_noise_is_exact_ground_truth(self):
        rng = np.random.default_rng(0)
        obs = observe_corners_geometric(K, facing_pose(dist=5.0), CUE, NO_NOISE, rng)
        assert np.array_equal(obs, ground_truth_corners(K, facing_pose(dist=5.0), CUE))

    def test_range_boundary_17m_ok_18m_fails(self):
        rng = np.random.default_rng(0)
        assert observe_corners_geometric(K, facing_pose(dist=17.0), CUE, NO_NOISE, rng) is not None
        assert observe_corners_geometric(K, facing_pose(dist=18.0), CUE, NO_NOISE, rng) is None

    def test_min_square_threshold_calibration(self):
        # 0.12 m squares at the 17.5 m cutoff with fx~=931 project to ~6.4 px
        assert DEFAULT_MIN_SQUARE_PX == pytest.approx(0.12 * K.fx / 17.5, abs=0.05)
        corners = ground_truth_corners(K, facing_pose(dist=17.5), CUE)
        assert min_projected_square_px(corners, 3, 3) == pytest.approx(DEFAULT_MIN_SQUARE_PX, abs=0.05)

    def test_out_of_frame_corner_fails(self):
        rng = np.random.default_rng(0)
        assert observe_corners_geometric(K, facing_pose(x=2.5, dist=2.0), CUE, NO_NOISE, rng) is None

    def test_behind_camera_fails(self):
        rng = np.random.default_rng(0)
        pose = pose_from_camera((0, 0, 1.0))  # wrong side of the board
        assert observe_corners_geometric(K, pose, CUE, NO_NOISE, rng) is None

    def test_noise_statistics_match_sigma(self):
        rng = np.random.default_rng(123)
        noise = ObservationNoise(sigma_px=0.15)
        pose = facing_pose(dist=5.0)
        truth = ground_truth_corners(K, pose, CUE)
        errs = []
        for _ in range(1200):  # 1200 frames x 18 coordinates > 1e4 samples
            obs = observe_corners_geometric(K, pose, CUE, noise, rng)
            errs.append(obs - truth)
        std = np.std(np.concatenate(errs).ravel())
        assert std == pytest.approx(0.15, rel=0.10)

    def test_same_seed_same_observation(self):
        noise = ObservationNoise(sigma_px=0.2)
        a = observe_corners_geometric(K, facing_pose(), CUE, noise, np.random.default_rng(77))
        b = observe_corners_geometric(K, facing_pose(), CUE, noise, np.random.default_rng(77))
        assert np.array_equal(a, b)

    def test_visibility_monotone_in_range(self):
        rng = np.random.default_rng(0)
        detected = [
            observe_corners_geometric(K, facing_pose(dist=d), CUE, NO_NOISE, rng) is not None
            for d in np.arange(1.0, 25.0, 0.5)
        ]
        # once detection drops out it never comes back at longer range
        first_fail = detected.index(False)
        assert all(detected[:first_fail])
        assert not any(detected[first_fail:])


class TestRender:
    def test_square_centers_have_correct_shade(self):
        pose = facing_pose(dist=3.0)
        img = render_cue_image(K, pose, CUE, NO_NOISE)
        s = CUE.square_size
        # square centers adjacent to the cue origin: (i+j) parity fixes color
        black_center = project_point(K, pose, (-s / 2, -s / 2, 0))
        white_center = project_point(K, pose, (s / 2, -s / 2, 0))
        assert img.intensity[int(round(black_center.v)), int(round(black_center.u))] < 0.2
        assert img.intensity[int(round(white_center.v)), int(round(white_center.u))] > 0.8

    def test_inner_corner_is_a_saddle(self):
        pose = facing_pose(dist=3.0)
        img = render_cue_image(K, pose, CUE, ObservationNoise(0.0, 1.0, 0.0))
        c = project_point(K, pose, (0.0, 0.0, 0.0))
        u, v = int(round(c.u)), int(round(c.v))
        patch = img.intensity[v - 6 : v + 7, u - 6 : u + 7]
        gy, gx = np.gradient(patch)
        # both gradient orientations present around a checker corner
        assert gx.max() > 0.01 and gx.min() < -0.01
        assert gy.max() > 0.01 and gy.min() < -0.01

    def test_out_of_view_gives_plain_background(self):
        pose = pose_from_camera((0, 0, 1.0))  # board behind the camera
        img = render_cue_image(K, pose, CUE, NO_NOISE)
        assert np.allclose(img.intensity, 0.5)

    def test_render_deterministic_for_seed(self):
        noise = ObservationNoise(0.15, 1.0, 0.01)
        a = render_cue_image(K, facing_pose(), CUE, noise, np.random.default_rng(5))
        b = render_cue_image(K, facing_pose(), CUE, noise, np.random.default_rng(5))
        assert np.array_equal(a.intensity, b.intensity)

    def test_intensities_bounded(self):
        noise = ObservationNoise(0.15, 1.0, 0.05)
        img = render_cue_image(K, facing_pose(), CUE, noise, np.random.default_rng(1))
        assert img.intensity.min() >= 0.0 and img.intensity.max() <= 1.0


class TestPgm:
    def test_round_trip(self, tmp_path):
        img = render_cue_image(K, facing_pose(dist=4.0), CUE, NO_NOISE)
        path = tmp_path / "frame.pgm"
        write_pgm(img, path)
        back = read_pgm(path)
        assert (back.width, back.height) == (img.width, img.height)
        assert np.allclose(back.intensity, img.intensity, atol=1 / 255.0 + 1e-9)

    def test_gray_image_validates_shape(self):
        with pytest.raises(ValueError):
            GrayImage(10, 5, np.zeros((10, 5)))
