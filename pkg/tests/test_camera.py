import math

import numpy as np
import pytest

from occ_locate import camera as cam
from occ_locate.camera import Beacon, CameraIntrinsics, Circle, Pose, Rectangle, Square
from occ_locate.errors import BehindCamera

# ── Helpers ──────────────────────────────────────────────────────────────────


def overhead(shape, distance, intr=None, offset=(0.0, 0.0)):
    """A ceiling fixture ``distance`` above an upward-looking camera at the origin."""
    intr = intr or CameraIntrinsics()
    beacon = Beacon(1, Pose([offset[0], offset[1], distance], cam.DOWNWARD), shape)
    return beacon, Pose([0.0, 0.0, 0.0], cam.UPWARD), intr


def expected_pixels(area, distance, intr):
    return area * (intr.focal_length / (intr.pixel_pitch * distance)) ** 2


# ── Intrinsics and poses ─────────────────────────────────────────────────────


def test_default_resolution_fits_sensor():
    intr = CameraIntrinsics()
    assert intr.resolution == (10285, 6857)
    assert intr.resolution[0] * intr.pixel_pitch <= intr.sensor_width
    assert intr.principal_point == (10285 / 2, 6857 / 2)


def test_calibration_matrix():
    intr = CameraIntrinsics(principal_point=(100.0, 50.0), skew=0.5)
    K = intr.K
    assert K[0, 0] == K[1, 1] == pytest.approx(0.016 / 3.5e-6)
    assert K[0, 1] == 0.5 and K[0, 2] == 100.0 and K[1, 2] == 50.0 and K[2, 2] == 1.0


def test_from_megapixels_keeps_sensor():
    intr = CameraIntrinsics.from_megapixels(8)
    assert intr.pixel_pitch == pytest.approx(math.sqrt(0.036 * 0.024 / 8e6))
    w, h = intr.resolution
    assert abs(w * h - 8e6) / 8e6 < 1e-3


@pytest.mark.parametrize("kw", [{"focal_length": -1}, {"pixel_pitch": 0}, {"fov_semi_angle": 2.0}, {"resolution": (20000, 10)}])
def test_intrinsics_validation(kw):
    with pytest.raises(ValueError):
        CameraIntrinsics(**kw)


def test_pose_rejects_improper_rotation():
    with pytest.raises(ValueError):
        Pose([0, 0, 0], np.diag([1.0, 1.0, -1.0]))
    with pytest.raises(ValueError):
        Pose([0, 0, 0], 2 * np.eye(3))


@pytest.mark.parametrize(
    "rot, axis",
    [(cam.UPWARD, (0, 0, 1)), (cam.DOWNWARD, (0, 0, -1)), (cam.FORWARD, (1, 0, 0)), (cam.REARWARD, (-1, 0, 0))],
)
def test_orientation_constants(rot, axis):
    pose = Pose([0, 0, 0], rot)
    assert np.allclose(pose.axis, axis)
    assert np.linalg.det(rot) == pytest.approx(1.0)


def test_pose_round_trip():
    pose = Pose([1.0, 2.0, 3.0], cam.rotation_z(0.3) @ cam.FORWARD)
    pts = np.array([[4.0, -1.0, 2.0], [0.5, 0.5, 0.5]])
    assert np.allclose(pose.to_world(pose.to_body(pts)), pts)


# ── Projection ───────────────────────────────────────────────────────────────


def test_axis_point_hits_principal_point():
    intr = CameraIntrinsics()
    px = cam.project_point([0, 0, 5], Pose(), intr)
    assert np.allclose(px, intr.principal_point)


def test_projection_scale():
    intr = CameraIntrinsics()
    px = cam.project_point([0.1, 0.0, 2.0], Pose(), intr)
    assert px[0] - intr.principal_point[0] == pytest.approx(intr.focal_px * 0.05)


def test_behind_camera_raises():
    with pytest.raises(BehindCamera):
        cam.project_point([0, 0, -1], Pose(), CameraIntrinsics())


def test_fov_boundary():
    intr = CameraIntrinsics(fov_semi_angle=math.radians(30))
    inside = [math.tan(math.radians(29.9)), 0, 1]
    outside = [math.tan(math.radians(30.1)), 0, 1]
    assert cam.in_fov(inside, Pose(), intr)
    assert not cam.in_fov(outside, Pose(), intr)
    assert not cam.in_fov([0, 0, -1], Pose(), intr)


def test_incidence_angle():
    assert cam.incidence_angle([1, 0, 1], Pose()) == pytest.approx(math.pi / 4)


# ── Rasterizer ───────────────────────────────────────────────────────────────


def test_lattice_count_exact_for_aligned_rectangle():
    poly = np.array([[10.0, 20.0], [40.0, 20.0], [40.0, 30.0], [10.0, 30.0]])
    for s in (1, 3):
        assert cam.count_lattice_points(poly, 100, 100, s) == 300 * s * s


def test_lattice_count_clips_to_sensor():
    poly = np.array([[-10.0, -10.0], [5.0, -10.0], [5.0, 5.0], [-10.0, 5.0]])
    assert cam.count_lattice_points(poly, 100, 100) == 25


def test_shared_edge_counted_once():
    left = np.array([[0.0, 0.0], [5.5, 0.0], [5.5, 4.0], [0.0, 4.0]])
    right = np.array([[5.5, 0.0], [11.0, 0.0], [11.0, 4.0], [5.5, 4.0]])
    whole = np.array([[0.0, 0.0], [11.0, 0.0], [11.0, 4.0], [0.0, 4.0]])
    n = cam.count_lattice_points
    assert n(left, 50, 50) + n(right, 50, 50) == n(whole, 50, 50)


def test_circle_outline_preserves_area():
    c = Circle(0.3)
    assert cam.polygon_area(c.outline()) == pytest.approx(c.area, rel=1e-12)


def test_circle_rasterization_oracle():
    # r = 5.64 cm disc 2 m overhead: pi r^2 (f / rho d)^2 = 52209.8 px
    beacon, pose, intr = overhead(Circle(0.0564), 2.0)
    exact = expected_pixels(beacon.area, 2.0, intr)
    assert exact == pytest.approx(52209.79, abs=0.01)
    assert cam.projected_area(beacon, pose, intr) == pytest.approx(exact, rel=1e-9)
    assert cam.rasterize_fixture(beacon, pose, intr, subsamples=8) == pytest.approx(exact, rel=1e-4)
    assert cam.rasterize_fixture(beacon, pose, intr) == pytest.approx(exact, rel=1e-3)


def test_fractional_mode_below_four_pixels():
    beacon, pose, intr = overhead(Square(0.0005), 2.0)
    eta = cam.rasterize_fixture(beacon, pose, intr)
    assert eta < 4
    assert eta == pytest.approx(expected_pixels(beacon.area, 2.0, intr), rel=1e-6)


def test_smear_grows_area_by_swept_band():
    beacon, pose, intr = overhead(Square(0.1), 4.0)
    side = 0.1 * intr.focal_px / 4.0
    base = cam.rasterize_fixture(beacon, pose, intr, subsamples=4)
    smeared = cam.rasterize_fixture(beacon, pose, intr, subsamples=4, smear=(10.0, 0.0))
    assert smeared - base == pytest.approx(10.0 * side, rel=0.01)


def test_fixture_off_sensor_is_zero():
    beacon, pose, intr = overhead(Square(0.1), 1.0, offset=(50.0, 0.0))
    assert cam.rasterize_fixture(beacon, pose, intr) == 0.0


def test_rectangle_area():
    assert Rectangle(0.6, 0.3).area == pytest.approx(0.18)
    with pytest.raises(ValueError):
        Rectangle(0, 1)
