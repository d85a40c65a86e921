import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palm_align.geometry import (
    CameraCalib,
    CameraIntrinsics,
    DegenerateInput,
    FrameMismatch,
    IntersectionBehindCamera,
    NonPositiveDepth,
    Pose,
    RayParallelToPlane,
    camera_frame_rotation,
    compose,
    invert,
    look_at,
    poses_close,
    project_point,
    random_rotation,
    rot_from_6d,
    rot_to_6d,
    rot_x,
    rot_z,
    round_half_away,
    unproject_to_plane,
)

SEEDS = st.integers(0, 2**32 - 1)


def identity_calib(fx=512.0, c=256.0):
    return CameraCalib(CameraIntrinsics(fx, fx, c, c), Pose.identity(), 512, 512)


def nadir_calib(x=0.5, y=0.0, h=1.0):
    # camera z axis points straight down; x stays world x
    return CameraCalib(CameraIntrinsics(512, 512, 256, 256), Pose(rot_x(np.pi), [x, y, h]), 512, 512)


def oracle_project(calib, p):
    """Independent 3x4 homogeneous projection."""
    R, t = calib.pose.rotation, calib.pose.translation
    Rt = np.hstack([R.T, (-R.T @ t)[:, None]])
    K = np.array([[calib.intrinsics.fx, 0, calib.intrinsics.cx],
                  [0, calib.intrinsics.fy, calib.intrinsics.cy],
                  [0, 0, 1.0]])
    ph = K @ Rt @ np.append(p, 1.0)
    return ph[:2] / ph[2]


# ---- project_point

def test_optical_axis_hits_principal_point():
    np.testing.assert_allclose(project_point(identity_calib(), [0, 0, 1]), [256, 256], atol=1e-12)


def test_lateral_point_matches_hand_oracle():
    np.testing.assert_allclose(project_point(identity_calib(), [0.25, 0, 1]), [512 * 0.25 + 256, 256], atol=1e-12)


@pytest.mark.parametrize("p", [[0, 0, -1], [0, 0, 0], [1, 1, 1e-7]])
def test_point_behind_camera_raises(p):
    with pytest.raises(NonPositiveDepth):
        project_point(identity_calib(), p)


def test_projection_agrees_with_matrix_oracle():
    rng = np.random.default_rng(7)
    calib = CameraCalib(CameraIntrinsics(600, 580, 300, 250), look_at([1.5, -0.4, 1.0], [0.3, 0.1, 0.0]), 640, 480)
    pts = rng.uniform(-0.5, 0.5, size=(1000, 3)) + [0.3, 0.1, 0.0]
    for p in pts:
        np.testing.assert_allclose(project_point(calib, p), oracle_project(calib, p), atol=1e-9)


def test_projection_matrix_property_matches_oracle():
    calib = CameraCalib(CameraIntrinsics(600, 580, 300, 250), look_at([1.5, -0.4, 1.0], [0.3, 0.1, 0.0]), 640, 480)
    p = np.array([0.2, 0.3, 0.05])
    ph = calib.projection_matrix() @ np.append(p, 1)
    np.testing.assert_allclose(ph[:2] / ph[2], oracle_project(calib, p), atol=1e-9)


# ---- unproject_to_plane

def test_nadir_ray_hits_below_camera():
    np.testing.assert_allclose(unproject_to_plane(nadir_calib(), [256, 256], 0.0), [0.5, 0, 0], atol=1e-12)


def test_horizontal_axis_ray_is_parallel():
    # optical axis along world +x, level: the principal ray never meets z = 0
    calib = CameraCalib(CameraIntrinsics(512, 512, 256, 256), look_at([0, 0, 1], [5, 0, 1]), 512, 512)
    with pytest.raises(RayParallelToPlane):
        unproject_to_plane(calib, [256, 256], 0.0)


def test_upper_half_ray_of_level_camera_misses_floor():
    calib = CameraCalib(CameraIntrinsics(512, 512, 256, 256), look_at([0, 0, 1], [5, 0, 1]), 512, 512)
    # rows above the horizon point upward; analytic: d_z > 0 while the plane lies below
    with pytest.raises(IntersectionBehindCamera):
        unproject_to_plane(calib, [256, 100], 0.0)
    p = unproject_to_plane(calib, [256, 400], 0.0)
    # analytic intersection distance for a level camera: forward = f * h / (v - cy)
    np.testing.assert_allclose(p, [512 * 1.0 / (400 - 256), 0, 0], atol=1e-9)


def test_plane_above_camera_is_behind():
    with pytest.raises(IntersectionBehindCamera):
        unproject_to_plane(nadir_calib(h=1.0), [256, 256], 2.0)


def test_unproject_round_trip_on_plane():
    calib = CameraCalib(CameraIntrinsics(640, 640, 256, 256), look_at([1.7, 0.0, 0.9], [0.5, 0, 0]), 512, 512)
    rng = np.random.default_rng(1)
    for xy in rng.uniform(-0.4, 0.4, size=(1000, 2)):
        p = np.array([0.5 + xy[0], xy[1], 0.02])
        np.testing.assert_allclose(unproject_to_plane(calib, project_point(calib, p), 0.02), p, atol=1e-6)


# ---- 6D rotations

def test_rot6d_of_identity():
    np.testing.assert_array_equal(rot_to_6d(np.eye(3)), [1, 0, 0, 0, 1, 0])


def test_rot6d_of_rz90_reads_first_two_columns():
    Rz = np.array([[0.0, -1, 0], [1, 0, 0], [0, 0, 1]])
    np.testing.assert_allclose(rot_to_6d(Rz), [0, 1, 0, -1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(rot_to_6d(rot_z(np.pi / 2)), [0, 1, 0, -1, 0, 0], atol=1e-15)


def test_rot6d_of_rx90():
    np.testing.assert_allclose(rot_to_6d(rot_x(np.pi / 2)), [1, 0, 0, 0, 0, 1], atol=1e-15)


def test_rot_from_6d_normalizes_scale():
    np.testing.assert_allclose(rot_from_6d([1, 0, 0, 0, 1, 0]), np.eye(3), atol=1e-15)
    np.testing.assert_allclose(rot_from_6d([1.1, 0, 0, 0, 0.9, 0]), np.eye(3), atol=1e-15)


@pytest.mark.parametrize("r", [[1, 0, 0, 1, 0, 0], [0, 0, 0, 0, 1, 0], [1, 0, 0, -2, 0, 0]])
def test_rot_from_6d_degenerate(r):
    with pytest.raises(DegenerateInput):
        rot_from_6d(r)


@settings(max_examples=200, deadline=None)
@given(SEEDS)
def test_rot6d_round_trip(seed):
    R = random_rotation(np.random.default_rng(seed))
    np.testing.assert_allclose(rot_from_6d(rot_to_6d(R)), R, atol=1e-9)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=6, max_size=6))
def test_rot_from_6d_always_returns_rotation(r):
    a1, a2 = np.array(r[:3]), np.array(r[3:])
    if np.linalg.norm(a1) <= 1e-6 or np.linalg.norm(np.cross(a1, a2)) <= 1e-6:
        return
    R = rot_from_6d(r)
    np.testing.assert_allclose(R.T @ R, np.eye(3), atol=1e-9)
    assert abs(np.linalg.det(R) - 1) < 1e-9


# ---- camera-frame rotation

@pytest.mark.parametrize("theta", [0.0, 0.3, -2.0, np.pi])
def test_matching_yaw_gives_identity(theta):
    cam = Pose(rot_z(theta), [0, 0, 0])
    np.testing.assert_allclose(camera_frame_rotation(cam, rot_z(theta)), np.eye(3), atol=1e-12)


def test_camera_frame_rotation_oracle():
    Rc, Rh = rot_z(np.deg2rad(30)), rot_x(np.deg2rad(45))
    expected = np.zeros((3, 3))
    for i in range(3):
        for j in range(3):
            expected[i, j] = sum(Rc[k, i] * Rh[k, j] for k in range(3))
    np.testing.assert_allclose(camera_frame_rotation(Pose(Rc, [1, 2, 3]), Rh), expected, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(SEEDS)
def test_camera_frame_rotation_conjugation(seed):
    rng = np.random.default_rng(seed)
    Q, Rc, Rh = (random_rotation(rng) for _ in range(3))
    a = camera_frame_rotation(Pose(Q @ Rc, [0, 0, 0]), Q @ Rh)
    b = camera_frame_rotation(Pose(Rc, [0, 0, 0]), Rh)
    np.testing.assert_allclose(a, b, atol=1e-9)


# ---- poses

def random_pose(rng, frame="world"):
    return Pose(random_rotation(rng), rng.normal(size=3), frame)


def test_compose_identity_is_noop():
    p = random_pose(np.random.default_rng(3))
    assert poses_close(compose(Pose.identity(), p), p, tol=0)


def test_double_inverse():
    p = random_pose(np.random.default_rng(4))
    assert poses_close(invert(invert(p)), p)


def test_compose_with_inverse_is_identity():
    p = random_pose(np.random.default_rng(5))
    assert poses_close(compose(p, invert(p)), Pose.identity())


def test_translations_add():
    a = Pose(np.eye(3), [1, 2, 3])
    b = Pose(np.eye(3), [0.5, -1, 2])
    np.testing.assert_allclose(compose(a, b).translation, [1.5, 1, 5])


def test_frame_mismatch():
    with pytest.raises(FrameMismatch):
        compose(Pose.identity("world"), Pose.identity("camera"))


def test_pose_rejects_non_rotation():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), [0, 0, 0])
    with pytest.raises(ValueError):
        Pose(np.eye(3) * 1.01, [0, 0, 0])


def test_pose_is_immutable():
    p = Pose.identity()
    with pytest.raises(ValueError):
        p.translation[0] = 1.0


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away([0.5, 1.5, 2.5, -0.5, -1.5, 0.49]), [1, 2, 3, -1, -2, 0])
