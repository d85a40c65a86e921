import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palm_align.align import (
    AlignmentConfig,
    InvalidReference,
    align_observation,
    align_proprio,
    align_visual,
    binarize_gripper,
)
from palm_align.geometry import (
    CameraCalib,
    CameraIntrinsics,
    NonPositiveDepth,
    Pose,
    look_at,
    random_rotation,
    rot_to_6d,
    rot_x,
    rot_z,
)
from palm_align.imaging import BLUE, GREEN, RED, OverlaySpec


def overhead_calib():
    return CameraCalib(CameraIntrinsics(512, 512, 256, 256), Pose(rot_x(np.pi), [0, 0, 1.0]), 512, 512)


def noise_image(seed=0):
    return np.random.default_rng(seed).integers(0, 256, size=(512, 512, 3), dtype=np.uint8)


@pytest.mark.parametrize("width,expected", [(0.07, 1), (0.01, 0), (0.04, 0), (0.08, 1), (0.0, 0)])
def test_binarize_gripper(width, expected):
    assert binarize_gripper(width, 0.08, 0.0) == expected


def test_binarize_rejects_equal_refs():
    with pytest.raises(InvalidReference):
        binarize_gripper(0.05, 0.04, 0.04)
    with pytest.raises(InvalidReference):
        AlignmentConfig(gripper_open_ref=0.0, gripper_close_ref=0.0)


def test_config_validation():
    with pytest.raises(ValueError):
        AlignmentConfig(output_size=4)
    with pytest.raises(ValueError):
        AlignmentConfig(kappa=6)


def test_config_round_trip():
    cfg = AlignmentConfig(kappa=160, overlay=OverlaySpec(0.07, 3), overlay_enabled=False, seed=9)
    assert AlignmentConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        AlignmentConfig.from_dict({"kapa": 3})


# ---- visual

def test_visual_degenerates_to_identity():
    img = noise_image(1)
    cfg = AlignmentConfig(kappa=512, output_size=512, overlay_enabled=False)
    out, clamped = align_visual(img, overhead_calib(), Pose(np.eye(3), [0, 0, 0]), cfg)
    assert not clamped
    np.testing.assert_array_equal(out, img)


def test_visual_centre_shows_overlay_colors():
    img = np.zeros((512, 512, 3), np.uint8)
    cfg = AlignmentConfig(kappa=200, output_size=200, overlay=OverlaySpec(0.1, 3))
    out, _ = align_visual(img, overhead_calib(), Pose.identity(), cfg)
    # EE projects to the principal point, which lands at the crop centre (100, 100)
    assert tuple(out[100, 100]) == BLUE
    assert tuple(out[100, 130]) == RED
    assert tuple(out[70, 100]) == GREEN
    assert out.shape == (200, 200, 3)


def test_visual_output_size():
    out, _ = align_visual(noise_image(2), overhead_calib(), Pose(np.eye(3), [0.1, 0.05, 0.2]), AlignmentConfig())
    assert out.shape == (84, 84, 3)


def test_visual_behind_camera():
    with pytest.raises(NonPositiveDepth):
        align_visual(noise_image(), overhead_calib(), Pose(np.eye(3), [0, 0, 1.5]), AlignmentConfig())


def test_pixel_offset_moves_crop_but_not_overlay_relative_to_ee():
    img = np.zeros((512, 512, 3), np.uint8)
    cfg = AlignmentConfig(kappa=100, output_size=100)
    a, _ = align_visual(img, overhead_calib(), Pose.identity(), cfg)
    b, _ = align_visual(img, overhead_calib(), Pose.identity(), cfg, pixel_offset=(3, -2))
    # the overlay is anchored to the (jittered) crop centre in both cases
    np.testing.assert_array_equal(a, b)


# ---- proprio

def test_proprio_identity_path_drops_xy():
    calib = CameraCalib(CameraIntrinsics(512, 512, 256, 256), Pose.identity(), 512, 512)
    p = align_proprio(Pose(np.eye(3), [0.4, -0.2, 0.13]), 0.08, calib, AlignmentConfig())
    np.testing.assert_array_equal(p.r6d, [1, 0, 0, 0, 1, 0])
    assert p.z == 0.13 and p.g == 1
    assert p.vector().shape == (8,)


@pytest.mark.parametrize("theta", [0.4, -1.2, 3.0])
def test_proprio_yaw_conjugation(theta):
    rng = np.random.default_rng(0)
    R_H = random_rotation(rng)
    cam = look_at([1.5, 0.2, 1.0], [0.4, 0, 0])
    calib = CameraCalib(CameraIntrinsics(512, 512, 256, 256), cam, 512, 512)
    Q = rot_z(theta)
    calib2 = calib.with_pose(Pose(Q @ cam.rotation, Q @ cam.translation))
    ee = Pose(R_H, [0.4, 0.1, 0.2])
    ee2 = Pose(Q @ R_H, Q @ ee.translation)
    np.testing.assert_allclose(align_proprio(ee, 0.05, calib, AlignmentConfig()).vector(),
                               align_proprio(ee2, 0.05, calib2, AlignmentConfig()).vector(), atol=1e-9)


def test_proprio_generic_pose_oracle():
    rng = np.random.default_rng(11)
    Rc, Rh = random_rotation(rng), random_rotation(rng)
    calib = CameraCalib(CameraIntrinsics(512, 512, 256, 256), Pose(Rc, [1, 0, 1]), 512, 512)
    p = align_proprio(Pose(Rh, [0, 0, 0.3]), 0.0, calib, AlignmentConfig())
    M = Rc.T @ Rh
    np.testing.assert_allclose(p.r6d, np.concatenate([M[:, 0], M[:, 1]]), atol=1e-12)
    np.testing.assert_allclose(p.r6d, rot_to_6d(M), atol=1e-12)
    assert p.g == 0


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1))
def test_proprio_invariant_to_planar_translation(dx, dy):
    R = random_rotation(np.random.default_rng(3))
    calib = overhead_calib()
    a = align_proprio(Pose(R, [0.1, 0.2, 0.3]), 0.03, calib, AlignmentConfig()).vector()
    b = align_proprio(Pose(R, [0.1 + dx, 0.2 + dy, 0.3]), 0.03, calib, AlignmentConfig()).vector()
    np.testing.assert_array_equal(a, b)


def test_align_observation_bundle():
    obs = align_observation(noise_image(3), overhead_calib(), Pose(np.eye(3), [0.02, 0, 0.1]), 0.07, AlignmentConfig())
    assert obs.image.shape == (84, 84, 3)
    assert obs.proprio.g == 1 and not obs.clamped
