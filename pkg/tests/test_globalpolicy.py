import numpy as np
import pytest

from palm_align.geometry import CameraCalib, CameraIntrinsics, IntersectionBehindCamera, Pose, project_point, rot_x
from palm_align.globalpolicy import (
    EmptyMask,
    ReachTarget,
    estimate_object_xy,
    global_reach,
    mask_centroid,
    sample_reach_target,
)
from palm_align.harness import HarnessConfig, SceneSpec, Sphere, render_scene


def nadir_calib():
    return CameraCalib(CameraIntrinsics(512, 512, 256, 256), Pose(rot_x(np.pi), [0.5, 0, 1.0]), 512, 512)


def test_single_pixel_centroid():
    m = np.zeros((40, 40), bool)
    m[20, 10] = True  # row 20, column 10
    np.testing.assert_array_equal(mask_centroid(m), [10, 20])


def test_block_centroid():
    m = np.zeros((8, 8), bool)
    m[0:2, 0:2] = True
    np.testing.assert_array_equal(mask_centroid(m), [0.5, 0.5])


def test_blob_centroid_matches_loop():
    rng = np.random.default_rng(0)
    m = rng.random((30, 50)) > 0.8
    m[5:9, 30:45] = True
    su = sv = n = 0
    for v in range(30):
        for u in range(50):
            if m[v, u]:
                su, sv, n = su + u, sv + v, n + 1
    np.testing.assert_allclose(mask_centroid(m), [su / n, sv / n], atol=1e-12)


def test_empty_mask():
    with pytest.raises(EmptyMask):
        mask_centroid(np.zeros((5, 5), bool))


def test_nadir_centroid_at_principal_point():
    assert estimate_object_xy(np.array([256.0, 256.0]), nadir_calib(), 0.0) == pytest.approx((0.5, 0.0), abs=1e-12)


def test_rendered_sphere_recovered():
    h = HarnessConfig()
    calib = h.camera()
    center = np.array([0.55, 0.07, 0.0])
    scene = SceneSpec((Sphere(center, 0.03, (255, 0, 0)),), style="invisible")
    img = render_scene(scene, calib, Pose(np.eye(3), [0.5, 0, 0.3]))
    mask = (img == (255, 0, 0)).all(axis=2)
    assert mask.sum() > 50
    # the silhouette centroid is the projected centre (discs are symmetric up to pixel quantization)
    px = project_point(calib, center)
    assert np.abs(mask_centroid(mask) - px).max() < 0.5
    x, y = estimate_object_xy(px, calib, 0.0)
    assert abs(x - center[0]) < 1e-3 and abs(y - center[1]) < 1e-3


def test_table_above_camera():
    with pytest.raises(IntersectionBehindCamera):
        estimate_object_xy(np.array([256.0, 256.0]), nadir_calib(), 1.5)


def test_zero_radius_returns_center():
    assert sample_reach_target(np.random.default_rng(0), 0.3, -0.1, 0.0) == (0.3, -0.1)


def test_samples_stay_in_disk_and_center_on_object():
    rng = np.random.default_rng(1)
    r = 0.02
    pts = np.array([sample_reach_target(rng, 0.4, 0.1, r) for _ in range(10_000)])
    assert (np.hypot(pts[:, 0] - 0.4, pts[:, 1] - 0.1) <= r + 1e-15).all()
    # per-axis std of a uniform disk is R/2, so the mean's standard error is R/(2 sqrt(n))
    se = r / 2 / np.sqrt(len(pts))
    assert abs(pts[:, 0].mean() - 0.4) < 3 * se
    assert abs(pts[:, 1].mean() - 0.1) < 3 * se


def test_negative_radius():
    with pytest.raises(ValueError):
        sample_reach_target(np.random.default_rng(0), 0, 0, -1)
    with pytest.raises(ValueError):
        ReachTarget(0, 0, -0.1)


def test_global_reach_is_translation_only():
    m = np.zeros((512, 512), bool)
    m[250:263, 250:263] = True
    t = global_reach(m, nadir_calib(), 0.0, np.random.default_rng(2))
    assert set(vars(t)) == {"x", "y", "sample_radius"}
    assert np.hypot(t.x - 0.5, t.y) <= t.sample_radius + 1e-12
