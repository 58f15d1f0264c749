import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_rotation
from geoloop.camera import (
    Camera,
    Intrinsics,
    Pose,
    compose,
    invert,
    load_trajectory,
    look_at,
    project,
    project_points,
    save_trajectory,
    unproject,
)


def unit_cam(pose=None):
    return Camera(Intrinsics(1.0, 1.0, 0.0, 0.0, 10, 10), pose or Pose.identity())


def rot_y(deg):
    a = np.radians(deg)
    return np.array([[np.cos(a), 0, np.sin(a)], [0, 1, 0], [-np.sin(a), 0, np.cos(a)]])


def rot_x(deg):
    a = np.radians(deg)
    return np.array([[1, 0, 0], [0, np.cos(a), -np.sin(a)], [0, np.sin(a), np.cos(a)]])


def test_principal_ray():
    assert project(unit_cam(), (0, 0, 1)) == (0.0, 0.0, 1.0)


def test_behind_camera_is_absent():
    assert project(unit_cam(), (0, 0, -1)) is None


def test_off_image_is_absent():
    intr = Intrinsics(100, 100, 50, 40, 100, 80)
    assert project(Camera(intr, Pose.identity()), (1, 0, 1)) is None  # u = 150


def test_camera_looking_back_at_origin_from_plus_x():
    # camera center C = (2, 0, 0), optical axis -x: rows of R are the camera
    # axes in world coordinates; x_cam = (0,0,1), y_cam = (0,1,0), z_cam = (-1,0,0)
    R = np.array([[0.0, 0, 1], [0, 1, 0], [-1, 0, 0]])
    t = -R @ np.array([2.0, 0, 0])
    np.testing.assert_allclose(t, [0, 0, 2])
    intr = Intrinsics(50, 50, 31.5, 23.5, 64, 48)
    cam = Camera(intr, Pose(R, t))
    u, v, d = project(cam, (0, 0, 0))
    assert (u, v, d) == pytest.approx((31.5, 23.5, 2.0))
    # R is a 90 degree turn about y (one of the two orientations)
    assert np.allclose(R, rot_y(-90)) or np.allclose(R, rot_y(90))
    # same pose from look_at
    la = look_at((2, 0, 0), (0, 0, 0), up=(0, -1, 0))
    np.testing.assert_allclose(la.center, [2, 0, 0], atol=1e-12)
    np.testing.assert_allclose(la.apply([0, 0, 0]), [0, 0, 2], atol=1e-12)


def test_unproject_principal_point():
    intr = Intrinsics(120, 110, 60.5, 40.25, 128, 96)
    np.testing.assert_allclose(unproject(Camera(intr, Pose.identity()), 60.5, 40.25, 1.0), [0, 0, 1])


def test_unproject_rejects_nonpositive_depth():
    with pytest.raises(ValueError):
        unproject(unit_cam(), 0, 0, 0.0)


def test_unproject_matches_matrix_oracle(random_camera):
    cam = random_camera(width=224, height=256)
    K_inv = np.linalg.inv(cam.intrinsics.K)
    T_inv = np.linalg.inv(cam.pose.matrix)
    p_cam = 3.5 * (K_inv @ np.array([100.0, 200.0, 1.0]))
    expected = (T_inv @ np.append(p_cam, 1.0))[:3]
    np.testing.assert_allclose(unproject(cam, 100, 200, 3.5), expected, rtol=1e-12, atol=1e-12)


def test_round_trip_1000_pixels(random_camera, rng):
    cam = random_camera()
    u = rng.uniform(0, cam.width - 1, 1000)
    v = rng.uniform(0, cam.height - 1, 1000)
    d = rng.uniform(0.1, 50, 1000)
    pu, pv, pd, ok = project_points(cam, unproject(cam, u, v, d))
    assert ok.all()
    for a, b in ((pu, u), (pv, v), (pd, d)):
        np.testing.assert_allclose(a, b, rtol=1e-6)


def test_invert_identity():
    assert invert(Pose.identity()) == Pose.identity()


def test_compose_with_inverse_is_identity(rng):
    for _ in range(20):
        p = Pose(random_rotation(rng), rng.normal(size=3) * 5)
        c = compose(p, invert(p))
        np.testing.assert_allclose(c.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(c.translation, 0, atol=1e-9)


def test_compose_axis_rotations_matches_matrix_product():
    a = Pose(rot_x(30), [1, 2, 3])
    b = Pose(rot_y(45), [-1, 0, 0.5])
    c = compose(a, b)
    expected = a.matrix @ b.matrix
    np.testing.assert_allclose(c.matrix, expected, atol=1e-12)
    x = np.array([0.3, -0.7, 2.0])
    np.testing.assert_allclose(c.apply(x), a.apply(b.apply(x)), atol=1e-12)


def test_pose_rejects_reflection():
    with pytest.raises(ValueError):
        Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


def test_intrinsics_validation():
    with pytest.raises(ValueError):
        Intrinsics(0, 1, 0, 0)
    with pytest.raises(ValueError):
        Intrinsics(1, 1, 896, 0)
    assert Intrinsics(1, 1, 0, 0).shape == (512, 896)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_rigid_transforms_preserve_distances(seed):
    rng = np.random.default_rng(seed)
    p = Pose(random_rotation(rng), rng.normal(size=3) * 10)
    a, b = rng.normal(size=(2, 3)) * 5
    d0 = np.linalg.norm(a - b)
    d1 = np.linalg.norm(p.apply(a) - p.apply(b))
    assert abs(d1 - d0) <= 1e-9 * max(d0, 1e-12)


def test_camera_json_round_trip(tmp_path, random_camera):
    cams = [random_camera(view_id=i) for i in range(3)]
    save_trajectory(tmp_path / "traj.json", cams)
    back = load_trajectory(tmp_path / "traj.json")
    assert back == cams
    doc = json.loads((tmp_path / "traj.json").read_text())[0]
    assert set(doc) == {"view_id", "fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"}
    assert len(doc["rotation"]) == 9


def test_camera_json_rejects_missing_keys():
    with pytest.raises(ValueError, match="missing"):
        Camera.from_dict({"view_id": 0})
