import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_rotation
from geoloop.camera import Camera, Intrinsics, Pose, look_at
from geoloop.io import read_depth, read_image, write_depth, write_image
from geoloop.scene import (
    BACKGROUND,
    Box,
    SyntheticScene,
    build_scene,
    make_training_pair,
    occluder_scene,
    orbit_trajectory,
    raycast,
)

INTR = Intrinsics(40.0, 40.0, 31.5, 23.5, 64, 48)


def test_build_scene_deterministic():
    assert build_scene(0) == build_scene(0)
    assert build_scene(0).to_dict() == build_scene(0).to_dict()


def test_build_scene_seeds_differ():
    assert build_scene(0).boxes != build_scene(1).boxes


def test_seed_7_primitive_count():
    s = build_scene(7)
    assert 4 <= len(s.boxes) <= 12
    assert len(s.boxes) == 12  # regression value


def test_primitives_inside_room():
    for seed in range(20):
        s = build_scene(seed)
        for b in s.boxes:
            assert all(lo >= rl and hi <= rh for lo, hi, rl, rh in zip(b.lo, b.hi, s.room.lo, s.room.hi))


def test_box_outside_room_rejected():
    room = Box((-1, -1, -1), (1, 1, 1))
    with pytest.raises(ValueError):
        SyntheticScene((Box((0, 0, 0), (2, 0.5, 0.5)),), room)


def test_scene_json_round_trip(tmp_path):
    s = build_scene(3)
    s.save(tmp_path / "scene.json")
    assert SyntheticScene.load(tmp_path / "scene.json") == s


def test_wall_at_distance_five():
    room = Box((-20, -20, -20), (20, 20, 5))
    cam = Camera(INTR, Pose.identity())
    fr = raycast(SyntheticScene((), room), cam)
    # the whole view hits the z = 5 wall (its x/y extent is far wider than the frustum)
    np.testing.assert_allclose(fr.depth, 5.0, rtol=1e-12)


def test_nearer_box_wins():
    near = Box((-1, -1, 2), (1, 1, 3), 1.0, ((255, 0, 0), (255, 0, 0)))
    far = Box((-10, -10, 6), (10, 10, 7), 1.0, ((0, 255, 0), (0, 255, 0)))
    fr = raycast(SyntheticScene((far, near)), Camera(INTR, Pose.identity()))
    c = fr.color[23, 31]
    assert fr.depth[23, 31] == pytest.approx(2.0)
    assert c[0] > 0 and c[1] == 0
    # corner pixel misses the near box but hits the far one
    assert fr.depth[0, 0] == pytest.approx(6.0)


def test_unit_box_analytic_depth():
    box = Box((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))
    intr = Intrinsics(40.0, 40.0, 32.0, 24.0, 64, 48)
    cam = Camera(intr, look_at((0, 0, -4), (0, 0, 0)))
    fr = raycast(SyntheticScene((box,)), cam)
    # slab entry along +z: t = (-0.5 - (-4)) / 1 = 3.5
    assert fr.depth[24, 32] == pytest.approx(3.5, abs=1e-12)


def test_background_pixels():
    fr = raycast(SyntheticScene(()), Camera(INTR, Pose.identity()))
    assert np.all(fr.depth == 0)
    assert np.all(fr.color == BACKGROUND)


def test_depth_positive_wherever_hit():
    scene = build_scene(2)
    cam = orbit_trajectory(1, INTR)[0]
    fr = raycast(scene, cam)
    assert fr.color.shape == (48, 64, 3) and fr.color.dtype == np.uint8
    assert np.all(fr.depth > 0)  # inside a closed room every ray hits


def _room_depth_oracle(lo, hi, eye, cam):
    """Nearest positive intersection with the six room planes, per pixel."""
    best = np.full(cam.height * cam.width, np.inf)
    rows, cols = np.mgrid[0 : cam.height, 0 : cam.width]
    K_inv = np.linalg.inv(cam.intrinsics.K)
    pix = np.stack([cols.ravel(), rows.ravel(), np.ones(rows.size)])
    d_world = (cam.pose.rotation.T @ (K_inv @ pix)).T  # camera z component 1
    for axis in range(3):
        for plane in (lo[axis], hi[axis]):
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (plane - eye[axis]) / d_world[:, axis]
            p = eye + d_world * t[:, None]
            others = [a for a in range(3) if a != axis]
            inside = np.all((p[:, others] >= np.array(lo)[others] - 1e-9) & (p[:, others] <= np.array(hi)[others] + 1e-9), axis=1)
            ok = (t > 0) & inside
            best = np.where(ok & (t < best), t, best)
    return best.reshape(cam.height, cam.width)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_raycast_depth_matches_plane_intersections(seed):
    rng = np.random.default_rng(seed)
    lo = tuple(rng.uniform(-6, -2, 3))
    hi = tuple(rng.uniform(2, 6, 3))
    eye = rng.uniform(-1.5, 1.5, 3)
    R = random_rotation(rng)
    cam = Camera(INTR, Pose(R, -R @ eye))
    fr = raycast(SyntheticScene((), Box(lo, hi)), cam)
    np.testing.assert_allclose(fr.depth, _room_depth_oracle(lo, hi, eye, cam), rtol=1e-9)


def test_raycast_deterministic():
    s = build_scene(5)
    cam = orbit_trajectory(3, INTR)[1]
    a, b = raycast(s, cam), raycast(s, cam)
    assert np.array_equal(a.color, b.color) and np.array_equal(a.depth, b.depth)


def test_occluder_scene_hides_chair_from_front():
    s = occluder_scene()
    front = raycast(s, orbit_trajectory(1, INTR, start_deg=0, end_deg=0)[0])
    side = raycast(s, orbit_trajectory(1, INTR, start_deg=90, end_deg=90)[0])
    chair_red = (200, 40, 40)

    def sees_chair(fr):
        c = fr.color.reshape(-1, 3).astype(int)
        # any face shade of the chair palette's first color
        return any(np.any(np.all(np.abs(c - np.rint(np.array(chair_red) * k)) <= 1, axis=1)) for k in (0.8, 1.0, 0.65))

    assert not sees_chair(front)
    assert sees_chair(side)


class ScriptedRng:
    """Drives make_training_pair down a chosen branch."""

    def __init__(self, u, n):
        self.u, self.n = u, n
        self.inner = np.random.default_rng(0)

    def random(self):
        return self.u

    def integers(self, lo, hi):
        assert (lo, hi) == (2, 5)
        return self.n

    def choice(self, pool, size, replace):
        self.pool = np.asarray(pool)
        return self.inner.choice(pool, size=size, replace=replace)


def test_training_pair_first_half_branch():
    cams = orbit_trajectory(40, INTR)
    rng = ScriptedRng(0.1, 2)
    refs, targets = make_training_pair(None, cams, rng)
    assert refs[0] == 0 and len(refs) == 3
    assert all(i < 20 for i in refs[1:])
    assert rng.pool.max() < 20
    assert targets == list(range(40))


def test_training_pair_whole_clip_branch_pool():
    rng = ScriptedRng(0.9, 4)
    refs, _ = make_training_pair(None, orbit_trajectory(40, INTR), rng)
    assert len(refs) == 5 and rng.pool.min() == 1 and rng.pool.max() == 39


def test_training_pair_count_uniform_and_base_frame():
    cams = orbit_trajectory(40, INTR)
    rng = np.random.default_rng(0)
    draws = 10000
    counts = np.zeros(5, int)
    for _ in range(draws):
        refs, _ = make_training_pair(None, cams, rng)
        assert refs[0] == 0 and 0 not in refs[1:]
        assert len(set(refs)) == len(refs)
        counts[len(refs) - 1] += 1
    p = counts[2:] / draws
    sigma = np.sqrt((1 / 3) * (2 / 3) / draws)
    assert np.all(np.abs(p - 1 / 3) < 3 * sigma), p


def test_training_pair_rejects_tiny_clip():
    with pytest.raises(ValueError):
        make_training_pair(None, orbit_trajectory(1, INTR), np.random.default_rng(0))


def test_capture_export_round_trip(tmp_path):
    fr = raycast(build_scene(1), orbit_trajectory(1, INTR)[0])
    write_depth(tmp_path / "d.depth", fr.depth)
    raw = (tmp_path / "d.depth").read_bytes()
    assert int.from_bytes(raw[:4], "little") == 64 and int.from_bytes(raw[4:8], "little") == 48
    assert len(raw) == 8 + 4 * 64 * 48
    np.testing.assert_array_equal(read_depth(tmp_path / "d.depth"), fr.depth.astype(np.float32))
    for ppm in (False, True):
        p = write_image(tmp_path / "c", fr.color, ppm)
        np.testing.assert_array_equal(read_image(p), fr.color)
