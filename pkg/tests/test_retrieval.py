import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_rotation
from oracles import brute_force_render
from geoloop.camera import Camera, Intrinsics, Pose, unproject
from geoloop.memory import GeoMemory
from geoloop.retrieval import (
    fov_overlap_scores,
    pixel_counts,
    score_views,
    scores_to_json,
    select_topk,
    visible_set,
)
from geoloop.render import render_points

INTR = Intrinsics(30.0, 30.0, 15.5, 11.5, 32, 24)
CAM = Camera(INTR, Pose.identity())


def mem(positions, sources):
    n = len(positions)
    return GeoMemory(np.asarray(positions, float).reshape(n, 3), np.zeros((n, 3), np.uint8), np.asarray(sources, np.int64))


def occlusion_memory():
    """A dense wall at depth 5 split between views 1/2/3 by column, and a
    view 4 whose points all sit at depth 8 behind the wall."""
    rows, cols = np.mgrid[0:24, 0:32]
    u, v = cols.ravel().astype(float), rows.ravel().astype(float)
    wall = unproject(CAM, u, v, np.full(u.size, 5.0))
    wall_src = np.select([u < 16, u < 26], [1, 2], 3)
    hidden = unproject(CAM, u[::3], v[::3], np.full(u[::3].size, 8.0))
    return mem(np.concatenate([wall, hidden]), np.concatenate([wall_src, np.full(len(hidden), 4)]))


def test_empty_memory_has_empty_visible_set():
    assert visible_set(GeoMemory.empty(), [CAM]).size == 0


def test_visible_set_needs_cameras():
    with pytest.raises(ValueError):
        visible_set(GeoMemory.empty(), [])


def test_single_point_visible():
    m = mem([unproject(CAM, 4, 4, 2.0)], [0])
    assert visible_set(m, [CAM], 0).tolist() == [0]


def test_disjoint_clusters_union():
    left = Camera(INTR, Pose(np.eye(3), (10.0, 0, 0)))  # looks at world x ~ -10
    a = unproject(CAM, np.arange(5.0, 15.0), np.full(10, 8.0), np.full(10, 3.0))
    b = unproject(left, np.arange(5.0, 12.0), np.full(7, 8.0), np.full(7, 3.0))
    m = mem(np.concatenate([a, b]), [0] * 10 + [1] * 7)
    va, vb = visible_set(m, [CAM], 0), visible_set(m, [left], 0)
    assert len(va) == 10 and len(vb) == 7
    assert len(visible_set(m, [CAM, left], 0)) == len(va) + len(vb)


def test_empty_visible_set_scores_zero():
    m = mem([[0, 0, 1]], [3])
    assert score_views(m, np.array([], int)) == {3: 0.0}


def test_single_view_scores_one():
    m = mem([unproject(CAM, 4, 4, 2.0), unproject(CAM, 6, 4, 2.0)], [5, 5])
    scores = score_views(m, visible_set(m, [CAM], 0), view_ids=[1, 5, 9])
    assert scores == {1: 0.0, 5: 1.0, 9: 0.0}


def test_occluded_view_scores_zero_and_is_never_selected():
    m = occlusion_memory()
    vis = visible_set(m, [CAM], 0)
    scores = score_views(m, vis)
    assert scores[4] == 0.0
    assert sum(scores.values()) == pytest.approx(1.0)
    for k in range(1, 5):
        assert 4 not in select_topk(scores, k)
    assert select_topk(scores, 3) == [1, 2, 3]  # 16, 10, 6 wall columns


def test_fov_baseline_does_not_filter_occlusion():
    views = {i: CAM.with_view_id(i) for i in (1, 2, 3, 4)}
    base = fov_overlap_scores(views, [CAM])
    assert base[4] == pytest.approx(1.0)


def test_scores_50_30_20():
    rng = np.random.default_rng(0)
    pix = rng.permutation(24 * 32)[:100]
    u, v = (pix % 32).astype(float), (pix // 32).astype(float)
    m = mem(unproject(CAM, u, v, rng.uniform(1, 9, 100)), [0] * 50 + [1] * 30 + [2] * 20)
    winner, _ = brute_force_render(m.positions, CAM, 0)
    oracle_vis = np.unique(winner[winner >= 0])
    counts = np.bincount(m.source_view_ids[oracle_vis], minlength=3)
    assert counts.tolist() == [50, 30, 20]
    scores = score_views(m, visible_set(m, [CAM], 0))
    assert scores == pytest.approx({0: 0.5, 1: 0.3, 2: 0.2})
    assert select_topk(scores, 2) == [0, 1]


def test_topk_rules():
    assert select_topk({1: 0.0, 2: 0.0}, 3) == []
    assert select_topk({"B": 0.5, "A": 0.5, "C": 0.0}, 2) == ["A", "B"]
    assert select_topk({7: 0.5, 3: 0.5, 9: 0.0}, 3) == [3, 7]
    with pytest.raises(ValueError):
        select_topk({1: 1.0}, 0)


def random_memory(rng, cam, n, views):
    u = rng.uniform(0, cam.width, n)
    v = rng.uniform(0, cam.height, n)
    return mem(unproject(cam, u, v, rng.uniform(0.5, 6, n)), rng.integers(0, views, n))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_scores_partition_of_unity(seed):
    rng = np.random.default_rng(seed)
    cam = Camera(INTR, Pose(random_rotation(rng), rng.uniform(-1, 1, 3)))
    m = random_memory(rng, cam, int(rng.integers(1, 80)), int(rng.integers(1, 6)))
    vis = visible_set(m, [cam], int(rng.integers(0, 3)))
    assert vis.size > 0
    scores = score_views(m, vis)
    assert all(0 <= s <= 1 for s in scores.values())
    assert sum(scores.values()) == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_scale_invariance(seed, lam):
    rng = np.random.default_rng(seed)
    cams = [Camera(INTR, Pose(random_rotation(rng), rng.uniform(-1, 1, 3))) for _ in range(2)]
    m = random_memory(rng, cams[0], 60, 4)
    scaled_cams = [Camera(c.intrinsics, Pose(c.pose.rotation, c.pose.translation * lam)) for c in cams]
    s0 = score_views(m, visible_set(m, cams, 1))
    s1 = score_views(m.scaled(lam), visible_set(m.scaled(lam), scaled_cams, 1))
    assert s0 == pytest.approx(s1, abs=1e-12)


def test_removing_a_view_zeroes_its_score():
    rng = np.random.default_rng(11)
    m = random_memory(rng, CAM, 200, 3)
    before = score_views(m, visible_set(m, [CAM], 1), view_ids=[0, 1, 2])
    kept = m.subset(m.source_view_ids != 1)
    after = score_views(kept, visible_set(kept, [CAM], 1), view_ids=[0, 1, 2])
    assert after[1] == 0.0 <= before[1]


def test_pixel_weighted_variant():
    # view 0 point splats 3x3 pixels unobstructed, view 1 point only 1 pixel
    a = unproject(CAM, 10, 10, 2.0)
    b = unproject(CAM, 20, 0, 2.0)
    m = mem([a, b], [0, 1])
    renders = [render_points(m, CAM, 1)]
    vis = visible_set(m, [CAM], renders=renders)
    assert score_views(m, vis) == {0: 0.5, 1: 0.5}
    weighted = score_views(m, vis, pixel_weights=pixel_counts(m, renders))
    assert weighted == pytest.approx({0: 9 / 15, 1: 6 / 15})


def test_scores_json(tmp_path):
    doc = scores_to_json({1: 0.2, 2: 0.5, 3: 0.3}, [2, 3], tmp_path / "s.json")
    assert [d["view_id"] for d in doc] == [2, 3, 1]
    assert [d["selected"] for d in doc] == [True, True, False]
    assert json.loads((tmp_path / "s.json").read_text()) == doc
