"""Visibility-driven reference view selection.

A capture view's score is the share of target-visible memory points that
were back-projected from that view. Views whose points are all hidden
score zero and are never selected.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .camera import Camera
from .memory import GeoMemory
from .render import RenderOutput, render_points


def visible_set(
    mem: GeoMemory,
    cams: Sequence[Camera],
    splat_radius: int = 1,
    renders: Optional[Sequence[RenderOutput]] = None,
) -> np.ndarray:
    """Sorted indices of points winning at least one pixel in any camera.

    Pass ``renders`` to reuse z-buffers already computed for ``cams``.
    """
    if not cams:
        raise ValueError("visible_set needs at least one camera")
    if renders is None:
        renders = [render_points(mem, c, splat_radius) for c in cams]
    winners = [r.winner_point[r.winner_point >= 0] for r in renders]
    return np.unique(np.concatenate(winners)) if winners else np.zeros(0, np.int64)


def score_views(
    mem: GeoMemory,
    vis: np.ndarray,
    view_ids: Optional[Iterable[int]] = None,
    pixel_weights: Optional[np.ndarray] = None,
) -> dict[int, float]:
    """Fraction of the visible set attributed to each source view.

    ``view_ids`` fixes the table's keys (defaults to every view present in
    the memory). ``pixel_weights``, a per-point count of won pixels, turns
    the distinct-point score into a pixel-weighted one.
    """
    ids = sorted(set(mem.view_ids().tolist()) if view_ids is None else set(view_ids))
    vis = np.asarray(vis, dtype=np.int64)
    scores = {int(i): 0.0 for i in ids}
    if vis.size == 0:
        return scores
    src = mem.source_view_ids[vis]
    w = np.ones(vis.size) if pixel_weights is None else np.asarray(pixel_weights, dtype=np.float64)[vis]
    total = w.sum()
    for vid in ids:
        scores[int(vid)] = float(w[src == vid].sum() / total)
    return scores


def pixel_counts(mem: GeoMemory, renders: Sequence[RenderOutput]) -> np.ndarray:
    """Number of pixels each point wins, summed over renders."""
    counts = np.zeros(len(mem), dtype=np.int64)
    for r in renders:
        wp = r.winner_point[r.winner_point >= 0]
        counts += np.bincount(wp, minlength=len(mem))
    return counts


def select_topk(scores: dict[int, float], k: int) -> list[int]:
    """Top-``k`` views by score, ties by smaller id; zero scores dropped."""
    if k < 1:
        raise ValueError("k must be >= 1")
    ranked = sorted((vid for vid, s in scores.items() if s > 0), key=lambda v: (-scores[v], v))
    return ranked[:k]


def scores_to_json(scores: dict[int, float], selected: Sequence[int], path=None) -> list[dict]:
    sel = set(selected)
    doc = [
        {"view_id": int(v), "score": float(s), "selected": v in sel}
        for v, s in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))
    ]
    if path is not None:
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")
    return doc


def fov_overlap_scores(view_cams: dict[int, Camera], targets: Sequence[Camera]) -> dict[int, float]:
    """Baseline: cosine similarity of viewing directions, averaged over targets.

    Ignores occlusion entirely; kept only for comparisons against the
    visibility score.
    """
    out = {}
    tdirs = np.array([t.pose.rotation[2] for t in targets])
    for vid, cam in view_cams.items():
        out[int(vid)] = float(np.clip(tdirs @ cam.pose.rotation[2], 0, None).mean())
    return out
