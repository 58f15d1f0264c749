"""Z-buffer point splatting of the geometry memory into a camera."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .camera import Camera, project_points
from .io import write_depth, write_image, write_png
from .memory import GeoMemory


@dataclass(frozen=True, eq=False)
class RenderOutput:
    color: np.ndarray  # (H, W, 3) uint8
    mask: np.ndarray  # (H, W) bool
    depth: np.ndarray  # (H, W) float64, 0 where ~mask
    source_index: np.ndarray  # (H, W) int64, -1 where ~mask
    winner_point: np.ndarray  # (H, W) int64, -1 where ~mask

    def save(self, directory, stem: str = "render", ppm: bool = False) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        write_image(directory / f"{stem}_color", self.color, ppm)
        write_image(directory / f"{stem}_mask", np.repeat(self.mask[..., None] * 255, 3, axis=2).astype(np.uint8), ppm)
        if np.any(self.source_index >= 65535):
            raise ValueError("source view ids >= 65535 do not fit the 16-bit source map")
        write_png(directory / f"{stem}_source.png", (self.source_index + 1).astype(np.uint16))
        write_depth(directory / f"{stem}.depth", self.depth)


def splat_pixels(cam: Camera, positions: np.ndarray):
    """Integer pixel of each point's projection and its depth.

    Returns ``(col, row, depth, ok)``; points are snapped to the nearest
    pixel center, and dropped when behind the camera or off-image.
    """
    u, v, d, ok = project_points(cam, positions)
    col = np.floor(np.where(ok, u, 0) + 0.5).astype(np.int64)
    row = np.floor(np.where(ok, v, 0) + 0.5).astype(np.int64)
    ok &= (col < cam.width) & (row < cam.height)
    return col, row, d, ok


def render_points(mem: GeoMemory, cam: Camera, splat_radius: int = 1) -> RenderOutput:
    """Render with square splats of Chebyshev radius ``splat_radius``.

    Per pixel the covering point with the smallest depth wins; exact depth
    ties go to the smaller point index.
    """
    if splat_radius < 0:
        raise ValueError("splat_radius must be >= 0")
    h, w = cam.height, cam.width
    winner = np.full(h * w, -1, dtype=np.int64)

    if len(mem):
        col, row, depth, ok = splat_pixels(cam, mem.positions)
        idx = np.nonzero(ok)[0]
        if idx.size:
            order = idx[np.lexsort((idx, depth[idx]))]
            rank = np.arange(order.size, dtype=np.int64)
            c, r = col[order], row[order]
            best = np.full(h * w, order.size, dtype=np.int64)
            for dy in range(-splat_radius, splat_radius + 1):
                for dx in range(-splat_radius, splat_radius + 1):
                    cc, rr = c + dx, r + dy
                    inb = (cc >= 0) & (cc < w) & (rr >= 0) & (rr < h)
                    np.minimum.at(best, rr[inb] * w + cc[inb], rank[inb])
            hit = best < order.size
            winner[hit] = order[best[hit]]

    mask = winner >= 0
    color = np.zeros((h * w, 3), dtype=np.uint8)
    depth_map = np.zeros(h * w)
    source = np.full(h * w, -1, dtype=np.int64)
    if mask.any():
        wp = winner[mask]
        color[mask] = mem.colors[wp]
        depth_map[mask] = cam.pose.apply(mem.positions[wp])[:, 2]
        source[mask] = mem.source_view_ids[wp]
    return RenderOutput(
        color.reshape(h, w, 3),
        mask.reshape(h, w),
        depth_map.reshape(h, w),
        source.reshape(h, w),
        winner.reshape(h, w),
    )


def hole_fraction(out: RenderOutput) -> float:
    return float(np.count_nonzero(~out.mask)) / out.mask.size
