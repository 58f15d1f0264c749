"""Explicit point-cloud geometry memory built by back-projecting views."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Protocol

import numpy as np

from .camera import unproject
from .scene import CaptureFrame, SyntheticScene, raycast


class GeoPoint(NamedTuple):
    position: np.ndarray
    color: np.ndarray
    source_view_id: int


class ViewBank:
    """Frames keyed by view id; ids must be unique."""

    def __init__(self, frames: Iterable[CaptureFrame] = ()):
        self._frames: dict[int, CaptureFrame] = {}
        for fr in frames:
            self._add(fr)

    def _add(self, fr: CaptureFrame) -> None:
        if fr.view_id in self._frames:
            raise ValueError(f"duplicate view_id {fr.view_id} in view bank")
        self._frames[fr.view_id] = fr

    def extended(self, frames: Iterable[CaptureFrame]) -> "ViewBank":
        out = ViewBank(self.frames)
        for fr in frames:
            out._add(fr)
        return out

    @property
    def frames(self) -> list[CaptureFrame]:
        return list(self._frames.values())

    @property
    def view_ids(self) -> list[int]:
        return list(self._frames)

    def __getitem__(self, view_id: int) -> CaptureFrame:
        return self._frames[view_id]

    def __contains__(self, view_id) -> bool:
        return view_id in self._frames

    def __len__(self) -> int:
        return len(self._frames)


class DepthProvider(Protocol):
    def __call__(self, frame: CaptureFrame) -> np.ndarray: ...


def stored_depth(frame: CaptureFrame) -> np.ndarray:
    return frame.depth


@dataclass(frozen=True)
class RaycastDepth:
    """Depth straight from the synthetic scene, ignoring the frame's own."""

    scene: SyntheticScene

    def __call__(self, frame: CaptureFrame) -> np.ndarray:
        return raycast(self.scene, frame.camera).depth


@dataclass(frozen=True, eq=False)
class GeoMemory:
    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) uint8
    source_view_ids: np.ndarray  # (N,) int64
    generation_counter: int = 0
    # provenance: pixel each point was created from, (N, 2) as (u, v)
    pixels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.positions)
        if self.positions.shape != (n, 3) or self.colors.shape != (n, 3) or self.source_view_ids.shape != (n,):
            raise ValueError("inconsistent GeoMemory array shapes")

    @classmethod
    def empty(cls) -> "GeoMemory":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), np.uint8), np.zeros(0, np.int64))

    def __len__(self) -> int:
        return len(self.positions)

    def point(self, i: int) -> GeoPoint:
        return GeoPoint(self.positions[i], self.colors[i], int(self.source_view_ids[i]))

    @property
    def points(self) -> list[GeoPoint]:
        return [self.point(i) for i in range(len(self))]

    def view_ids(self) -> np.ndarray:
        return np.unique(self.source_view_ids)

    def subset(self, keep: np.ndarray) -> "GeoMemory":
        """Memory restricted to a boolean mask or index array, order kept."""
        return GeoMemory(
            self.positions[keep],
            self.colors[keep],
            self.source_view_ids[keep],
            self.generation_counter,
            None if self.pixels is None else self.pixels[keep],
        )

    def scaled(self, factor: float) -> "GeoMemory":
        return GeoMemory(
            self.positions * factor, self.colors, self.source_view_ids, self.generation_counter, self.pixels
        )

    def equals(self, other: "GeoMemory") -> bool:
        return (
            self.generation_counter == other.generation_counter
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.colors, other.colors)
            and np.array_equal(self.source_view_ids, other.source_view_ids)
        )


def _backproject(frame: CaptureFrame, depth: np.ndarray, stride: int):
    rows, cols = np.mgrid[0 : depth.shape[0] : stride, 0 : depth.shape[1] : stride]
    d = depth[rows, cols]
    ok = d > 0
    u, v, d = cols[ok].astype(np.float64), rows[ok].astype(np.float64), d[ok]
    if d.size == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), np.uint8), np.zeros((0, 2))
    pos = unproject(frame.camera, u, v, d)
    return pos, frame.color[rows[ok], cols[ok]], np.stack([u, v], axis=1)


def init_from_captures(
    bank: ViewBank, stride: int = 1, depth_provider: DepthProvider = stored_depth
) -> GeoMemory:
    """Back-project every ``stride``-th pixel with positive depth.

    Points are ordered by (view_id, row, col).
    """
    if len(bank) == 0:
        raise ValueError("cannot build geometry memory from an empty view bank")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    pos, col, src, pix = [], [], [], []
    for vid in sorted(bank.view_ids):
        fr = bank[vid]
        p, c, uv = _backproject(fr, np.asarray(depth_provider(fr), dtype=np.float64), stride)
        pos.append(p)
        col.append(c)
        pix.append(uv)
        src.append(np.full(len(p), vid, dtype=np.int64))
    return GeoMemory(
        np.concatenate(pos), np.concatenate(col).astype(np.uint8), np.concatenate(src), 0, np.concatenate(pix)
    )


def update_memory(
    mem: GeoMemory, new_bank: ViewBank, stride: int = 1, depth_provider: DepthProvider = stored_depth
) -> GeoMemory:
    """Rebuild the memory from ``new_bank``; the old points are discarded."""
    if len(new_bank) == 0:
        raise ValueError("cannot update geometry memory from an empty view bank")
    rebuilt = init_from_captures(new_bank, stride, depth_provider)
    return GeoMemory(
        rebuilt.positions, rebuilt.colors, rebuilt.source_view_ids, mem.generation_counter + 1, rebuilt.pixels
    )


def source_subset(mem: GeoMemory, view_id: int) -> set[int]:
    return set(np.nonzero(mem.source_view_ids == view_id)[0].tolist())


_PLY_PROPS = ["x", "y", "z", "red", "green", "blue", "source_view"]


def save_ply(path, mem: GeoMemory) -> None:
    """ASCII PLY with full-precision doubles, so positions round-trip exactly."""
    n = len(mem)
    header = "\n".join(
        [
            "ply",
            "format ascii 1.0",
            f"comment generation_counter {mem.generation_counter}",
            f"element vertex {n}",
            "property double x",
            "property double y",
            "property double z",
            "property uchar red",
            "property uchar green",
            "property uchar blue",
            "property int source_view",
            "end_header",
        ]
    )
    lines = [header]
    for p, c, s in zip(mem.positions.tolist(), mem.colors.tolist(), mem.source_view_ids.tolist()):
        lines.append(f"{p[0]!r} {p[1]!r} {p[2]!r} {c[0]} {c[1]} {c[2]} {s}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_ply(path) -> GeoMemory:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0] != "ply" or lines[1] != "format ascii 1.0":
        raise ValueError(f"{path}: not an ASCII PLY file")
    n, counter, props, i = None, 0, [], 2
    while lines[i] != "end_header":
        tok = lines[i].split()
        if tok[0] == "element" and tok[1] == "vertex":
            n = int(tok[2])
        elif tok[0] == "property":
            props.append(tok[-1])
        elif tok[:2] == ["comment", "generation_counter"]:
            counter = int(tok[2])
        i += 1
    if n is None or props != _PLY_PROPS:
        raise ValueError(f"{path}: expected vertex properties {_PLY_PROPS}, got {props}")
    body = lines[i + 1 : i + 1 + n]
    if len(body) != n:
        raise ValueError(f"{path}: expected {n} vertices, found {len(body)}")
    if n == 0:
        return GeoMemory(np.zeros((0, 3)), np.zeros((0, 3), np.uint8), np.zeros(0, np.int64), counter)
    rows = [ln.split() for ln in body]
    pos = np.array([[float(r[0]), float(r[1]), float(r[2])] for r in rows])
    col = np.array([[int(r[3]), int(r[4]), int(r[5])] for r in rows], dtype=np.uint8)
    src = np.array([int(r[6]) for r in rows], dtype=np.int64)
    return GeoMemory(pos, col, src, counter)

