"""Procedural box scenes and an exact ray caster used as ground truth."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .camera import Camera, Intrinsics, look_at, pixel_rays

BACKGROUND = np.array([0, 0, 0], dtype=np.uint8)
MIN_BOXES, MAX_BOXES = 4, 12
_FACE_SHADE = np.array([0.80, 1.00, 0.65])  # by face-normal axis (x, y, z)


@dataclass(frozen=True)
class Box:
    lo: tuple[float, float, float]
    hi: tuple[float, float, float]
    texture_freq: float = 2.0
    palette: tuple[tuple[int, int, int], tuple[int, int, int]] = ((200, 60, 60), (60, 60, 200))

    def __post_init__(self):
        if any(h <= l for l, h in zip(self.lo, self.hi)):
            raise ValueError(f"degenerate box {self.lo} -> {self.hi}")

    def to_dict(self) -> dict:
        return {
            "lo": list(self.lo),
            "hi": list(self.hi),
            "texture_freq": self.texture_freq,
            "palette": [list(c) for c in self.palette],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Box":
        return cls(
            tuple(float(x) for x in d["lo"]),
            tuple(float(x) for x in d["hi"]),
            float(d["texture_freq"]),
            tuple(tuple(int(c) for c in p) for p in d["palette"]),
        )


@dataclass(frozen=True)
class SyntheticScene:
    """Axis-aligned textured boxes, optionally enclosed by a room.

    The room is seen from the inside; boxes from the outside.
    """

    boxes: tuple[Box, ...]
    room: Optional[Box] = None
    seed: Optional[int] = None
    _arrays: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.room is not None:
            for b in self.boxes:
                if any(bl < rl or bh > rh for bl, bh, rl, rh in zip(b.lo, b.hi, self.room.lo, self.room.hi)):
                    raise ValueError(f"box {b.lo}->{b.hi} leaves the room")
        object.__setattr__(self, "_arrays", _pack(self.boxes))

    def contains_free(self, point) -> bool:
        """True if ``point`` is inside the room and outside every box."""
        p = np.asarray(point, dtype=np.float64)
        if self.room is not None and not (np.all(p > self.room.lo) and np.all(p < self.room.hi)):
            return False
        return not any(np.all(p >= b.lo) and np.all(p <= b.hi) for b in self.boxes)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "room": None if self.room is None else self.room.to_dict(),
            "boxes": [b.to_dict() for b in self.boxes],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticScene":
        room = None if d.get("room") is None else Box.from_dict(d["room"])
        return cls(tuple(Box.from_dict(b) for b in d["boxes"]), room, d.get("seed"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "SyntheticScene":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _pack(boxes: Sequence[Box]) -> dict:
    n = len(boxes)
    return {
        "lo": np.array([b.lo for b in boxes], dtype=np.float64).reshape(n, 3),
        "hi": np.array([b.hi for b in boxes], dtype=np.float64).reshape(n, 3),
        "freq": np.array([b.texture_freq for b in boxes], dtype=np.float64),
        "palette": np.array([b.palette for b in boxes], dtype=np.float64).reshape(n, 2, 3),
    }


ROOM = Box((-5.0, 0.0, -5.0), (5.0, 3.0, 5.0), 1.0, ((180, 170, 150), (120, 110, 100)))


def build_scene(seed: int) -> SyntheticScene:
    """Deterministic random room with 4-12 boxes standing on the floor.

    Boxes stay within |x|, |z| <= 2.5 so that orbits of radius >= 3.5 around
    the origin remain free.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(MIN_BOXES, MAX_BOXES + 1))
    boxes = []
    for _ in range(n):
        size = rng.uniform([0.3, 0.3, 0.3], [1.2, 1.6, 1.2])
        cx, cz = rng.uniform(-2.5 + size[0] / 2, 2.5 - size[0] / 2), rng.uniform(
            -2.5 + size[2] / 2, 2.5 - size[2] / 2
        )
        lo = (cx - size[0] / 2, 0.0, cz - size[2] / 2)
        hi = (cx + size[0] / 2, float(size[1]), cz + size[2] / 2)
        freq = float(rng.choice([1.0, 2.0, 3.0, 4.0]))
        pal = rng.integers(30, 256, size=(2, 3))
        boxes.append(
            Box(
                tuple(round(float(x), 6) for x in lo),
                tuple(round(float(x), 6) for x in hi),
                freq,
                tuple(tuple(int(c) for c in p) for p in pal),
            )
        )
    return SyntheticScene(tuple(boxes), ROOM, seed)


@dataclass(frozen=True, eq=False)
class CaptureFrame:
    camera: Camera
    color: np.ndarray  # (H, W, 3) uint8
    depth: np.ndarray  # (H, W) float64, 0 = no hit

    def __post_init__(self):
        h, w = self.camera.intrinsics.shape
        if self.color.shape != (h, w, 3) or self.depth.shape != (h, w):
            raise ValueError(
                f"frame arrays {self.color.shape}/{self.depth.shape} do not match camera {h}x{w}"
            )

    @property
    def view_id(self) -> int:
        return self.camera.view_id


def _slabs(origin, dirs, lo, hi):
    """Per-ray/per-box entry and exit parameters, plus their axes."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / dirs  # (N, 3)
        t1 = (lo[None, :, :] - origin) * inv[:, None, :]  # (N, B, 3)
        t2 = (hi[None, :, :] - origin) * inv[:, None, :]
    # rays parallel to a slab: inside -> (-inf, inf), outside -> nan -> miss
    tnear = np.fmin(t1, t2)
    tfar = np.fmax(t1, t2)
    parallel = dirs[:, None, :] == 0
    inside = (origin >= lo) & (origin <= hi)  # (B, 3)
    tnear = np.where(parallel, np.where(inside[None], -np.inf, np.inf), tnear)
    tfar = np.where(parallel, np.where(inside[None], np.inf, -np.inf), tfar)
    return tnear.max(axis=2), tnear.argmax(axis=2), tfar.min(axis=2), tfar.argmin(axis=2)


def _texture(points, axis, freq, palette):
    """Checker texture on the face plane, shaded per face orientation."""
    n = points.shape[0]
    other = np.array([[1, 2], [0, 2], [0, 1]])[axis]  # (N, 2)
    uv = np.take_along_axis(points, other, axis=1) * freq[:, None]
    checker = (np.floor(uv).sum(axis=1).astype(np.int64)) % 2
    base = palette[np.arange(n), checker]
    shade = _FACE_SHADE[axis]
    return np.clip(np.rint(base * shade[:, None]), 0, 255).astype(np.uint8)


def raycast(scene: SyntheticScene, cam: Camera) -> CaptureFrame:
    """Nearest-hit ray casting through every pixel center."""
    h, w = cam.intrinsics.shape
    origin, dirs = pixel_rays(cam)
    n = dirs.shape[0]
    best_t = np.full(n, np.inf)
    color = np.tile(BACKGROUND, (n, 1))

    arr = scene._arrays
    if len(scene.boxes):
        tn, an, tf, _ = _slabs(origin, dirs, arr["lo"], arr["hi"])
        hit = (tn <= tf) & (tn > 0)
        t_hit = np.where(hit, tn, np.inf)
        b = t_hit.argmin(axis=1)
        rows = np.arange(n)
        t_best = t_hit[rows, b]
        m = np.isfinite(t_best)
        if m.any():
            idx = np.nonzero(m)[0]
            p = origin + dirs[idx] * t_best[idx, None]
            color[idx] = _texture(p, an[idx, b[idx]], arr["freq"][b[idx]], arr["palette"][b[idx]])
            best_t[idx] = t_best[idx]

    if scene.room is not None:
        r = _pack([scene.room])
        tn, _, tf, af = _slabs(origin, dirs, r["lo"], r["hi"])
        tf, af = tf[:, 0], af[:, 0]
        m = (tf > 0) & (tf >= tn[:, 0]) & (tf < best_t)
        if m.any():
            idx = np.nonzero(m)[0]
            p = origin + dirs[idx] * tf[idx, None]
            color[idx] = _texture(
                p, af[idx], np.full(idx.size, r["freq"][0]), np.repeat(r["palette"], idx.size, axis=0)
            )
            best_t[idx] = tf[idx]

    depth = np.where(np.isfinite(best_t), best_t, 0.0)
    return CaptureFrame(cam, color.reshape(h, w, 3), depth.reshape(h, w))


def orbit_trajectory(
    n: int,
    intrinsics: Intrinsics,
    radius: float = 4.0,
    height: float = 1.6,
    start_deg: float = 0.0,
    end_deg: float = 90.0,
    target=(0.0, 0.6, 0.0),
    first_view_id: int = 0,
) -> list[Camera]:
    """Cameras on a horizontal arc around ``target``, endpoints inclusive."""
    angles = np.radians(np.linspace(start_deg, end_deg, n))
    cams = []
    for i, a in enumerate(angles):
        eye = (radius * np.sin(a), height, radius * np.cos(a))
        cams.append(Camera(intrinsics, look_at(eye, target), first_view_id + i))
    return cams


def make_training_pair(scene, clip_cameras: Sequence[Camera], rng: np.random.Generator):
    """Sample conditioning/target indices for one training clip.

    Frame 0 is always a reference. ``N`` in {2, 3, 4} further references
    come from the first half of the clip with probability 0.5, otherwise
    from the whole clip. Every frame is a target.
    """
    n = len(clip_cameras)
    if n < 2:
        raise ValueError("a training clip needs at least 2 frames")
    first_half = rng.random() < 0.5
    count = int(rng.integers(2, 5))
    pool = np.arange(1, n // 2 if first_half else n)
    if pool.size == 0:
        pool = np.arange(1, n)
    extra = rng.choice(pool, size=min(count, pool.size), replace=False)
    refs = [0] + sorted(int(i) for i in extra)
    return refs, list(range(n))


def occluder_scene() -> SyntheticScene:
    """A tall panel in front of a chair-like box.

    Seen from +z the panel hides the chair; the chair's faces only come
    into view from large orbit angles.
    """
    panel = Box((-1.2, 0.0, 0.9), (1.2, 2.4, 1.2), 3.0, ((220, 200, 40), (40, 40, 40)))
    chair = Box((-0.6, 0.0, -0.8), (0.6, 1.0, 0.2), 4.0, ((200, 40, 40), (240, 240, 240)))
    return SyntheticScene((panel, chair), ROOM, None)
