"""Pinhole camera model.

Conventions used everywhere in the package:

* poses map world -> camera (``x_cam = R @ x_world + t``),
* the camera looks down +z, x points right, y points down,
* the image origin is the top-left corner, ``u`` runs along the width,
* pixel centers sit at integer coordinates, so pixel ``(row, col)`` is
  sampled at ``(u, v) = (col, row)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

ORTHO_TOL = 1e-6
# back-projected border pixels land a few ulps outside the image
EDGE_EPS = 1e-9


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 896
    height: int = 512

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} image"
            )

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x_deg: float = 70.0) -> "Intrinsics":
        """Square-pixel intrinsics with the principal point at the image center."""
        f = 0.5 * width / np.tan(np.radians(fov_x_deg) / 2)
        return cls(f, f, (width - 1) / 2, (height - 1) / 2, width, height)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)


@dataclass(frozen=True, eq=False)
class Pose:
    """Rigid world -> camera transform."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() >= ORTHO_TOL or np.linalg.det(R) <= 0:
            raise ValueError("rotation must be orthonormal with determinant +1")
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    def __eq__(self, other):
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.rotation, other.rotation) and np.array_equal(
            self.translation, other.translation
        )

    __hash__ = None

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform world points (..., 3) into this pose's frame."""
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def compose(a: Pose, b: Pose) -> Pose:
    """Pose equivalent to applying ``b`` first, then ``a``."""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def invert(p: Pose) -> Pose:
    Rt = p.rotation.T
    return Pose(Rt, -Rt @ p.translation)


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """World -> camera pose for a camera at ``eye`` looking at ``target``.

    ``up`` is the world direction that should appear upwards in the image
    (i.e. along camera -y).
    """
    eye = np.asarray(eye, dtype=np.float64)
    z = np.asarray(target, dtype=np.float64) - eye
    z /= np.linalg.norm(z)
    down = -np.asarray(up, dtype=np.float64)
    y = down - (down @ z) * z
    norm = np.linalg.norm(y)
    if norm < 1e-12:
        raise ValueError("up vector is parallel to the viewing direction")
    y /= norm
    x = np.cross(y, z)
    R = np.stack([x, y, z])
    return Pose(R, -R @ eye)


@dataclass(frozen=True, eq=False)
class Camera:
    intrinsics: Intrinsics
    pose: Pose
    view_id: int = 0

    def __eq__(self, other):
        if not isinstance(other, Camera):
            return NotImplemented
        return (
            self.intrinsics == other.intrinsics
            and self.pose == other.pose
            and self.view_id == other.view_id
        )

    __hash__ = None

    @property
    def width(self) -> int:
        return self.intrinsics.width

    @property
    def height(self) -> int:
        return self.intrinsics.height

    def with_view_id(self, view_id: int) -> "Camera":
        return Camera(self.intrinsics, self.pose, int(view_id))

    def to_dict(self) -> dict:
        k = self.intrinsics
        return {
            "view_id": int(self.view_id),
            "fx": float(k.fx),
            "fy": float(k.fy),
            "cx": float(k.cx),
            "cy": float(k.cy),
            "width": int(k.width),
            "height": int(k.height),
            "rotation": [float(x) for x in self.pose.rotation.ravel()],
            "translation": [float(x) for x in self.pose.translation],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "Camera":
        required = {"view_id", "fx", "fy", "cx", "cy", "width", "height", "rotation", "translation"}
        missing = required - set(doc)
        if missing:
            raise ValueError(f"camera document missing keys: {sorted(missing)}")
        if len(doc["rotation"]) != 9 or len(doc["translation"]) != 3:
            raise ValueError("camera rotation needs 9 numbers and translation 3")
        intr = Intrinsics(
            float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]),
            int(doc["width"]), int(doc["height"]),
        )
        pose = Pose(np.reshape(doc["rotation"], (3, 3)), np.asarray(doc["translation"]))
        return cls(intr, pose, int(doc["view_id"]))


def project(cam: Camera, p_world) -> Optional[tuple[float, float, float]]:
    """Project one world point; ``None`` when behind the camera or off-image."""
    u, v, d, ok = project_points(cam, np.asarray(p_world, dtype=np.float64).reshape(1, 3))
    if not ok[0]:
        return None
    return float(u[0]), float(v[0]), float(d[0])


def project_points(cam: Camera, points: np.ndarray):
    """Vectorised projection of an (N, 3) array.

    Returns ``(u, v, depth, visible)``; ``u``/``v`` are only meaningful
    where ``visible`` is true.
    """
    k = cam.intrinsics
    pc = cam.pose.apply(points)
    z = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = k.fx * pc[:, 0] / z + k.cx
        v = k.fy * pc[:, 1] / z + k.cy
    visible = (z > 0) & (u >= -EDGE_EPS) & (u < k.width) & (v >= -EDGE_EPS) & (v < k.height)
    return u, v, z, visible


def unproject(cam: Camera, u, v, depth) -> np.ndarray:
    """Back-project pixel coordinates at camera-space depth to world points.

    Accepts scalars or equally shaped arrays; returns (..., 3).
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise ValueError("unproject requires depth > 0")
    k = cam.intrinsics
    pc = np.stack(
        np.broadcast_arrays((u - k.cx) / k.fx * depth, (v - k.cy) / k.fy * depth, depth), axis=-1
    )
    R, t = cam.pose.rotation, cam.pose.translation
    return (pc - t) @ R


def pixel_rays(cam: Camera) -> tuple[np.ndarray, np.ndarray]:
    """World-space ray origin and per-pixel directions (H*W, 3).

    Directions are scaled so that their camera-space z component is 1, so a
    ray parameter equals camera depth.
    """
    k = cam.intrinsics
    rows, cols = np.mgrid[0 : k.height, 0 : k.width]
    d_cam = np.stack(
        [(cols.ravel() - k.cx) / k.fx, (rows.ravel() - k.cy) / k.fy, np.ones(rows.size)], axis=-1
    )
    return cam.pose.center, d_cam @ cam.pose.rotation


def save_trajectory(path, cams: Sequence[Camera]) -> None:
    Path(path).write_text(json.dumps([c.to_dict() for c in cams], indent=1) + "\n")


def load_trajectory(path) -> list[Camera]:
    doc = json.loads(Path(path).read_text())
    if isinstance(doc, dict):
        doc = [doc]
    if not isinstance(doc, list):
        raise ValueError(f"{path}: expected a JSON array of camera documents")
    return [Camera.from_dict(d) for d in doc]
