"""File formats: PNG/PPM images, raw float depth maps, capture banks."""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Camera

_DEPTH_HEADER = struct.Struct("<II")


def write_png(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.dtype == np.uint16:
        Image.fromarray(img.astype("<u2")).save(path)
    else:
        Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path)


def read_png(path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("I;16", "I;16B", "I"):
            return np.asarray(im, dtype=np.uint16)
        return np.asarray(im.convert("RGB") if im.mode not in ("L",) else im)


def write_ppm(path, img: np.ndarray) -> None:
    img = np.ascontiguousarray(img, dtype=np.uint8)
    h, w = img.shape[:2]
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.reshape(h, w, 3).tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        end = pos
        while not data[end : end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6" or int(tokens[3]) != 255:
        raise ValueError(f"{path}: only 8-bit binary PPM (P6) is supported")
    w, h = int(tokens[1]), int(tokens[2])
    return np.frombuffer(data[pos + 1 : pos + 1 + w * h * 3], dtype=np.uint8).reshape(h, w, 3).copy()


def write_image(path, img: np.ndarray, ppm: bool = False) -> Path:
    path = Path(path).with_suffix(".ppm" if ppm else ".png")
    (write_ppm if ppm else write_png)(path, img)
    return path


def read_image(path) -> np.ndarray:
    return read_ppm(path) if str(path).endswith(".ppm") else read_png(path)


def write_depth(path, depth: np.ndarray) -> None:
    """Little-endian float32 map preceded by (width, height) as uint32."""
    depth = np.asarray(depth)
    h, w = depth.shape
    with open(path, "wb") as f:
        f.write(_DEPTH_HEADER.pack(w, h))
        f.write(depth.astype("<f4").tobytes())


def read_depth(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h = _DEPTH_HEADER.unpack_from(data)
    body = data[_DEPTH_HEADER.size :]
    if len(body) != 4 * w * h:
        raise ValueError(f"{path}: expected {w}x{h} float32 payload, got {len(body)} bytes")
    return np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)


def save_bank(directory, frames, ppm: bool = False) -> Path:
    """Write frames as images + depth files and an index ``bank.json``."""
    from .memory import ViewBank

    bank = frames if isinstance(frames, ViewBank) else ViewBank(frames)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for fr in bank.frames:
        stem = f"view_{fr.view_id:05d}"
        img = write_image(directory / stem, fr.color, ppm)
        write_depth(directory / f"{stem}.depth", fr.depth)
        entries.append({"camera": fr.camera.to_dict(), "color": img.name, "depth": f"{stem}.depth"})
    index = directory / "bank.json"
    index.write_text(json.dumps(entries, indent=1) + "\n")
    return index


def load_bank(path):
    """Load a bank written by :func:`save_bank` (directory or bank.json)."""
    from .memory import ViewBank
    from .scene import CaptureFrame

    path = Path(path)
    index = path / "bank.json" if path.is_dir() else path
    entries = json.loads(index.read_text())
    frames = []
    for e in entries:
        cam = Camera.from_dict(e["camera"])
        frames.append(
            CaptureFrame(cam, read_image(index.parent / e["color"]), read_depth(index.parent / e["depth"]))
        )
    return ViewBank(frames)
