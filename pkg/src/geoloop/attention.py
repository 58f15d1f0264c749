"""Token layout and context-window block-sparse attention masks.

Reference frames are prepended to the sequence and act as an always
visible key/value memory. Each target frame additionally sees a temporal
window of neighbouring target frames. One frame occupies exactly one
temporal position; there is no temporal pooling.
"""

from __future__ import annotations

import base64
import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

REF_CHANNELS = ("clean_image",)
TARGET_CHANNELS = ("noisy_latent", "render", "visibility_mask")


@dataclass(frozen=True)
class SequenceLayout:
    num_refs: int
    num_targets: int
    h_tokens: int
    w_tokens: int
    block_size: tuple[int, int, int] = (2, 8, 8)

    def __post_init__(self):
        if self.num_targets < 1:
            raise ValueError("layout needs at least one target frame")
        if self.num_refs < 0 or self.h_tokens < 1 or self.w_tokens < 1 or min(self.block_size) < 1:
            raise ValueError(f"invalid layout dimensions: {self}")

    @property
    def num_frames(self) -> int:
        return self.num_refs + self.num_targets

    @property
    def tokens_per_frame(self) -> int:
        return self.h_tokens * self.w_tokens

    @property
    def num_tokens(self) -> int:
        return self.num_frames * self.tokens_per_frame

    @property
    def temporal_blocks(self) -> int:
        return math.ceil(self.num_frames / self.block_size[0])

    @property
    def spatial_blocks(self) -> tuple[int, int]:
        return math.ceil(self.h_tokens / self.block_size[1]), math.ceil(self.w_tokens / self.block_size[2])

    @property
    def blocks_per_frame_slab(self) -> int:
        bh, bw = self.spatial_blocks
        return bh * bw

    @property
    def num_blocks(self) -> int:
        return self.temporal_blocks * self.blocks_per_frame_slab

    def is_reference(self, frame: int) -> bool:
        return 0 <= frame < self.num_refs

    def channel_roles(self, frame: int) -> tuple[str, ...]:
        """What gets concatenated on the channel axis for ``frame``."""
        return REF_CHANNELS if self.is_reference(frame) else TARGET_CHANNELS

    def token_frames(self) -> np.ndarray:
        return np.repeat(np.arange(self.num_frames), self.tokens_per_frame)

    def token_blocks(self) -> np.ndarray:
        """Block id of every token, ordered (temporal, row, col)."""
        f = self.token_frames()
        y = np.tile(np.repeat(np.arange(self.h_tokens), self.w_tokens), self.num_frames)
        x = np.tile(np.arange(self.w_tokens), self.num_frames * self.h_tokens)
        bt, bh, bw = self.block_size
        _, nbw = self.spatial_blocks
        return (f // bt) * self.blocks_per_frame_slab + (y // bh) * nbw + (x // bw)


def build_layout(R: int, T: int, h_tokens: int, w_tokens: int, block_size=(2, 8, 8)) -> SequenceLayout:
    return SequenceLayout(R, T, h_tokens, w_tokens, tuple(int(b) for b in block_size))


def target_window(f: int, T: int, window: int, mode: str = "shifted") -> tuple[int, int]:
    """Inclusive range of target indices visible from target ``f``.

    ``centered`` keeps every target within ``window`` of ``f`` and so
    shrinks at the sequence ends. ``shifted`` keeps the window at
    ``min(T, 2*window + 1)`` frames by sliding it inwards at the ends.
    """
    if mode == "centered":
        return max(0, f - window), min(T - 1, f + window)
    if mode == "shifted":
        size = min(T, 2 * window + 1)
        start = min(max(f - window, 0), T - size)
        return start, start + size - 1
    raise ValueError(f"unknown window mode {mode!r}")


def frame_mask(layout: SequenceLayout, window: int = 8, mode: str = "shifted", refs_see_targets: bool = False):
    """(F, F) boolean frame-level attention pattern (query rows, key columns)."""
    if window < 0:
        raise ValueError("window must be >= 0")
    R, T, F = layout.num_refs, layout.num_targets, layout.num_frames
    m = np.zeros((F, F), dtype=bool)
    m[:R, :R] = True
    if refs_see_targets:
        m[:R, R:] = True
    m[R:, :R] = True
    for f in range(T):
        lo, hi = target_window(f, T, window, mode)
        m[R + f, R + lo : R + hi + 1] = True
    m[np.arange(F), np.arange(F)] = True
    return m


@dataclass(frozen=True, eq=False)
class BlockMask:
    blocks: np.ndarray  # (num_blocks, num_blocks) bool
    frames: np.ndarray  # (F, F) bool
    layout: SequenceLayout
    window: int
    mode: str = "shifted"
    refs_see_targets: bool = False
    temporal: np.ndarray = field(default=None, repr=False)  # (temporal blocks)^2

    def token_mask(self) -> np.ndarray:
        tb = self.layout.token_blocks()
        return self.blocks[np.ix_(tb, tb)]

    def to_json(self) -> dict:
        L = self.layout
        bits = np.packbits(self.blocks.ravel())
        return {
            "R": L.num_refs,
            "T": L.num_targets,
            "grid": [L.h_tokens, L.w_tokens],
            "block_size": list(L.block_size),
            "window": self.window,
            "window_mode": self.mode,
            "refs_see_targets": self.refs_see_targets,
            "shape": list(self.blocks.shape),
            "bitset": base64.b64encode(bits.tobytes()).decode("ascii"),
        }

    @staticmethod
    def blocks_from_json(doc: dict) -> np.ndarray:
        n, m = doc["shape"]
        bits = np.frombuffer(base64.b64decode(doc["bitset"]), dtype=np.uint8)
        return np.unpackbits(bits, count=n * m).astype(bool).reshape(n, m)


def build_sparse_mask(
    layout: SequenceLayout, window: int = 8, mode: str = "shifted", refs_see_targets: bool = False
) -> BlockMask:
    """Block mask = union of the frame pattern over the frames each block spans."""
    fm = frame_mask(layout, window, mode, refs_see_targets)
    bt = layout.block_size[0]
    nt = layout.temporal_blocks
    tb_of_frame = np.arange(layout.num_frames) // bt
    onehot = np.zeros((nt, layout.num_frames), dtype=np.int64)
    onehot[tb_of_frame, np.arange(layout.num_frames)] = 1
    temporal = (onehot @ fm.astype(np.int64) @ onehot.T) > 0
    s = layout.blocks_per_frame_slab
    blocks = np.kron(temporal, np.ones((s, s), dtype=bool))
    return BlockMask(blocks, fm, layout, window, mode, refs_see_targets, temporal)


def reference_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: BlockMask) -> np.ndarray:
    """Dense softmax attention restricted to the mask's allowed token pairs."""
    q, k, v = (np.asarray(a, dtype=np.float64) for a in (q, k, v))
    n = mask.layout.num_tokens
    if q.shape[0] != n or k.shape[0] != n or v.shape[0] != n or q.shape[1] != k.shape[1]:
        raise ValueError(
            f"token arrays {q.shape}/{k.shape}/{v.shape} do not match layout with {n} tokens"
        )
    allowed = mask.token_mask()
    logits = q @ k.T / math.sqrt(q.shape[1])
    logits = np.where(allowed, logits, -np.inf)
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=1, keepdims=True)
    return p @ v


def dense_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    logits = q @ k.T / math.sqrt(q.shape[1])
    logits -= logits.max(axis=1, keepdims=True)
    p = np.exp(logits)
    return (p / p.sum(axis=1, keepdims=True)) @ v


@dataclass(frozen=True)
class DensityStats:
    block_density: float
    allowed_frame_pairs: int
    frame_density: float
    key_blocks_histogram: dict[int, int]


def mask_density(mask: BlockMask) -> DensityStats:
    per_row = mask.blocks.sum(axis=1)
    counts = np.bincount(per_row)
    hist = {int(i): int(c) for i, c in enumerate(counts) if c}
    pairs = int(mask.frames.sum())
    return DensityStats(float(mask.blocks.mean()), pairs, pairs / mask.frames.size, hist)


def expected_frame_pairs(R: int, T: int, window: int, mode: str = "shifted", refs_see_targets: bool = False) -> int:
    """Closed-form count of allowed (query frame, key frame) pairs."""
    ref_rows = R * (R + (T if refs_see_targets else 0))
    if mode == "shifted":
        return ref_rows + T * (R + min(T, 2 * window + 1))
    total = 0
    for f in range(T):
        total += min(T - 1, f + window) - max(0, f - window) + 1
    return ref_rows + T * R + total


def write_density_csv(path, rows) -> None:
    """``rows``: iterable of (T, allowed_pairs, density)."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["T", "allowed_pairs", "density"])
        for T, pairs, dens in rows:
            w.writerow([T, pairs, f"{dens:.6f}"])


def save_mask(path, mask: BlockMask) -> None:
    Path(path).write_text(json.dumps(mask.to_json(), indent=1) + "\n")
