"""Geometric positional encodings for box sequences.

The sweep encoding samples m normalized positions across a box along one
axis — step l of m lands at (x + w*l/m) / page_w — and tiles that m-vector
n times to reach the model width. A 4-coordinate linear projection and a
no-op variant are provided as ablation baselines.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .docmodel import BBox

PE_VARIANTS = ("xy", "linear", "none")


@dataclass(frozen=True)
class XYPosConfig:
    """Sweep steps per axis (m) and tile count (n); width is m*n."""

    m: int = 32
    n: int = 24

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError(f"m and n must be >= 1, got m={self.m} n={self.n}")

    @property
    def d_model(self) -> int:
        return self.m * self.n


def _sweep(start: float, extent: float, page_dim: float,
           cfg: XYPosConfig) -> np.ndarray:
    if page_dim <= 0:
        raise ValueError(f"page dimension must be positive, got {page_dim}")
    steps = np.arange(1, cfg.m + 1, dtype=np.float64)
    pos = (start + extent * steps / cfg.m) / page_dim
    return np.tile(pos, cfg.n)


def xpos(b: BBox, page_w: float, cfg: XYPosConfig = XYPosConfig()) -> np.ndarray:
    """Horizontal sweep encoding of length m*n (n contiguous tiles)."""
    return _sweep(b.x, b.w, page_w, cfg)


def ypos(b: BBox, page_h: float, cfg: XYPosConfig = XYPosConfig()) -> np.ndarray:
    """Vertical sweep encoding, mirror of xpos over (y, h, page_h)."""
    return _sweep(b.y, b.h, page_h, cfg)


def xy_offsets(boxes, page_w: float, page_h: float,
               cfg: XYPosConfig = XYPosConfig()) -> np.ndarray:
    """Stacked xpos+ypos offsets for a box sequence, shape (len(boxes), m*n)."""
    if not boxes:
        return np.zeros((0, cfg.d_model))
    return np.stack([xpos(b, page_w, cfg) + ypos(b, page_h, cfg) for b in boxes])


def apply_xy_pos(reps: np.ndarray, boxes, page_w: float, page_h: float,
                 cfg: XYPosConfig = XYPosConfig()) -> np.ndarray:
    """Add the sweep encodings of each box to its representation row."""
    reps = np.asarray(reps)
    if len(boxes) != reps.shape[0]:
        raise ValueError(f"{reps.shape[0]} representations for {len(boxes)} boxes")
    if reps.shape[1] != cfg.d_model:
        raise ValueError(
            f"representation width {reps.shape[1]} != m*n = {cfg.d_model}")
    return reps + xy_offsets(boxes, page_w, page_h, cfg).astype(reps.dtype)


def normalized_coords(boxes, page_w: float, page_h: float) -> np.ndarray:
    """Rows of (x/W, y/H, w/W, h/H)."""
    if not boxes:
        return np.zeros((0, 4))
    return np.array([[b.x / page_w, b.y / page_h, b.w / page_w, b.h / page_h]
                     for b in boxes])


def linear_pe(boxes, weight: np.ndarray, page_w: float,
              page_h: float) -> np.ndarray:
    """Baseline encoding: normalized 4-coordinates times a learned matrix."""
    weight = np.asarray(weight)
    if weight.ndim != 2 or weight.shape[0] != 4:
        raise ValueError(f"linear PE weight must be 4xd, got {weight.shape}")
    return normalized_coords(boxes, page_w, page_h) @ weight
