"""Stochastic affine augmentation applied identically to all channels.

One parameter set (flip, rotation, shear, zoom, shift) is drawn per call
and composed into a single affine transform; pixels are pulled from the
input with bilinear sampling and out-of-bounds fill 0. With an explicit
rng the operation is pure, so parallel loaders stay reproducible by
giving each sample its own seeded stream.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .image import MultiChannelSample


@dataclass
class AugmentConfig:
    shear_max: float = 0.1          # radians
    zoom_range: tuple[float, float] = (0.9, 1.1)
    rotation_max: float = 10.0      # degrees
    shift_max: float = 0.1          # fraction of the image side
    hflip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.zoom_range, list):
            self.zoom_range = tuple(self.zoom_range)
        if self.shear_max < 0 or self.rotation_max < 0 or self.shift_max < 0:
            raise ValueError("augmentation magnitudes must be >= 0")
        lo, hi = self.zoom_range
        if not (0 < lo <= hi):
            raise ValueError("zoom_range must be a positive interval")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ValueError("hflip_prob must be in [0, 1]")


def augment(
    sample: MultiChannelSample, cfg: AugmentConfig, rng: np.random.Generator | None = None
) -> MultiChannelSample:
    """Draw one transform and apply it to every channel of the sample.

    Composition order is fixed: flip, rotate about center, shear, zoom,
    shift. Draw order is fixed too, so a given rng state always yields
    the same output.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    angle = math.radians(rng.uniform(-cfg.rotation_max, cfg.rotation_max))
    shear = rng.uniform(-cfg.shear_max, cfg.shear_max)
    zoom = rng.uniform(cfg.zoom_range[0], cfg.zoom_range[1])
    _, side_y, side_x = sample.channels.shape
    dx = rng.uniform(-cfg.shift_max, cfg.shift_max) * side_x
    dy = rng.uniform(-cfg.shift_max, cfg.shift_max) * side_y
    flip = rng.random() < cfg.hflip_prob

    matrix = _compose_transform(side_x, side_y, flip, angle, shear, zoom, dx, dy)
    if np.array_equal(matrix, np.eye(3)):
        return MultiChannelSample(sample.channels.copy(), sample.label)

    inverse = np.linalg.inv(matrix)
    warped = _warp_bilinear(sample.channels, inverse)
    return MultiChannelSample(np.clip(warped, 0.0, 1.0), sample.label)


def _compose_transform(w, h, flip, angle, shear, zoom, dx, dy) -> np.ndarray:
    """Build the forward 3x3 affine (x, y, 1) -> (x', y', 1), all about center."""
    cx = (w - 1) / 2.0
    cy = (h - 1) / 2.0
    to_center = np.array([[1, 0, -cx], [0, 1, -cy], [0, 0, 1]], dtype=np.float64)
    from_center = np.array([[1, 0, cx], [0, 1, cy], [0, 0, 1]], dtype=np.float64)

    flip_m = np.diag([-1.0 if flip else 1.0, 1.0, 1.0])
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    rot_m = np.array([[cos_a, -sin_a, 0], [sin_a, cos_a, 0], [0, 0, 1]])
    shear_m = np.array([[1, math.tan(shear), 0], [0, 1, 0], [0, 0, 1]])
    zoom_m = np.diag([zoom, zoom, 1.0])
    shift_m = np.array([[1, 0, dx], [0, 1, dy], [0, 0, 1]], dtype=np.float64)

    centered = zoom_m @ shear_m @ rot_m @ flip_m
    return shift_m @ from_center @ centered @ to_center


def _warp_bilinear(stack: np.ndarray, inverse: np.ndarray) -> np.ndarray:
    """Inverse-map output pixels into the source planes; outside -> 0.

    One coordinate grid serves every channel, so the same transform is
    guaranteed per channel by construction. A one-pixel zero border
    stands in for the out-of-bounds fill: clamped coordinates outside
    the source land on zeros, which is exactly the zero-fill semantics.
    """
    c, h, w = stack.shape
    xs = np.arange(w, dtype=np.float64)[None, :]
    ys = np.arange(h, dtype=np.float64)[:, None]
    src_x = inverse[0, 0] * xs + inverse[0, 1] * ys + inverse[0, 2]
    src_y = inverse[1, 0] * xs + inverse[1, 1] * ys + inverse[1, 2]

    x0 = np.floor(src_x).astype(np.int64)
    y0 = np.floor(src_y).astype(np.int64)
    fx = src_x - x0
    fy = src_y - y0

    padded = np.zeros((c, h + 2, w + 2))
    padded[:, 1:-1, 1:-1] = stack
    x1 = np.clip(x0 + 2, 0, w + 1)
    x0 = np.clip(x0 + 1, 0, w + 1)
    y1 = np.clip(y0 + 2, 0, h + 1)
    y0 = np.clip(y0 + 1, 0, h + 1)

    out = (1 - fx) * (1 - fy) * padded[:, y0, x0]
    out += fx * (1 - fy) * padded[:, y0, x1]
    out += (1 - fx) * fy * padded[:, y1, x0]
    out += fx * fy * padded[:, y1, x1]
    return out
