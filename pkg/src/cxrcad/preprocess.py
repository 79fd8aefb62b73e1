"""Preprocessing chain: diaphragm removal, bilateral filter, equalization.

The chain segments the brightest region of the radiograph by thresholding
at a fraction of the intensity range, cleans the mask with morphology,
deletes the largest bright connected component (the diaphragm), then
derives a noise-reduced plane (bilateral filter) and a contrast-normalized
plane (histogram equalization) from the cleaned image. The three planes
are composed into one 3x224x224 sample.
"""

from __future__ import annotations

import struct
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .image import SAMPLE_SIZE, BinaryMask, GrayImage, MultiChannelSample, resize_bilinear

MODES = ("simple", "filter-base", "full")

MCS_MAGIC = b"CXR1"
MCS_UNLABELED = 255


class EmptyMaskError(ValueError):
    """Raised when a mask has no foreground pixel; callers skip removal."""


@dataclass
class PreprocessConfig:
    threshold_fraction: float = 0.9
    morph_radius: int = 1
    connectivity: int = 8
    bilateral_radius: int = 5
    sigma_space: float = 3.0
    sigma_range: float = 0.1
    equalize_bins: int = 256
    max_blob_fraction: float = 0.6
    fill_value_policy: str = "image-minimum"

    def __post_init__(self):
        if not 0.0 < self.threshold_fraction < 1.0:
            raise ValueError("threshold_fraction must be in (0, 1)")
        if self.morph_radius < 1 or self.bilateral_radius < 1:
            raise ValueError("radii must be >= 1")
        if self.connectivity not in (4, 8):
            raise ValueError("connectivity must be 4 or 8")
        if self.sigma_space <= 0 or self.sigma_range <= 0:
            raise ValueError("sigmas must be > 0")
        if self.equalize_bins < 2:
            raise ValueError("equalize_bins must be >= 2")
        if not 0.0 < self.max_blob_fraction <= 1.0:
            raise ValueError("max_blob_fraction must be in (0, 1]")
        if self.fill_value_policy not in ("image-minimum", "zero"):
            raise ValueError("fill_value_policy must be 'image-minimum' or 'zero'")


@dataclass
class PreprocessOutput:
    """Native-resolution stage results: the three planes plus the blob mask."""

    i_p: GrayImage
    i_b: GrayImage
    i_eq: GrayImage
    diaphragm_mask: BinaryMask
    removed: bool


def threshold_segment(img: GrayImage, fraction: float) -> BinaryMask:
    """Mark pixels >= T as foreground, T = v_min + fraction * (v_max - v_min)."""
    if not 0.0 < fraction < 1.0:
        raise ValueError("fraction must be in (0, 1)")
    v_min = img.data.min()
    v_max = img.data.max()
    threshold = v_min + fraction * (v_max - v_min)
    return BinaryMask(img.data >= threshold)


def morph_clean(mask: BinaryMask, radius: int) -> BinaryMask:
    """Apply open, close, then dilate with a (2*radius+1)^2 square element.

    Out-of-bounds neighborhoods count as background for both erosion and
    dilation.
    """
    bits = mask.bits
    opened = _dilate(_erode(bits, radius), radius)
    closed = _erode(_dilate(opened, radius), radius)
    return BinaryMask(_dilate(closed, radius))


def largest_component(mask: BinaryMask, connectivity: int = 8) -> tuple[BinaryMask, int]:
    """Keep only the largest connected foreground component.

    Ties are broken toward the component whose first pixel has the
    smallest row-major index. Raises EmptyMaskError when there is no
    foreground at all.
    """
    if connectivity not in (4, 8):
        raise ValueError("connectivity must be 4 or 8")
    bits = mask.bits
    if not bits.any():
        raise EmptyMaskError("mask has no foreground")

    if connectivity == 4:
        offsets = ((-1, 0), (1, 0), (0, -1), (0, 1))
    else:
        offsets = tuple((dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0))

    h, w = bits.shape
    labels = np.zeros((h, w), dtype=np.int32)
    sizes = [0]  # label 0 = background
    # seeds iterate in row-major order, so earlier labels have earlier first pixels
    for y, x in np.argwhere(bits):
        if labels[y, x]:
            continue
        label = len(sizes)
        sizes.append(0)
        queue = deque([(int(y), int(x))])
        labels[y, x] = label
        count = 0
        while queue:
            cy, cx = queue.popleft()
            count += 1
            for dy, dx in offsets:
                ny, nx = cy + dy, cx + dx
                if 0 <= ny < h and 0 <= nx < w and bits[ny, nx] and not labels[ny, nx]:
                    labels[ny, nx] = label
                    queue.append((ny, nx))
        sizes[label] = count

    best = int(np.argmax(sizes))  # argmax keeps the earliest label on ties
    return BinaryMask(labels == best), sizes[best]


def remove_diaphragm(
    img: GrayImage, cfg: PreprocessConfig
) -> tuple[GrayImage, BinaryMask, bool]:
    """Blob discovery: threshold, clean, select the largest bright component.

    The component is blanked (fill value per cfg.fill_value_policy) unless
    it covers more than max_blob_fraction of the image, in which case the
    image is returned unchanged. Returns (image, mask, removed).
    """
    segmented = threshold_segment(img, cfg.threshold_fraction)
    cleaned = morph_clean(segmented, cfg.morph_radius)
    try:
        blob, area = largest_component(cleaned, cfg.connectivity)
    except EmptyMaskError:
        return img, BinaryMask.empty_like(img), False
    if area > cfg.max_blob_fraction * img.width * img.height:
        return img, BinaryMask.empty_like(img), False

    fill = 0.0 if cfg.fill_value_policy == "zero" else float(img.data.min())
    out = img.data.copy()
    out[blob.bits] = fill
    return GrayImage(out, img.source_depth), blob, True


def bilateral_filter(
    img: GrayImage, radius: int, sigma_space: float, sigma_range: float
) -> GrayImage:
    """Edge-preserving smoother over a (2*radius+1)^2 window, border-clipped.

    Each output pixel is the weighted mean of its window, with weight
    exp(-d^2 / (2*sigma_space^2)) * exp(-(I(p)-I(q))^2 / (2*sigma_range^2))
    for a neighbor at spatial distance d. The window shrinks at borders
    rather than padding, so the output is always a convex combination of
    real pixels.
    """
    if radius < 1:
        raise ValueError("radius must be >= 1")
    if sigma_space <= 0 or sigma_range <= 0:
        raise ValueError("sigmas must be > 0")
    data = img.data
    h, w = data.shape
    inv2ss = 1.0 / (2.0 * sigma_space * sigma_space)
    inv2sr = 1.0 / (2.0 * sigma_range * sigma_range)
    num = np.zeros_like(data)
    den = np.zeros_like(data)
    for dy in range(-radius, radius + 1):
        py = slice(max(0, -dy), h - max(0, dy))
        qy = slice(max(0, dy), h - max(0, -dy))
        for dx in range(-radius, radius + 1):
            px = slice(max(0, -dx), w - max(0, dx))
            qx = slice(max(0, dx), w - max(0, -dx))
            space_w = np.exp(-(dy * dy + dx * dx) * inv2ss)
            diff = data[py, px] - data[qy, qx]
            weight = space_w * np.exp(-(diff * diff) * inv2sr)
            num[py, px] += weight * data[qy, qx]
            den[py, px] += weight
    return GrayImage(np.clip(num / den, 0.0, 1.0), img.source_depth)


def hist_equalize(
    img: GrayImage, exclude: BinaryMask | None = None, bins: int = 256
) -> GrayImage:
    """Histogram equalization with cdf-min normalization.

    Pixels under `exclude` are left out of the histogram but are still
    remapped through the resulting lookup table. Level k maps to
    (cdf(k) - cdf_min) / (N - cdf_min) where cdf_min is the smallest
    nonzero cdf value; a single-level histogram therefore maps to 0.
    """
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if exclude is not None and exclude.bits.shape != img.data.shape:
        raise ValueError("exclude mask dimensions must match the image")
    levels = np.minimum((img.data * bins).astype(np.int64), bins - 1)
    included = levels if exclude is None else levels[~exclude.bits]
    if included.size == 0:
        raise DataError("empty histogram: every pixel is excluded")
    hist = np.bincount(included.ravel(), minlength=bins)
    cdf = np.cumsum(hist)
    total = int(cdf[-1])
    cdf_min = int(cdf[np.argmax(hist > 0)])
    if total == cdf_min:
        lut = np.zeros(bins, dtype=np.float64)
    else:
        lut = np.clip((cdf - cdf_min) / (total - cdf_min), 0.0, 1.0)
    return GrayImage(lut[levels], img.source_depth)


def compose_sample(
    i_p: GrayImage, i_b: GrayImage, i_eq: GrayImage, label: int | None = None
) -> MultiChannelSample:
    """Resize the three planes to 224x224 and stack them in (p, b, eq) order."""
    shapes = {i_p.data.shape, i_b.data.shape, i_eq.data.shape}
    if len(shapes) != 1:
        raise ValueError(f"channel dimension mismatch: {sorted(shapes)}")
    planes = [
        resize_bilinear(plane, SAMPLE_SIZE, SAMPLE_SIZE).data for plane in (i_p, i_b, i_eq)
    ]
    return MultiChannelSample(np.stack(planes), label)


def run_stages(img: GrayImage, cfg: PreprocessConfig, mode: str) -> PreprocessOutput:
    """Run the stage chain for one ablation mode at native resolution.

    simple      -> (I, I, I), untouched
    filter-base -> (I, bilateral(I), equalize(I)), no diaphragm removal
    full        -> remove diaphragm, then both filters applied to I_p
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}, expected one of {MODES}")
    if mode == "simple":
        return PreprocessOutput(img, img, img, BinaryMask.empty_like(img), False)

    if mode == "filter-base":
        base, mask, removed = img, BinaryMask.empty_like(img), False
    else:
        base, mask, removed = remove_diaphragm(img, cfg)

    i_b = bilateral_filter(base, cfg.bilateral_radius, cfg.sigma_space, cfg.sigma_range)
    i_eq = hist_equalize(base, mask if removed else None, cfg.equalize_bins)
    return PreprocessOutput(base, i_b, i_eq, mask, removed)


def preprocess_full(
    img: GrayImage, cfg: PreprocessConfig, mode: str = "full", label: int | None = None
) -> MultiChannelSample:
    """Full per-image preprocessing: stage chain plus 3x224x224 composition."""
    stages = run_stages(img, cfg, mode)
    return compose_sample(stages.i_p, stages.i_b, stages.i_eq, label)


def write_sample(sample: MultiChannelSample, path) -> None:
    """Write the .mcs binary sample format.

    Layout: magic 'CXR1', then u32-LE channels, width, height, label
    (255 = unlabeled), then the planes as row-major float32-LE, one plane
    after another.
    """
    label = MCS_UNLABELED if sample.label is None else sample.label
    header = MCS_MAGIC + struct.pack("<4I", 3, SAMPLE_SIZE, SAMPLE_SIZE, label)
    body = sample.channels.astype("<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)


def read_sample(path) -> MultiChannelSample:
    """Read a .mcs file written by write_sample."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 20 or raw[:4] != MCS_MAGIC:
        raise DataError(f"not a .mcs sample file: {path}")
    channels, width, height, label = struct.unpack("<4I", raw[4:20])
    if (channels, width, height) != (3, SAMPLE_SIZE, SAMPLE_SIZE):
        raise DataError(
            f"unsupported .mcs geometry {channels}x{width}x{height} in {path}"
        )
    need = 3 * SAMPLE_SIZE * SAMPLE_SIZE * 4
    if len(raw) != 20 + need:
        raise DataError(f"truncated .mcs sample: {path}")
    planes = np.frombuffer(raw[20:], dtype="<f4").astype(np.float64)
    planes = np.clip(planes.reshape(3, SAMPLE_SIZE, SAMPLE_SIZE), 0.0, 1.0)
    return MultiChannelSample(planes, None if label == MCS_UNLABELED else int(label))


def _erode(bits: np.ndarray, radius: int) -> np.ndarray:
    h, w = bits.shape
    padded = np.zeros((h + 2 * radius, w + 2 * radius), dtype=bool)
    padded[radius : radius + h, radius : radius + w] = bits
    out = np.ones_like(bits)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out &= padded[dy : dy + h, dx : dx + w]
    return out


def _dilate(bits: np.ndarray, radius: int) -> np.ndarray:
    h, w = bits.shape
    padded = np.zeros((h + 2 * radius, w + 2 * radius), dtype=bool)
    padded[radius : radius + h, radius : radius + w] = bits
    out = np.zeros_like(bits)
    for dy in range(2 * radius + 1):
        for dx in range(2 * radius + 1):
            out |= padded[dy : dy + h, dx : dx + w]
    return out
