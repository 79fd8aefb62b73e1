"""Grayscale image container, file I/O, and elementary raster operations.

Intensities are kept as float64 in [0, 1] everywhere inside the pipeline;
quantization happens only when reading or writing files. Supported file
formats are binary PGM (P5, maxval 255 or 65535) and grayscale PNG (8 or
16 bit).
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import DataError

SAMPLE_SIZE = 224


@dataclass
class GrayImage:
    """Single-channel raster, row-major float64 intensities in [0, 1]."""

    data: np.ndarray
    source_depth: int = 8

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2 or self.data.size == 0:
            raise ValueError("image data must be a nonempty 2-D array")
        if self.source_depth not in (8, 16):
            raise ValueError(f"source_depth must be 8 or 16, got {self.source_depth}")
        if not np.isfinite(self.data).all():
            raise ValueError("image intensities must be finite")
        lo = float(self.data.min())
        hi = float(self.data.max())
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities outside [0, 1]: min={lo}, max={hi}")

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]


@dataclass
class BinaryMask:
    """Boolean raster, dimensions matching the image it was derived from."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)
        if self.bits.ndim != 2 or self.bits.size == 0:
            raise ValueError("mask bits must be a nonempty 2-D array")

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def empty_like(cls, img: GrayImage) -> "BinaryMask":
        return cls(np.zeros((img.height, img.width), dtype=bool))


@dataclass
class MultiChannelSample:
    """Three 224x224 planes stacked (3, 224, 224), plus an optional label."""

    channels: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.channels = np.asarray(self.channels, dtype=np.float64)
        if self.channels.shape != (3, SAMPLE_SIZE, SAMPLE_SIZE):
            raise ValueError(
                f"sample must be 3x{SAMPLE_SIZE}x{SAMPLE_SIZE}, got {self.channels.shape}"
            )
        if self.label is not None and self.label not in (0, 1, 2):
            raise ValueError(f"label must be 0, 1, or 2, got {self.label}")


def load_image(path) -> GrayImage:
    """Load a grayscale PGM or PNG file, normalizing intensities to [0, 1]."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise DataError(f"unreadable image: no such file: {path}")
    ext = os.path.splitext(path)[1].lower()
    if ext == ".pgm":
        return _load_pgm(path)
    if ext == ".png":
        return _load_png(path)
    raise DataError(f"unsupported image format: {path} (expected .pgm or .png)")


def save_image(img: GrayImage, path, depth: int | None = None) -> None:
    """Write a GrayImage as PGM or PNG, quantizing to `depth` bits.

    Depth defaults to the image's source_depth. Round-trip error is at
    most one quantization step of the chosen depth.
    """
    path = os.fspath(path)
    depth = img.source_depth if depth is None else depth
    if depth not in (8, 16):
        raise ValueError(f"depth must be 8 or 16, got {depth}")
    maxval = (1 << depth) - 1
    quantized = np.rint(img.data * maxval).astype(np.uint16 if depth == 16 else np.uint8)
    ext = os.path.splitext(path)[1].lower()
    try:
        if ext == ".pgm":
            _save_pgm(quantized, maxval, path)
        elif ext == ".png":
            Image.fromarray(quantized).save(path, format="PNG")
        else:
            raise DataError(f"unsupported image format: {path} (expected .pgm or .png)")
    except OSError as exc:
        raise DataError(f"cannot write image {path}: {exc}") from exc


def resize_bilinear(img: GrayImage, width: int, height: int) -> GrayImage:
    """Resize with bilinear interpolation, half-pixel-center convention.

    Output pixel (i, j) samples the input at
    x = (j + 0.5) * w_in / w_out - 0.5, and likewise for y; sample
    coordinates are clamped to the input grid, so constants are preserved
    exactly and output values never leave the input range.
    """
    if width <= 0 or height <= 0:
        raise ValueError(f"target dimensions must be positive, got {width}x{height}")
    src = img.data
    h_in, w_in = src.shape
    if (width, height) == (w_in, h_in):
        return GrayImage(src.copy(), img.source_depth)

    x = (np.arange(width) + 0.5) * (w_in / width) - 0.5
    y = (np.arange(height) + 0.5) * (h_in / height) - 0.5
    x = np.clip(x, 0.0, w_in - 1.0)
    y = np.clip(y, 0.0, h_in - 1.0)

    x0 = np.floor(x).astype(np.intp)
    y0 = np.floor(y).astype(np.intp)
    x1 = np.minimum(x0 + 1, w_in - 1)
    y1 = np.minimum(y0 + 1, h_in - 1)
    fx = x - x0
    fy = y - y0

    top = src[y0][:, x0] * (1 - fx) + src[y0][:, x1] * fx
    bot = src[y1][:, x0] * (1 - fx) + src[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bot * fy[:, None]
    return GrayImage(np.clip(out, 0.0, 1.0), img.source_depth)


def intensity_range(img: GrayImage) -> tuple[float, float]:
    """Return (v_min, v_max) over all pixels."""
    return float(img.data.min()), float(img.data.max())


def _load_png(path) -> GrayImage:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc
    if mode == "L":
        depth, maxval = 8, 255
    elif mode in ("I;16", "I;16B", "I"):
        depth, maxval = 16, 65535
    else:
        raise DataError(f"unsupported PNG mode {mode!r} in {path}: grayscale only")
    if arr.ndim != 2 or arr.size == 0:
        raise DataError(f"unreadable image {path}: empty or non-2D pixel data")
    return GrayImage(arr.astype(np.float64) / maxval, depth)


def _load_pgm(path) -> GrayImage:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        magic, tokens, offset = _pgm_header(raw)
    except (ValueError, IndexError) as exc:
        raise DataError(f"unreadable PGM {path}: {exc}") from exc
    if magic != b"P5":
        raise DataError(f"unsupported PGM magic {magic!r} in {path}: binary P5 only")
    width, height, maxval = tokens
    if width <= 0 or height <= 0:
        raise DataError(f"unreadable PGM {path}: zero-dimension image")
    if maxval == 255:
        dtype, depth = np.dtype(np.uint8), 8
    elif maxval == 65535:
        dtype, depth = np.dtype(">u2"), 16  # 16-bit PGM samples are big-endian
    else:
        raise DataError(f"unsupported PGM maxval {maxval} in {path}")
    need = width * height * dtype.itemsize
    pixels = raw[offset : offset + need]
    if len(pixels) < need:
        raise DataError(f"unreadable PGM {path}: truncated pixel data")
    arr = np.frombuffer(pixels, dtype=dtype).reshape(height, width)
    return GrayImage(arr.astype(np.float64) / maxval, depth)


def _pgm_header(raw: bytes) -> tuple[bytes, list[int], int]:
    """Parse 'P5 <w> <h> <maxval>' allowing whitespace and # comments."""
    pos = 0

    def token():
        nonlocal pos
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] not in (0x0A, 0x0D):
                pos += 1
            return token()
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        return raw[start:pos]

    magic = token()
    fields = [int(token()) for _ in range(3)]
    pos += 1  # single whitespace byte after maxval precedes the raster
    return magic, fields, pos


def _save_pgm(quantized: np.ndarray, maxval: int, path) -> None:
    header = f"P5\n{quantized.shape[1]} {quantized.shape[0]}\n{maxval}\n".encode("ascii")
    body = quantized.astype(">u2").tobytes() if maxval > 255 else quantized.tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body)
