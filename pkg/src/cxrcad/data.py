"""Manifest ingestion, stratified splitting, and synthetic phantom corpus.

Phantoms are deterministic chest-like test images: mid-gray background,
two darker elliptical lung fields with class-dependent texture, and a
bright bottom band standing in for the diaphragm. They let the whole
pipeline run at desk scale without any clinical data.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import DataError
from .image import BinaryMask, GrayImage


class ClassLabel(IntEnum):
    NORMAL = 0
    PNEUMONIA = 1
    COVID19 = 2

    @classmethod
    def from_name(cls, name: str) -> "ClassLabel":
        try:
            return _NAME_TO_LABEL[name.strip().lower()]
        except KeyError:
            raise DataError(f"unknown label {name!r}, expected one of {sorted(_NAME_TO_LABEL)}")

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]


_NAME_TO_LABEL = {
    "normal": ClassLabel.NORMAL,
    "pneumonia": ClassLabel.PNEUMONIA,
    "covid19": ClassLabel.COVID19,
}

_DISPLAY_NAMES = {
    ClassLabel.NORMAL: "Normal",
    ClassLabel.PNEUMONIA: "Other Pneumonia",
    ClassLabel.COVID19: "COVID19",
}

LABEL_NAMES = ("normal", "pneumonia", "covid19")


@dataclass(frozen=True)
class ManifestRecord:
    path: str
    label: ClassLabel


@dataclass
class Manifest:
    records: list[ManifestRecord]

    def by_class(self) -> dict[ClassLabel, list[ManifestRecord]]:
        groups: dict[ClassLabel, list[ManifestRecord]] = {label: [] for label in ClassLabel}
        for record in self.records:
            groups[record.label].append(record)
        return groups


@dataclass
class SplitResult:
    train: list[ManifestRecord]
    validation: list[ManifestRecord]
    test: list[ManifestRecord]
    seed: int


def load_manifest(path) -> Manifest:
    """Parse a manifest CSV with header 'path,label'."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from exc
    rows = [row for row in rows if row and any(cell.strip() for cell in row)]
    if not rows:
        raise DataError(f"empty manifest: {path}")
    if [cell.strip().lower() for cell in rows[0]] != ["path", "label"]:
        raise DataError(f"manifest {path} must start with header 'path,label'")
    if len(rows) == 1:
        raise DataError(f"manifest {path} has a header but no records")

    records = []
    seen = set()
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise DataError(f"manifest {path} line {lineno}: expected 'path,label'")
        rec_path = row[0].strip()
        if not rec_path:
            raise DataError(f"manifest {path} line {lineno}: empty path")
        if rec_path in seen:
            raise DataError(f"manifest {path} line {lineno}: duplicate path {rec_path!r}")
        seen.add(rec_path)
        records.append(ManifestRecord(rec_path, ClassLabel.from_name(row[1])))
    return Manifest(records)


def save_manifest(manifest: Manifest, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("path,label\n")
        for record in manifest.records:
            fh.write(f"{record.path},{record.label.name.lower()}\n")


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def stratified_split(
    manifest: Manifest, test_frac: float, val_frac: float, seed: int
) -> SplitResult:
    """Shuffle each class with the seed and carve test, then validation.

    Per class: test count = round-half-up(test_frac * n), validation
    count = round-half-up(val_frac * remaining train size). Deterministic
    for a fixed seed; partitions are disjoint and exhaustive.
    """
    if not 0.0 < test_frac < 1.0 or not 0.0 < val_frac < 1.0:
        raise ValueError("fractions must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train: list[ManifestRecord] = []
    validation: list[ManifestRecord] = []
    test: list[ManifestRecord] = []
    for label in ClassLabel:
        records = manifest.by_class()[label]
        n = len(records)
        n_test = round_half_up(test_frac * n)
        n_val = round_half_up(val_frac * (n - n_test))
        n_train = n - n_test - n_val
        if n_test < 1 or n_val < 1 or n_train < 1:
            raise DataError(
                f"class {label.name.lower()} has {n} records, too few to "
                f"populate train/validation/test"
            )
        order = rng.permutation(n)
        shuffled = [records[i] for i in order]
        test.extend(shuffled[:n_test])
        validation.extend(shuffled[n_test : n_test + n_val])
        train.extend(shuffled[n_test + n_val :])
    return SplitResult(train, validation, test, seed)


def generate_phantom(label: ClassLabel, seed: int, size: int = 64) -> GrayImage:
    """Deterministic chest-like phantom for one class.

    Geometry is fixed by `size` (see phantom_regions); texture inside the
    lung fields depends on the class: Normal lungs are smooth, Pneumonia
    lungs carry coarse blotches, Covid19 lungs carry fine speckle in the
    peripheral ring. The bottom band holds the global maximum so the
    threshold step always finds it.
    """
    if size < 32:
        raise ValueError("phantom size must be >= 32")
    rng = np.random.default_rng((int(label), int(seed), int(size)))
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)

    img = 0.40 + 0.04 * (ys / size)  # gentle vertical falloff
    lungs, periphery = _lung_fields(size)
    img[lungs] = 0.22

    if label == ClassLabel.NORMAL:
        img[lungs] += rng.normal(0.0, 0.003, size=int(lungs.sum()))
    elif label == ClassLabel.PNEUMONIA:
        img += _coarse_blotches(size, lungs, rng)
    else:
        speckle = rng.uniform(-0.20, 0.20, size=(size, size))
        img[periphery] += speckle[periphery]

    band = _band_rows(size)
    img[band:, :] = 0.97
    return GrayImage(np.clip(img, 0.0, 1.0))


def phantom_regions(size: int) -> tuple[BinaryMask, BinaryMask]:
    """Return (band_mask, lung_mask) for the phantom geometry at `size`."""
    band = np.zeros((size, size), dtype=bool)
    band[_band_rows(size) :, :] = True
    lungs, _ = _lung_fields(size)
    return BinaryMask(band), BinaryMask(lungs)


def _band_rows(size: int) -> int:
    return int(math.floor(0.8 * size))


def _lung_fields(size: int) -> tuple[np.ndarray, np.ndarray]:
    """Boolean masks for the two lung ellipses and their peripheral ring."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    cy = 0.42 * size
    ax_x = 0.15 * size
    ax_y = 0.24 * size
    lungs = np.zeros((size, size), dtype=bool)
    inner = np.zeros((size, size), dtype=bool)
    for cx in (0.30 * size, 0.70 * size):
        r2 = ((xs - cx) / ax_x) ** 2 + ((ys - cy) / ax_y) ** 2
        lungs |= r2 <= 1.0
        inner |= r2 <= 0.36  # 60% of the radius
    return lungs, lungs & ~inner


def _coarse_blotches(size: int, lungs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Sum of broad Gaussian bumps confined to the lung fields."""
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    bumps = np.zeros((size, size))
    lung_coords = np.argwhere(lungs)
    for _ in range(8):
        cy, cx = lung_coords[rng.integers(len(lung_coords))]
        sigma = 0.06 * size * rng.uniform(0.8, 1.4)
        amp = rng.uniform(0.20, 0.32)
        bumps += amp * np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * sigma * sigma))
    bumps[~lungs] = 0.0
    return bumps
