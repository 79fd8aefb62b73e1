"""Chest X-ray CAD pipeline at desk scale.

Preprocessing (diaphragm removal, bilateral filter, histogram
equalization, three-channel composition), a from-scratch micro CNN with
frozen-block transfer learning, stratified splitting, augmentation, and
the full evaluation suite (classification report, Cohen's kappa, binary
collapse, Wald interval).
"""

from .augment import AugmentConfig, augment
from .data import (
    ClassLabel,
    Manifest,
    ManifestRecord,
    SplitResult,
    generate_phantom,
    load_manifest,
    phantom_regions,
    stratified_split,
)
from .errors import DataError, NumericalError
from .image import (
    BinaryMask,
    GrayImage,
    MultiChannelSample,
    intensity_range,
    load_image,
    resize_bilinear,
    save_image,
)
from .metrics import (
    BinaryCounts,
    BinaryStats,
    ClassificationReport,
    ConfusionMatrix3,
    binary_stats,
    cohens_kappa,
    collapse_binary,
    confusion,
    full_report,
    macro_avg,
    overall_accuracy,
    wald_ci,
    weighted_avg,
)
from .preprocess import (
    PreprocessConfig,
    PreprocessOutput,
    bilateral_filter,
    compose_sample,
    hist_equalize,
    largest_component,
    morph_clean,
    preprocess_full,
    read_sample,
    remove_diaphragm,
    run_stages,
    threshold_segment,
    write_sample,
)

__version__ = "0.1.0"
