"""Three-class evaluation: report, kappa, binary collapse, confidence interval.

All rates are kept at full precision internally; rounding happens only in
the display helpers. Quantities with a zero denominator (e.g. precision of
a class that was never predicted) are reported as None ("undefined") and
excluded from averages rather than silently counted as zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

from .data import ClassLabel

_CLASS_ORDER = (ClassLabel.NORMAL, ClassLabel.PNEUMONIA, ClassLabel.COVID19)


@dataclass
class ConfusionMatrix3:
    """3x3 counts, rows = true class, columns = predicted class."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (3, 3):
            raise ValueError(f"confusion matrix must be 3x3, got {self.counts.shape}")
        if (self.counts < 0).any():
            raise ValueError("confusion matrix counts must be nonnegative")
        if self.counts.sum() == 0:
            raise ValueError("confusion matrix must contain at least one count")

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    def row_sums(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def col_sums(self) -> np.ndarray:
        return self.counts.sum(axis=0)


@dataclass
class BinaryCounts:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass
class BinaryStats:
    sensitivity: float | None
    specificity: float | None
    accuracy: float
    recall: float | None
    f1: float | None


@dataclass
class ClassificationReport:
    precision: list[float | None]     # indexed by class code
    recall: list[float | None]
    f1: list[float | None]
    support: list[int]
    accuracy: float
    macro_precision: float | None
    macro_recall: float | None
    macro_f1: float | None
    weighted_precision: float | None
    weighted_recall: float | None
    weighted_f1: float | None
    kappa: float
    ci: tuple[float, float]
    n: int


def confusion(truth, pred) -> ConfusionMatrix3:
    """Count (true, predicted) pairs into a 3x3 matrix."""
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.size == 0:
        raise ValueError("label lists must be nonempty")
    if truth.shape != pred.shape or truth.ndim != 1:
        raise ValueError("truth and prediction lists must be equal-length 1-D")
    if truth.min() < 0 or truth.max() > 2 or pred.min() < 0 or pred.max() > 2:
        raise ValueError("labels must be class codes 0, 1, or 2")
    counts = np.zeros((3, 3), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix3(counts)


def overall_accuracy(m: ConfusionMatrix3) -> float:
    return float(np.trace(m.counts)) / m.n


def per_class_rates(
    m: ConfusionMatrix3,
) -> tuple[list[float | None], list[float | None], list[float | None], list[int]]:
    """Per-class (precision, recall, f1, support); None where undefined."""
    rows = m.row_sums()
    cols = m.col_sums()
    precision: list[float | None] = []
    recall: list[float | None] = []
    f1: list[float | None] = []
    for c in range(3):
        tp = float(m.counts[c, c])
        p = tp / cols[c] if cols[c] else None
        r = tp / rows[c] if rows[c] else None
        if p is None or r is None or (p + r) == 0.0:
            f = None
        else:
            f = 2.0 * p * r / (p + r)
        precision.append(p)
        recall.append(r)
        f1.append(f)
    return precision, recall, f1, [int(s) for s in rows]


def macro_avg(values: list[float | None]) -> float | None:
    """Unweighted mean of the three per-class values, skipping undefined."""
    defined = [v for v in values if v is not None]
    if not defined:
        return None
    if len(defined) < len(values):
        warnings.warn("macro average excludes undefined per-class values")
    return sum(defined) / len(defined)


def weighted_avg(values: list[float | None], supports: list[int]) -> float | None:
    """Support-weighted mean of per-class values, skipping undefined."""
    if sum(supports) == 0:
        raise ValueError("total support must be positive")
    pairs = [(v, s) for v, s in zip(values, supports) if v is not None]
    if not pairs:
        return None
    if len(pairs) < len(values):
        warnings.warn("weighted average excludes undefined per-class values")
    total = sum(s for _, s in pairs)
    if total == 0:
        return None
    return sum(v * s for v, s in pairs) / total


def cohens_kappa(m: ConfusionMatrix3) -> float:
    """Chance-corrected agreement (p_o - p_e) / (1 - p_e)."""
    n = m.n
    p_obs = float(np.trace(m.counts)) / n
    p_exp = float((m.row_sums() * m.col_sums()).sum()) / (n * n)
    if p_exp >= 1.0:
        warnings.warn("kappa undefined for a single-class matrix; returning 0")
        return 0.0
    return (p_obs - p_exp) / (1.0 - p_exp)


def collapse_binary(m: ConfusionMatrix3, positive: ClassLabel) -> BinaryCounts:
    """Collapse to positive-vs-rest counts; conserves the matrix total."""
    c = int(positive)
    tp = int(m.counts[c, c])
    fn = int(m.row_sums()[c]) - tp
    fp = int(m.col_sums()[c]) - tp
    tn = m.n - tp - fn - fp
    return BinaryCounts(tp, fp, tn, fn)


def binary_stats(b: BinaryCounts) -> BinaryStats:
    """Sensitivity, specificity, accuracy, recall, and F1 from raw counts."""
    if b.n == 0:
        raise ValueError("binary counts must be nonempty")
    sens = b.tp / (b.tp + b.fn) if (b.tp + b.fn) else None
    spec = b.tn / (b.tn + b.fp) if (b.tn + b.fp) else None
    acc = (b.tp + b.tn) / b.n
    f1_den = 2 * b.tp + b.fp + b.fn
    f1 = (2 * b.tp) / f1_den if f1_den else None
    return BinaryStats(sens, spec, acc, sens, f1)


def wald_ci(successes: int, n: int, z: float = 1.96) -> tuple[float, float]:
    """Normal-approximation interval for a proportion, clipped to [0, 1]."""
    if n <= 0:
        raise ValueError("n must be positive")
    if not 0 <= successes <= n:
        raise ValueError("successes must be between 0 and n")
    p = successes / n
    half = z * math.sqrt(p * (1.0 - p) / n)
    return max(0.0, p - half), min(1.0, p + half)


def full_report(m: ConfusionMatrix3, z: float = 1.96) -> ClassificationReport:
    """Assemble every three-class quantity from one confusion matrix."""
    precision, recall, f1, support = per_class_rates(m)
    accuracy = overall_accuracy(m)
    correct = int(np.trace(m.counts))
    return ClassificationReport(
        precision=precision,
        recall=recall,
        f1=f1,
        support=support,
        accuracy=accuracy,
        macro_precision=macro_avg(precision),
        macro_recall=macro_avg(recall),
        macro_f1=macro_avg(f1),
        weighted_precision=weighted_avg(precision, support),
        weighted_recall=weighted_avg(recall, support),
        weighted_f1=weighted_avg(f1, support),
        kappa=cohens_kappa(m),
        ci=wald_ci(correct, m.n, z),
        n=m.n,
    )


def round_half_up(x: float, decimals: int) -> float:
    quantum = Decimal(1).scaleb(-decimals)
    return float(Decimal(str(x)).quantize(quantum, rounding=ROUND_HALF_UP))


def fmt_rate(value: float | None) -> str:
    """Rate at the 2-decimal display precision; undefined renders as an em dash."""
    if value is None:
        return "—"
    return f"{round_half_up(value, 2):.2f}"


def fmt_percent(value: float | None) -> str:
    if value is None:
        return "—"
    return f"{round_half_up(100.0 * value, 1):.1f}%"


def fmt_ci(ci: tuple[float, float]) -> str:
    """Display the interval rounded outward to 2 decimals.

    Outward (conservative) rounding never narrows the interval and is the
    one convention that never understates the uncertainty.
    """
    low = math.floor(ci[0] * 100 + 1e-9) / 100
    high = math.ceil(ci[1] * 100 - 1e-9) / 100
    return f"[{low:.2f},{high:.2f}]"


def render_text_report(
    report: ClassificationReport,
    binary: BinaryStats | None = None,
    counts: BinaryCounts | None = None,
    positive: ClassLabel = ClassLabel.COVID19,
    matrix: ConfusionMatrix3 | None = None,
) -> str:
    """Human-readable report mirroring the classification-table layout."""
    rows = [("", "Precision", "Recall", "F1-score", "Support")]
    for label in _CLASS_ORDER:
        c = int(label)
        rows.append(
            (
                label.display_name,
                fmt_rate(report.precision[c]),
                fmt_rate(report.recall[c]),
                fmt_rate(report.f1[c]),
                str(report.support[c]),
            )
        )
    rows.append(("Accuracy", "---", "---", fmt_rate(report.accuracy), str(report.n)))
    rows.append(
        (
            "Macro avg",
            fmt_rate(report.macro_precision),
            fmt_rate(report.macro_recall),
            fmt_rate(report.macro_f1),
            str(report.n),
        )
    )
    rows.append(
        (
            "Weighted avg",
            fmt_rate(report.weighted_precision),
            fmt_rate(report.weighted_recall),
            fmt_rate(report.weighted_f1),
            str(report.n),
        )
    )
    name_w = max(len(r[0]) for r in rows)
    col_w = 10
    lines = [
        rows[0][0].ljust(name_w) + "".join(cell.rjust(col_w) for cell in rows[0][1:])
    ]
    for row in rows[1:]:
        lines.append(row[0].ljust(name_w) + "".join(cell.rjust(col_w) for cell in row[1:]))

    correct = round(report.accuracy * report.n)
    lines.append("")
    lines.append(
        f"Overall accuracy: {fmt_percent(report.accuracy)} ({correct} / {report.n}), "
        f"95% CI {fmt_ci(report.ci)}"
    )
    lines.append(f"Cohen's kappa: {fmt_rate(report.kappa)}")

    if matrix is not None:
        lines.append("")
        lines.append("Confusion matrix (rows = truth, columns = predicted):")
        header = "".ljust(name_w) + "".join(
            l.display_name.rjust(16) for l in _CLASS_ORDER
        )
        lines.append(header)
        for label in _CLASS_ORDER:
            row = matrix.counts[int(label)]
            lines.append(
                label.display_name.ljust(name_w)
                + "".join(str(int(v)).rjust(16) for v in row)
            )

    if binary is not None and counts is not None:
        lines.append("")
        lines.append(f"Binary collapse, positive = {positive.display_name}:")
        lines.append(
            f"  TP={counts.tp}  FP={counts.fp}  TN={counts.tn}  FN={counts.fn}"
        )
        lines.append(
            f"  Sensitivity {fmt_percent(binary.sensitivity)} "
            f"({counts.tp}/{counts.tp + counts.fn}), "
            f"Specificity {fmt_percent(binary.specificity)} "
            f"({counts.tn}/{counts.tn + counts.fp})"
        )
        lines.append(
            f"  Accuracy {fmt_percent(binary.accuracy)} "
            f"({counts.tp + counts.tn}/{counts.n}), F1 {fmt_rate(binary.f1)}"
        )
    return "\n".join(lines) + "\n"


def render_machine_report(
    report: ClassificationReport,
    binary: BinaryStats | None = None,
    counts: BinaryCounts | None = None,
    positive: ClassLabel = ClassLabel.COVID19,
    matrix: ConfusionMatrix3 | None = None,
) -> str:
    """Flat 'name=value' dump with full-precision values."""

    def num(value):
        return "undefined" if value is None else repr(float(value))

    lines = [f"n={report.n}"]
    if matrix is not None:
        for i in range(3):
            for j in range(3):
                lines.append(f"confusion.{i}.{j}={int(matrix.counts[i, j])}")
    for label in _CLASS_ORDER:
        c = int(label)
        key = label.name.lower()
        lines.append(f"precision.{key}={num(report.precision[c])}")
        lines.append(f"recall.{key}={num(report.recall[c])}")
        lines.append(f"f1.{key}={num(report.f1[c])}")
        lines.append(f"support.{key}={report.support[c]}")
    lines.append(f"accuracy={num(report.accuracy)}")
    lines.append(f"kappa={num(report.kappa)}")
    for scope in ("macro", "weighted"):
        for metric in ("precision", "recall", "f1"):
            lines.append(f"{scope}.{metric}={num(getattr(report, f'{scope}_{metric}'))}")
    lines.append(f"ci.low={num(report.ci[0])}")
    lines.append(f"ci.high={num(report.ci[1])}")
    lines.append(f"ci.display={fmt_ci(report.ci)}")
    if binary is not None and counts is not None:
        lines.append(f"binary.positive={positive.name.lower()}")
        for field_name in ("tp", "fp", "tn", "fn"):
            lines.append(f"binary.{field_name}={getattr(counts, field_name)}")
        lines.append(f"binary.sensitivity={num(binary.sensitivity)}")
        lines.append(f"binary.specificity={num(binary.specificity)}")
        lines.append(f"binary.accuracy={num(binary.accuracy)}")
        lines.append(f"binary.recall={num(binary.recall)}")
        lines.append(f"binary.f1={num(binary.f1)}")
    return "\n".join(lines) + "\n"


def parse_machine_report(text: str) -> dict[str, str]:
    """Inverse of render_machine_report: one 'name=value' pair per line."""
    out: dict[str, str] = {}
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        out[key] = value
    return out
