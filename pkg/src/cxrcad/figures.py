"""Matplotlib figure rendering for the report path.

Every figure is written straight to a file (Agg backend, no display);
the CLI drops them next to the text and CSV outputs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .data import ClassLabel
from .metrics import ConfusionMatrix3
from .nn import EpochStats

_CLASS_NAMES = [label.display_name for label in ClassLabel]


def confusion_matrix_figure(matrix: ConfusionMatrix3, path, title: str = "Confusion matrix") -> None:
    """Heatmap of counts, rows = truth, columns = predicted."""
    counts = matrix.counts
    fig, ax = plt.subplots(figsize=(5.0, 4.2))
    im = ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(3), _CLASS_NAMES, rotation=20, ha="right")
    ax.set_yticks(range(3), _CLASS_NAMES)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    ax.set_title(title)
    threshold = counts.max() / 2.0
    for i in range(3):
        for j in range(3):
            ax.text(
                j,
                i,
                str(int(counts[i, j])),
                ha="center",
                va="center",
                color="white" if counts[i, j] > threshold else "black",
            )
    fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def training_curves_figure(history: list[EpochStats], path) -> None:
    """Loss and accuracy trends for train and validation."""
    epochs = [row.epoch for row in history]
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9.0, 3.6))
    ax_loss.plot(epochs, [row.train_loss for row in history], label="train")
    ax_loss.plot(epochs, [row.val_loss for row in history], label="validation")
    ax_loss.set_xlabel("Epoch")
    ax_loss.set_ylabel("Cross-entropy loss")
    ax_loss.legend()
    ax_acc.plot(epochs, [row.train_acc for row in history], label="train")
    ax_acc.plot(epochs, [row.val_acc for row in history], label="validation")
    ax_acc.set_xlabel("Epoch")
    ax_acc.set_ylabel("Accuracy")
    ax_acc.set_ylim(0.0, 1.02)
    ax_acc.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def ablation_figure(rows: list[dict], path) -> None:
    """Accuracy per ablation mode with CI whiskers and kappa annotations."""
    modes = [row["mode"] for row in rows]
    accuracy = np.array([row["accuracy"] for row in rows])
    ci_low = np.array([row["ci_low"] for row in rows])
    ci_high = np.array([row["ci_high"] for row in rows])
    err = np.vstack([accuracy - ci_low, ci_high - accuracy])

    fig, ax = plt.subplots(figsize=(5.4, 3.8))
    bars = ax.bar(modes, accuracy, yerr=err, capsize=4, color="#6baed6")
    for bar, row in zip(bars, rows):
        ax.annotate(
            f"κ={row['kappa']:.2f}",
            (bar.get_x() + bar.get_width() / 2, bar.get_height()),
            textcoords="offset points",
            xytext=(0, 4),
            ha="center",
            fontsize=9,
        )
    ax.set_ylabel("Test accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Ablation of the preprocessing chain")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
