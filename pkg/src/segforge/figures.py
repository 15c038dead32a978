"""Figure rendering for the report paths (PNG files next to the CSVs)."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402

from .preprocess import Histogram  # noqa: E402


def save_histogram_png(hist: Histogram, path, title: str, xlabel: str) -> None:
    fig, ax = plt.subplots(figsize=(7, 4))
    edges = hist.bin_edges()
    ax.bar(edges[:-1], hist.counts, width=hist.bin_width, align="edge", color="#4878a8")
    ax.set_xlabel(xlabel)
    ax.set_ylabel("count")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_training_curves_png(history, path) -> None:
    epochs = [r.epoch for r in history.records]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, [r.train_loss for r in history.records], label="train loss")
    ax1.plot(epochs, [r.val_loss for r in history.records], label="val loss")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.legend()
    ax1.set_title("Loss")
    ax2.plot(epochs, [r.val_accuracy for r in history.records], label="val accuracy")
    ax2.plot(epochs, [r.val_dice for r in history.records], label="val Dice")
    ax2.set_xlabel("epoch")
    ax2.set_ylim(0, 1.02)
    ax2.legend()
    ax2.set_title("Validation accuracy / Dice")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_roc_png(curve, auc: float, path) -> None:
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot([f for f, _ in curve], [t for _, t in curve], color="#a84848")
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="gray")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"ROC (AUC = {auc:.4f})")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_compare_png(names, a_vals, b_vals, label_a, label_b, path) -> None:
    import numpy as np

    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(max(6, 0.8 * len(names)), 4))
    ax.bar(x - 0.2, [v if v is not None else 0.0 for v in a_vals], width=0.4, label=label_a)
    ax.bar(x + 0.2, [v if v is not None else 0.0 for v in b_vals], width=0.4, label=label_b)
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
    ax.legend()
    ax.set_title("report comparison")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
