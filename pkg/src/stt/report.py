"""Figure rendering for training runs and grid experiments.

All entry points write PNG files next to the delimited outputs; rendering
uses the Agg backend so reports work in headless batch runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def plot_training_curves(log_lines, path):
    """Loss / accuracy curves from `epoch,lr,train_loss,train_acc,val_acc` lines."""
    rows = [line.split(",") for line in log_lines]
    epochs = [int(r[0]) for r in rows]
    loss = [float(r[2]) for r in rows]
    train_acc = [float(r[3]) for r in rows]
    val_acc = [float(r[4]) for r in rows]

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
    ax1.plot(epochs, loss, color="tab:red")
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("train loss")
    ax1.grid(alpha=0.3)
    ax2.plot(epochs, train_acc, label="train")
    ax2.plot(epochs, val_acc, label="val")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("accuracy")
    ax2.set_ylim(0, 1.02)
    ax2.legend()
    ax2.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_grid_heatmap(results, path):
    """Accuracy heatmap over (train ratio, augmentation factor) cells.

    `results` is a list of (ratio, factor, Metrics) as returned by run_grid.
    """
    ratios = sorted({r for r, _, _ in results})
    factors = sorted({f for _, f, _ in results})
    acc = np.full((len(ratios), len(factors)), np.nan)
    for r, f, m in results:
        acc[ratios.index(r), factors.index(f)] = m.accuracy

    fig, ax = plt.subplots(figsize=(1.6 * len(factors) + 2, 1.2 * len(ratios) + 1.5))
    im = ax.imshow(acc, cmap="viridis", vmin=0.0, vmax=1.0, aspect="auto")
    ax.set_xticks(range(len(factors)), [str(f) for f in factors])
    ax.set_yticks(range(len(ratios)), [f"{r:.0%}" for r in ratios])
    ax.set_xlabel("augmentation factor")
    ax.set_ylabel("train ratio")
    for i in range(len(ratios)):
        for j in range(len(factors)):
            ax.text(j, i, f"{acc[i, j]:.2%}", ha="center", va="center",
                    color="white" if acc[i, j] < 0.6 else "black")
    fig.colorbar(im, ax=ax, label="test accuracy")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_confusion(confusion, path, class_names=None):
    confusion = np.asarray(confusion)
    k = confusion.shape[0]
    fig, ax = plt.subplots(figsize=(max(4, 0.4 * k), max(3.5, 0.4 * k)))
    im = ax.imshow(confusion, cmap="Blues")
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    if class_names is not None and k <= 30:
        ax.set_xticks(range(k), class_names, rotation=90, fontsize=7)
        ax.set_yticks(range(k), class_names, fontsize=7)
    fig.colorbar(im, ax=ax, label="count")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
