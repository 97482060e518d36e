"""Report figures: mel images, training curves, grade histograms.

Everything renders through the Agg backend straight to files; no display
is ever required.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)
import numpy as np


def save_mel_image(db_matrix: np.ndarray, path: str, *, title: str = "",
                   sample_rate: int = 22050, hop: int = 512,
                   floor_db: float = -80.0) -> None:
    """Render a dB-scale (or dequantized) mel matrix as an image file."""
    fig, ax = plt.subplots(figsize=(10, 4))
    im = ax.imshow(np.asarray(db_matrix, dtype=np.float64), origin="lower",
                   aspect="auto", cmap="magma", vmin=floor_db, vmax=0.0,
                   extent=(0, db_matrix.shape[1] * hop / sample_rate,
                           0, db_matrix.shape[0]))
    ax.set_xlabel("time (s)")
    ax.set_ylabel("mel band")
    if title:
        ax.set_title(title)
    fig.colorbar(im, ax=ax, label="dB")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_loss_curves(records, path: str, *, title: str = "training loss") -> None:
    """Loss trajectories per step from TrainLogRecord rows."""
    steps = [r.step for r in records]
    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(9, 6), sharex=True)
    ax1.plot(steps, [r.loss_G for r in records], label="generator", lw=0.8)
    ax1.plot(steps, [r.loss_D_X for r in records], label="discriminator X", lw=0.8)
    ax1.plot(steps, [r.loss_D_Y for r in records], label="discriminator Y", lw=0.8)
    ax1.set_ylabel("loss")
    ax1.legend(loc="upper right")
    ax1.set_title(title)
    ax2.plot(steps, [r.cycle_X for r in records], label="cycle X", lw=0.8)
    ax2.plot(steps, [r.cycle_Y for r in records], label="cycle Y", lw=0.8)
    ax2.set_xlabel("step")
    ax2.set_ylabel("reconstruction")
    ax2.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_bucket_histogram(hist: dict, path: str, *, title: str = "grade buckets") -> None:
    """Bar chart of per-bucket sample counts."""
    buckets = sorted(hist.keys(), key=int)
    counts = [hist[b] for b in buckets]
    labels = [b.label for b in buckets]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(range(len(buckets)), counts, color="#726da8")
    ax.set_xticks(range(len(buckets)), labels)
    ax.set_xlabel("grade bucket")
    ax.set_ylabel("samples")
    ax.set_title(title)
    for i, c in enumerate(counts):
        ax.text(i, c, str(c), ha="center", va="bottom")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_pearson_matrix(raters: list, matrix: np.ndarray, path: str) -> None:
    """Inter-rater agreement heat map."""
    fig, ax = plt.subplots(figsize=(5, 4))
    im = ax.imshow(matrix, vmin=-1.0, vmax=1.0, cmap="RdBu_r")
    ax.set_xticks(range(len(raters)), raters, rotation=45, ha="right")
    ax.set_yticks(range(len(raters)), raters)
    for i in range(len(raters)):
        for j in range(len(raters)):
            ax.text(j, i, f"{matrix[i, j]:.2f}", ha="center", va="center",
                    fontsize=8)
    fig.colorbar(im, ax=ax, label="Pearson r")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
