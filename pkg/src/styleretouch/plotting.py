"""Figures written next to the CSV/JSON outputs of the command line tools."""

from __future__ import annotations

import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

GOLDEN = (math.sqrt(5) - 1.0) / 2.0


def pretty_plot(width: float = 6, height: float | None = None):
    """A figure/axes pair with readable defaults."""
    height = height or width * GOLDEN
    fig, ax = plt.subplots(figsize=(width, height), facecolor="w")
    ax.tick_params(labelsize=9)
    for side in ("top", "right"):
        ax.spines[side].set_visible(False)
    return fig, ax


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # fixed metadata keeps the PNG bytes reproducible
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_loss_curve(history, path, smooth: int = 50):
    steps = np.array([h[0] for h in history])
    loss = np.array([h[1] for h in history])
    fig, ax = pretty_plot()
    ax.plot(steps, loss, lw=0.5, color="0.7", label="per step")
    if len(loss) >= smooth > 1:
        kernel = np.ones(smooth) / smooth
        ax.plot(steps[smooth - 1:], np.convolve(loss, kernel, mode="valid"), lw=1.5, color="C0",
                label=f"mean of {smooth}")
    ax.set_yscale("log")
    ax.set_xlabel("step")
    ax.set_ylabel("L1 loss")
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_metric_distribution(rows, path):
    """Histograms of per-image PSNR (finite values only) and SSIM."""
    psnrs = [r["psnr"] for r in rows if math.isfinite(r["psnr"])]
    ssims = [r["ssim"] for r in rows]
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3), facecolor="w")
    if psnrs:
        a1.hist(psnrs, bins=20, color="C0")
    else:
        a1.text(0.5, 0.5, "all PSNR = inf", ha="center", va="center", transform=a1.transAxes)
    a1.set_xlabel("PSNR (dB)")
    a2.hist(ssims, bins=20, color="C1")
    a2.set_xlabel("SSIM")
    for ax in (a1, a2):
        ax.set_ylabel("images")
    return _save(fig, path)


def plot_retrieval(neighbors, weights, path):
    """Bar chart of retrieved reference ids with similarity and softmax weight."""
    labels = [str(n.id) for n in neighbors]
    x = np.arange(len(labels))
    fig, ax = pretty_plot(width=max(3.0, 0.8 * len(labels) + 2))
    ax.bar(x - 0.2, [n.similarity for n in neighbors], width=0.4, label="cosine similarity")
    ax.bar(x + 0.2, weights, width=0.4, label="weight")
    ax.set_xticks(x, labels)
    ax.set_xlabel("reference id")
    ax.set_ylim(0, 1.05)
    ax.legend(frameon=False, fontsize=8)
    return _save(fig, path)


def plot_image_strip(images, titles, path):
    n = len(images)
    fig, axes = plt.subplots(1, n, figsize=(1.6 * n + 0.4, 2.0), facecolor="w", squeeze=False)
    for ax, img, title in zip(axes[0], images, titles):
        ax.imshow(np.clip(img, 0, 1), interpolation="nearest")
        ax.set_title(title, fontsize=8)
        ax.axis("off")
    return _save(fig, path)


def plot_lut_curves(lut, path):
    """Neutral-axis response of a baked LUT, one line per output channel."""
    n = lut.shape[0]
    t = np.linspace(0, 1, n)
    diag = lut[np.arange(n), np.arange(n), np.arange(n)]
    fig, ax = pretty_plot(width=4, height=4)
    ax.plot(t, t, ls=":", color="0.5", lw=1)
    for c, color in enumerate(("r", "g", "b")):
        ax.plot(t, diag[:, c], color=color, lw=1.2)
    ax.set_xlabel("input gray level")
    ax.set_ylabel("output")
    return _save(fig, path)
