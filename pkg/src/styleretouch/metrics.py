"""PSNR and SSIM for images in [0, 1], plus grouped reporting."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .exceptions import ConfigurationError

SSIM_WIN = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ConfigurationError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB with peak 1; ``inf`` for identical images."""
    a, b = _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian(win: int, sigma: float) -> np.ndarray:
    x = np.arange(win) - (win - 1) / 2
    g = np.exp(-(x**2) / (2 * sigma**2))
    return g / g.sum()


def _filter_valid(img: np.ndarray, g: np.ndarray) -> np.ndarray:
    # separable 2D filter over the first two axes, valid positions only
    rows = sliding_window_view(img, len(g), axis=0) @ g
    return sliding_window_view(rows, len(g), axis=1) @ g


def ssim(a: np.ndarray, b: np.ndarray, win: int = SSIM_WIN, sigma: float = SSIM_SIGMA) -> float:
    """Mean SSIM over valid Gaussian-window positions, averaged over channels."""
    a, b = _same_shape(a, b)
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    if a.shape[0] < win or a.shape[1] < win:
        raise ConfigurationError(f"image {a.shape[:2]} smaller than the {win}x{win} SSIM window")
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2
    g = _gaussian(win, sigma)
    mu_a = _filter_valid(a, g)
    mu_b = _filter_valid(b, g)
    var_a = _filter_valid(a * a, g) - mu_a**2
    var_b = _filter_valid(b * b, g) - mu_b**2
    cov = _filter_valid(a * b, g) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    rows: list[dict] = field(default_factory=list)

    def add(self, image_id: str, pred: np.ndarray, gt: np.ndarray, group: str | None = None) -> dict:
        row = {"image_id": image_id, "psnr": psnr(pred, gt), "ssim": ssim(pred, gt)}
        if group is not None:
            row["group"] = group
        self.rows.append(row)
        return row

    def summary(self) -> dict:
        """Means over images; with groups, per-group means are averaged across groups.

        Infinite PSNR rows make the PSNR mean infinite.
        """
        if not self.rows:
            return {"n": 0}
        out = {"n": len(self.rows),
               "psnr_mean": float(np.mean([r["psnr"] for r in self.rows])),
               "ssim_mean": float(np.mean([r["ssim"] for r in self.rows]))}
        if any("group" in r for r in self.rows):
            by = defaultdict(list)
            for r in self.rows:
                by[r.get("group")].append(r)
            groups = {g: {"n": len(rs), "psnr": float(np.mean([r["psnr"] for r in rs])),
                          "ssim": float(np.mean([r["ssim"] for r in rs]))} for g, rs in sorted(by.items(), key=lambda t: str(t[0]))}
            out["groups"] = groups
            out["psnr_group_mean"] = float(np.mean([g["psnr"] for g in groups.values()]))
            out["ssim_group_mean"] = float(np.mean([g["ssim"] for g in groups.values()]))
        return out

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["image_id", "psnr", "ssim"])
            for r in self.rows:
                w.writerow([r["image_id"], _fmt(r["psnr"]), f"{r['ssim']:.6f}"])

    def write_summary(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(_jsonable(self.summary()), indent=1) + "\n")


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.4f}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, float) and math.isinf(obj):
        return "inf"
    return obj
