"""sRGB / CIELAB conversions, image I/O and the 272-bin color-tone feature.

Images are ``float`` arrays of shape ``(H, W, 3)`` holding sRGB values in
``[0, 1]``.  Lab values use the D65 white point: ``L`` in ``[0, 100]`` and
``a``, ``b`` roughly in ``[-128, 127]`` for in-gamut colors.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .exceptions import ConfigurationError

# sRGB primaries -> XYZ, D65 (Lindbloom)
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
# white = M @ (1, 1, 1) so that sRGB white lands exactly on a = b = 0
_WHITE = _RGB_TO_XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0

L_BINS = 16
AB_BINS = 16
FEATURE_DIM = L_BINS + AB_BINS * AB_BINS
L_RANGE = (0.0, 100.0)
AB_RANGE = (-128.0, 127.0)
CHI_EPS = 1e-10


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate an ImageRGB array and return it as a float array."""
    arr = np.asarray(img)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ConfigurationError(f"{name} must have shape (H, W, 3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ConfigurationError(f"{name} must be at least 1x1")
    if not np.issubdtype(arr.dtype, np.floating):
        raise ConfigurationError(f"{name} must be floating point, got {arr.dtype}")
    if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
        raise ConfigurationError(f"{name} values must lie in [0, 1]")
    return arr


def srgb_to_linear(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v: np.ndarray) -> np.ndarray:
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, None)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * v ** (1.0 / 2.4) - 0.055)


def _f(t):
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3 * _DELTA**2) + 4.0 / 29.0)


def _f_inv(t):
    return np.where(t > _DELTA, t**3, 3 * _DELTA**2 * (t - 4.0 / 29.0))


def srgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Convert sRGB values in ``[0, 1]`` (shape ``(..., 3)``) to CIELAB."""
    lin = srgb_to_linear(img)
    xyz = lin @ _RGB_TO_XYZ.T / _WHITE
    fx, fy, fz = _f(xyz[..., 0]), _f(xyz[..., 1]), _f(xyz[..., 2])
    lab = np.stack([116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)], axis=-1)
    # guard tiny negative L from rounding at black
    lab[..., 0] = np.clip(lab[..., 0], 0.0, 100.0)
    return lab


def lab_to_srgb(lab: np.ndarray) -> np.ndarray:
    """Inverse of :func:`srgb_to_lab`; out-of-gamut results are clipped to [0, 1]."""
    lab = np.asarray(lab, dtype=np.float64)
    fy = (lab[..., 0] + 16.0) / 116.0
    fx = fy + lab[..., 1] / 500.0
    fz = fy - lab[..., 2] / 200.0
    xyz = np.stack([_f_inv(fx), _f_inv(fy), _f_inv(fz)], axis=-1) * _WHITE
    return np.clip(linear_to_srgb(xyz @ _XYZ_TO_RGB.T), 0.0, 1.0)


def _bin_index(values: np.ndarray, lo: float, hi: float, bins: int) -> np.ndarray:
    values = np.clip(values, lo, hi)
    idx = np.floor((values - lo) / (hi - lo) * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def color_tone_feature(img: np.ndarray) -> np.ndarray:
    """Concatenated L histogram (16 bins) and joint ab histogram (16x16 bins).

    Both parts are L1-normalized independently, so each sums to one.
    """
    img = check_image(img)
    lab = srgb_to_lab(img).reshape(-1, 3)
    n = lab.shape[0]
    il = _bin_index(lab[:, 0], *L_RANGE, L_BINS)
    ia = _bin_index(lab[:, 1], *AB_RANGE, AB_BINS)
    ib = _bin_index(lab[:, 2], *AB_RANGE, AB_BINS)
    h_l = np.bincount(il, minlength=L_BINS) / n
    h_ab = np.bincount(ia * AB_BINS + ib, minlength=AB_BINS * AB_BINS) / n
    return np.concatenate([h_l, h_ab])


def ab_histogram(img: np.ndarray) -> np.ndarray:
    """The 256-bin ab part of :func:`color_tone_feature`."""
    return color_tone_feature(img)[L_BINS:]


def chi_square(h1: np.ndarray, h2: np.ndarray, eps: float = CHI_EPS) -> float:
    h1 = np.asarray(h1, dtype=np.float64)
    h2 = np.asarray(h2, dtype=np.float64)
    if h1.shape != h2.shape:
        raise ConfigurationError(f"feature shapes differ: {h1.shape} vs {h2.shape}")
    return float(np.sum((h1 - h2) ** 2 / (h1 + h2 + eps)))


# --- image files -----------------------------------------------------------


def load_image(path: str | Path) -> np.ndarray:
    """Read an 8-bit PNG or binary PPM into a float32 ``(H, W, 3)`` array in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32)
    return arr / np.float32(255.0)


def to_uint8(img: np.ndarray) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def save_image(path: str | Path, img: np.ndarray) -> None:
    """Write PNG or PPM (chosen by suffix); values are rounded to 8 bits."""
    path = Path(path)
    fmt = "PPM" if path.suffix.lower() in (".ppm", ".pnm") else "PNG"
    Image.fromarray(to_uint8(img)).save(path, format=fmt)
