"""Siamese style encoder: ``(x, y) -> z``.

Both images are resampled onto an ``S x S`` grid, every grid pixel goes through
a shared per-pixel MLP, each branch is mean-pooled, and the two pooled vectors
are concatenated and linearly projected to the latent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colorlab import check_image
from .exceptions import ConfigurationError
from .netcore import dense_backward, dense_forward, he_uniform, relu, relu_backward, xavier_uniform


@dataclass(frozen=True)
class EncoderConfig:
    grid: int = 32
    embed_dims: tuple[int, ...] = (64, 128)
    latent_dim: int = 64

    def __post_init__(self):
        if self.grid < 2:
            raise ConfigurationError("encoder grid must be >= 2")
        if not self.embed_dims or min(self.embed_dims) < 1 or self.latent_dim < 1:
            raise ConfigurationError("encoder dims must be positive")

    @property
    def feature_dim(self) -> int:
        return self.embed_dims[-1]


def init_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    fan_in = 3
    for i, width in enumerate(cfg.embed_dims):
        params[f"enc.embed{i}.W"] = he_uniform(rng, width, fan_in)
        params[f"enc.embed{i}.b"] = np.zeros(width)
        fan_in = width
    params["enc.proj.W"] = xavier_uniform(rng, cfg.latent_dim, 2 * cfg.feature_dim)
    params["enc.proj.b"] = np.zeros(cfg.latent_dim)
    return params


def _axis_coords(n_in: int, n_out: int):
    # sample at output cell centers, expressed in input pixel coordinates
    u = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    u = np.clip(u, 0.0, n_in - 1)
    i0 = np.floor(u).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, u - i0


def resample_grid(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resampling of an ``(H, W, 3)`` image to ``(size, size, 3)``.

    When ``size`` equals the image side the grid hits pixel centers exactly and
    the image is returned unchanged.
    """
    h, w = img.shape[:2]
    r0, r1, fr = _axis_coords(h, size)
    c0, c1, fc = _axis_coords(w, size)
    fr = fr.astype(img.dtype)[:, None, None]
    fc = fc.astype(img.dtype)[None, :, None]
    top = img[r0][:, c0] * (1 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1 - fc) + img[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def n_embed_layers(params: dict[str, np.ndarray]) -> int:
    n = 0
    while f"enc.embed{n}.W" in params:
        n += 1
    return n


def forward(params, xg: np.ndarray, yg: np.ndarray, cache: dict | None = None, start: int = 0):
    """Batched encoder forward on pre-resampled grids of shape ``(B, M, 3)``.

    Stages: one per embedding layer, then pooling + projection.  With
    ``start > 0`` the outputs of earlier stages are read from ``cache``.
    Returns ``(z, cache)``.
    """
    cache = {} if cache is None else cache
    n = n_embed_layers(params)
    if start == 0:
        cache["a-1"] = np.concatenate([xg, yg], axis=0)
    for i in range(max(start, 0), n):
        pre = dense_forward(params[f"enc.embed{i}.W"], params[f"enc.embed{i}.b"], cache[f"a{i - 1}"])
        cache[f"pre{i}"] = pre
        cache[f"a{i}"] = relu(pre)
    feats = cache[f"a{n - 1}"]
    batch = feats.shape[0] // 2
    pooled = feats.mean(axis=1)
    f = np.concatenate([pooled[:batch], pooled[batch:]], axis=1)
    cache["f"] = f
    z = dense_forward(params["enc.proj.W"], params["enc.proj.b"], f)
    return z, cache


def backward(params, cache: dict, gz: np.ndarray) -> dict[str, np.ndarray]:
    grads = {}
    n = n_embed_layers(params)
    gf, grads["enc.proj.W"], grads["enc.proj.b"] = dense_backward(params["enc.proj.W"], cache["f"], gz)
    h = gf.shape[1] // 2
    gpooled = np.concatenate([gf[:, :h], gf[:, h:]], axis=0)
    m = cache["a-1"].shape[1]
    g = np.broadcast_to((gpooled / m)[:, None, :], cache[f"a{n - 1}"].shape)
    for i in reversed(range(n)):
        g = relu_backward(cache[f"pre{i}"], g)
        gin, grads[f"enc.embed{i}.W"], grads[f"enc.embed{i}.b"] = dense_backward(
            params[f"enc.embed{i}.W"], cache[f"a{i - 1}"], g
        )
        g = gin
    return grads


def encode(x: np.ndarray, y: np.ndarray, params, cfg: EncoderConfig) -> np.ndarray:
    """Style latent of a single (input, retouched) pair."""
    x = check_image(x, "x")
    y = check_image(y, "y")
    dtype = params["enc.proj.W"].dtype
    xg = resample_grid(x.astype(dtype, copy=False), cfg.grid).reshape(1, -1, 3)
    yg = resample_grid(y.astype(dtype, copy=False), cfg.grid).reshape(1, -1, 3)
    z, _ = forward(params, xg, yg)
    return z[0]


def encode_batch(pairs, params, cfg: EncoderConfig) -> list[np.ndarray]:
    """Encode each pair independently; errors name the failing index."""
    out = []
    for i, (x, y) in enumerate(pairs):
        try:
            out.append(encode(x, y, params, cfg))
        except ConfigurationError as exc:
            raise ConfigurationError(f"pair {i}: {exc}") from exc
    return out
