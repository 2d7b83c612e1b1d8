"""Latent-conditioned per-pixel color MLP and 3D LUT baking.

Layer ``i`` computes ``act(W_i h + b_i + P_i(z))`` where the conditioning shift
``P_i(z) = relu(A_i z + c_i)`` is shared by every pixel of the image.  Hidden
layers use ReLU, the final 3-wide layer a sigmoid.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .colorlab import check_image
from .exceptions import ConfigurationError
from .netcore import (
    dense_backward,
    dense_forward,
    he_uniform,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
    xavier_uniform,
)


@dataclass(frozen=True)
class DecoderConfig:
    hidden_in: int = 128
    block_dims: tuple[int, ...] = (256, 512, 3)
    latent_dim: int = 64

    def __post_init__(self):
        if not self.block_dims or self.block_dims[-1] != 3:
            raise ConfigurationError("decoder must end in a 3-wide block")
        if self.hidden_in < 1 or min(self.block_dims) < 1 or self.latent_dim < 1:
            raise ConfigurationError("decoder dims must be positive")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.hidden_in, *self.block_dims)


def init_params(cfg: DecoderConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    params = {}
    fan_in = 3
    last = len(cfg.widths) - 1
    for i, width in enumerate(cfg.widths):
        init = xavier_uniform if i == last else he_uniform
        params[f"dec.fc{i}.W"] = init(rng, width, fan_in)
        params[f"dec.fc{i}.b"] = np.zeros(width)
        params[f"dec.cond{i}.W"] = he_uniform(rng, width, cfg.latent_dim)
        params[f"dec.cond{i}.b"] = np.zeros(width)
        fan_in = width
    return params


def n_layers(params) -> int:
    n = 0
    while f"dec.fc{n}.W" in params:
        n += 1
    return n


def latent_dim(params) -> int:
    return params["dec.cond0.W"].shape[1]


def forward(params, x: np.ndarray, z: np.ndarray, cache: dict | None = None, start: int = 0):
    """Batched decoder forward.

    ``x`` holds pixels as ``(B, N, 3)`` and ``z`` latents as ``(B, d)``.
    Stage 0 computes the conditioning shifts, stage ``1 + i`` layer ``i``;
    stages before ``start`` are taken from ``cache``.  Returns ``(out, cache)``.
    """
    cache = {} if cache is None else cache
    n = n_layers(params)
    if z.shape[-1] != latent_dim(params):
        raise ConfigurationError(f"latent length {z.shape[-1]} != decoder latent dim {latent_dim(params)}")
    if start == 0:
        cache["z"] = z
        cache["h-1"] = x
        for i in range(n):
            cp = dense_forward(params[f"dec.cond{i}.W"], params[f"dec.cond{i}.b"], z)
            cache[f"cpre{i}"] = cp
            cache[f"P{i}"] = relu(cp)
    for i in range(max(start - 1, 0), n):
        pre = dense_forward(params[f"dec.fc{i}.W"], params[f"dec.fc{i}.b"], cache[f"h{i - 1}"])
        pre += cache[f"P{i}"][:, None, :]
        cache[f"pre{i}"] = pre
        cache[f"h{i}"] = sigmoid(pre) if i == n - 1 else relu(pre)
    return cache[f"h{n - 1}"], cache


def backward(params, cache: dict, grad_out: np.ndarray):
    """Return ``(grads, grad_z)``."""
    grads = {}
    n = n_layers(params)
    z = cache["z"]
    gz = np.zeros_like(z)
    g = sigmoid_backward(cache[f"h{n - 1}"], grad_out)
    for i in reversed(range(n)):
        if i < n - 1:
            g = relu_backward(cache[f"pre{i}"], g)
        gP = relu_backward(cache[f"cpre{i}"], g.sum(axis=1))
        gzi, grads[f"dec.cond{i}.W"], grads[f"dec.cond{i}.b"] = dense_backward(params[f"dec.cond{i}.W"], z, gP)
        gz += gzi
        g, grads[f"dec.fc{i}.W"], grads[f"dec.fc{i}.b"] = dense_backward(params[f"dec.fc{i}.W"], cache[f"h{i - 1}"], g)
    return grads, gz


def apply_pixels(pixels: np.ndarray, z: np.ndarray, params, chunk: int = 65536) -> np.ndarray:
    """Decode an ``(N, 3)`` pixel list under one latent, in fixed-size chunks."""
    dtype = params["dec.fc0.W"].dtype
    z = np.asarray(z, dtype=dtype).reshape(1, -1)
    if z.shape[1] != latent_dim(params):
        raise ConfigurationError(f"latent length {z.shape[1]} != decoder latent dim {latent_dim(params)}")
    pixels = pixels.astype(dtype, copy=False)
    out = np.empty_like(pixels)
    for s in range(0, pixels.shape[0], chunk):
        o, _ = forward(params, pixels[None, s:s + chunk], z)
        out[s:s + chunk] = o[0]
    return out


def decode(x: np.ndarray, z: np.ndarray, params) -> np.ndarray:
    """Retouch image ``x`` with style latent ``z``; output has the shape of ``x``.

    Each distinct color is evaluated once, in sorted order, and scattered back.
    BLAS rounding can depend on a row's position in the matrix, so this is
    what makes the output bit-identical under any rearrangement or
    nearest-neighbor resize of the pixels.  It is also faster on 8-bit images.
    """
    x = check_image(x, "x")
    h, w, _ = x.shape
    flat = x.reshape(-1, 3).astype(params["dec.fc0.W"].dtype, copy=False)
    colors, inverse = np.unique(flat, axis=0, return_inverse=True)
    return apply_pixels(colors, z, params)[inverse.reshape(-1)].reshape(h, w, 3)


# --- 3D LUT fast path ------------------------------------------------------


def lattice(n: int) -> np.ndarray:
    """``(n, n, n, 3)`` grid of colors indexed ``[r, g, b]``."""
    t = np.linspace(0.0, 1.0, n)
    r, g, b = np.meshgrid(t, t, t, indexing="ij")
    return np.stack([r, g, b], axis=-1)


def decode_lut_bake(z: np.ndarray, params, n: int = 33) -> np.ndarray:
    if n < 2:
        raise ConfigurationError("LUT size must be >= 2")
    colors = lattice(n).reshape(-1, 3)
    return apply_pixels(colors, z, params).reshape(n, n, n, 3)


def apply_lut(img: np.ndarray, lut: np.ndarray) -> np.ndarray:
    """Trilinear interpolation of an ``(n, n, n, 3)`` table at every pixel."""
    n = lut.shape[0]
    pos = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0) * (n - 1)
    i0 = np.minimum(np.floor(pos).astype(np.int64), n - 2)
    f = pos - i0
    out = np.zeros(pos.shape, dtype=np.float64)
    for dr in (0, 1):
        wr = f[..., 0] if dr else 1 - f[..., 0]
        for dg in (0, 1):
            wg = f[..., 1] if dg else 1 - f[..., 1]
            for db in (0, 1):
                wb = f[..., 2] if db else 1 - f[..., 2]
                corner = lut[i0[..., 0] + dr, i0[..., 1] + dg, i0[..., 2] + db]
                out += (wr * wg * wb)[..., None] * corner
    return out


def write_cube(path: str | Path, lut: np.ndarray, title: str = "styleretouch") -> None:
    """Write a ``.cube`` file (red varies fastest, as editors expect)."""
    n = lut.shape[0]
    lines = [f'TITLE "{title}"', f"LUT_3D_SIZE {n}", "DOMAIN_MIN 0.0 0.0 0.0", "DOMAIN_MAX 1.0 1.0 1.0"]
    for b in range(n):
        for g in range(n):
            for r in range(n):
                lines.append("{:.6f} {:.6f} {:.6f}".format(*lut[r, g, b]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_cube(path: str | Path) -> np.ndarray:
    n = None
    rows = []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "LUT_3D_SIZE":
            n = int(parts[1])
        elif parts[0][0].isdigit() or parts[0][0] in "-.":
            rows.append([float(p) for p in parts[:3]])
    if n is None or len(rows) != n**3:
        raise ConfigurationError(f"malformed .cube file {path}")
    return np.asarray(rows).reshape(n, n, n, 3).transpose(2, 1, 0, 3)
