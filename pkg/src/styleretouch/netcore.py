"""Small dense-network toolkit: layers with analytic gradients, Adam, checkpoints.

Everything operates on numpy arrays whose last axis is the feature axis, so a
layer applies unchanged to ``(N, in)``, ``(B, N, in)`` and so on.  Training runs
in float32; :func:`gradient_check` re-runs the model in float64.
"""

from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Callable

import numpy as np

from .exceptions import ConfigurationError, NonFiniteError, UsageError

log = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"IRTC"
CHECKPOINT_VERSION = 1


# --- layers ----------------------------------------------------------------


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray) -> np.ndarray:
    if x.shape[-1] != W.shape[1]:
        raise ConfigurationError(f"input dim {x.shape[-1]} != layer in-dim {W.shape[1]}")
    return x @ W.T + b


def dense_backward(W: np.ndarray, x: np.ndarray, grad_out: np.ndarray):
    """Return ``(grad_in, grad_W, grad_b)``, summing parameter grads over leading axes."""
    g2 = grad_out.reshape(-1, W.shape[0])
    gW = g2.T @ x.reshape(-1, W.shape[1])
    gb = g2.sum(axis=0)
    return grad_out @ W, gW, gb


class Dense:
    """A fully connected layer that caches its input for the backward pass."""

    def __init__(self, W: np.ndarray, b: np.ndarray):
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise ConfigurationError(f"bad layer shapes W{W.shape} b{b.shape}")
        self.W = W
        self.b = b
        self.gW = np.zeros_like(W)
        self.gb = np.zeros_like(b)
        self._x = None

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def forward(self, x: np.ndarray) -> np.ndarray:
        out = dense_forward(self.W, self.b, x)
        self._x = x
        return out

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise UsageError("backward called before forward")
        if grad_out.shape[-1] != self.out_dim:
            raise ConfigurationError(f"grad dim {grad_out.shape[-1]} != out-dim {self.out_dim}")
        gx, gW, gb = dense_backward(self.W, self._x, grad_out)
        self.gW += gW
        self.gb += gb
        return gx

    def zero_grad(self) -> None:
        self.gW[...] = 0
        self.gb[...] = 0


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(pre: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (pre > 0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def sigmoid_backward(out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through a sigmoid given its *output* (cheaper than re-evaluating)."""
    return grad_out * out * (1 - out)


def l1_loss(pred: np.ndarray, target: np.ndarray):
    """Mean absolute error and its gradient w.r.t. ``pred`` (``sign(0) = 0``)."""
    if pred.shape != target.shape:
        raise ConfigurationError(f"shape mismatch {pred.shape} vs {target.shape}")
    diff = pred - target
    n = diff.size
    loss = float(np.abs(diff, dtype=np.float64).sum() / n)
    grad = (np.sign(diff) / n).astype(pred.dtype)
    return loss, grad


# --- initialization --------------------------------------------------------


def he_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def xavier_uniform(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


# --- optimizer -------------------------------------------------------------


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float | None = None) -> None:
        """Update ``params`` in place.

        Raises NonFiniteError (leaving params and moments untouched) if any
        gradient contains NaN or Inf.
        """
        bad = [k for k, g in grads.items() if not np.all(np.isfinite(g))]
        if bad:
            raise NonFiniteError(f"non-finite gradients at step {self.t + 1}: {', '.join(bad)}")
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ConfigurationError(f"grad shape {g.shape} != param shape {p.shape} for {name}")
            m = self.m.setdefault(name, np.zeros_like(p))
            v = self.v.setdefault(name, np.zeros_like(p))
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * (g * g)
            step = (lr / bc1) * m / (np.sqrt(v / bc2) + self.eps)
            p -= step.astype(p.dtype, copy=False)


# --- checkpoints -----------------------------------------------------------


def _write_tensor(f: BinaryIO, name: str, arr: np.ndarray) -> None:
    raw = name.encode("utf-8")
    f.write(struct.pack("<I", len(raw)))
    f.write(raw)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_exact(f: BinaryIO, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise ConfigurationError("truncated checkpoint")
    return data


def _read_tensor(f: BinaryIO) -> tuple[str, np.ndarray]:
    (nlen,) = struct.unpack("<I", _read_exact(f, 4))
    name = _read_exact(f, nlen).decode("utf-8")
    (ndim,) = struct.unpack("<I", _read_exact(f, 4))
    shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
    count = int(np.prod(shape)) if ndim else 1
    arr = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape)
    return name, arr.astype(np.float32)


@dataclass
class Checkpoint:
    arch: list[int]
    tensors: dict[str, np.ndarray]
    adam: Adam | None = None
    step: int = 0


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    """Binary layout (all little-endian)::

        "IRTC" | u32 version | u32 n_arch | n_arch * u32 dims
        | u32 n_tensors | n_tensors * (u32 len, name, u32 ndim, ndim*u32, f32 data)
        | u8 has_adam [ | u64 step | u64 t | 4*f64 lr,b1,b2,eps | m tensors | v tensors ]
    """
    names = list(ckpt.tensors)
    if len(set(names)) != len(names):
        raise ConfigurationError("tensor names must be unique")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<I", len(ckpt.arch)))
        f.write(struct.pack(f"<{len(ckpt.arch)}I", *ckpt.arch))
        f.write(struct.pack("<I", len(names)))
        for name in names:
            _write_tensor(f, name, ckpt.tensors[name])
        if ckpt.adam is None:
            f.write(b"\x00")
        else:
            a = ckpt.adam
            f.write(b"\x01")
            f.write(struct.pack("<QQ4d", ckpt.step, a.t, a.lr, a.beta1, a.beta2, a.eps))
            for name in names:
                _write_tensor(f, name, a.m.get(name, np.zeros_like(ckpt.tensors[name])))
            for name in names:
                _write_tensor(f, name, a.v.get(name, np.zeros_like(ckpt.tensors[name])))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> Checkpoint:
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ConfigurationError(f"{path} is not a checkpoint (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4))
        if version != CHECKPOINT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {version}")
        (narch,) = struct.unpack("<I", _read_exact(f, 4))
        arch = list(struct.unpack(f"<{narch}I", _read_exact(f, 4 * narch)))
        (ntens,) = struct.unpack("<I", _read_exact(f, 4))
        tensors = dict(_read_tensor(f) for _ in range(ntens))
        flag = f.read(1)
        adam, step = None, 0
        if flag == b"\x01":
            step, t, lr, b1, b2, eps = struct.unpack("<QQ4d", _read_exact(f, 48))
            m = dict(_read_tensor(f) for _ in range(ntens))
            v = dict(_read_tensor(f) for _ in range(ntens))
            adam = Adam(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t, m=m, v=v)
    return Checkpoint(arch=arch, tensors=tensors, adam=adam, step=step)


# --- gradient checking -----------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    per_tensor: dict[str, float]
    worst: tuple[str, tuple[int, ...]]
    n_checked: int
    n_reduced_step: int = 0
    n_skipped: int = 0

    def passed(self, tol: float = 1e-3) -> bool:
        return self.max_rel_err < tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def _central_difference(flat: np.ndarray, i: int, f, h: float, min_h: float):
    """``(derivative or None, step used)``; shrinks the step while ``f`` reports a kink."""
    orig = flat[i]
    step = h
    while True:
        flat[i] = orig + step
        lp, sp = f()
        flat[i] = orig - step
        lm, sm = f()
        flat[i] = orig
        if sp and sm:
            return (lp - lm) / (2 * step), step
        if step / 10 < min_h:
            return None, step
        step /= 10


def gradient_check(model, batch, h: float = 1e-3, names: list[str] | None = None,
                   max_per_tensor: int | None = None, seed: int = 0, min_h: float = 1e-7) -> GradCheckReport:
    """Compare analytic parameter gradients against central differences.

    ``model`` must provide ``params`` (dict of arrays) and
    ``loss_and_grads(batch)``.  If it also provides ``probe(batch, name)``, that
    must return ``f(flat_index) -> (loss, smooth)`` re-evaluating the loss after
    ``params[name]`` was modified in place at ``flat_index``, where ``smooth``
    is False when the perturbation flipped a ReLU mask or the sign of an L1
    residual.  Such entries are retried with a 10x smaller step down to
    ``min_h``; entries that still straddle a kink are skipped and counted.
    ``max_per_tensor`` samples entries instead of checking every one.
    """
    _, grads = model.loss_and_grads(batch)
    rng = np.random.default_rng(seed)
    per_tensor: dict[str, float] = {}
    worst: tuple[str, tuple[int, ...]] = ("", ())
    worst_err = -1.0
    total = reduced = skipped = 0
    for name in names or list(model.params):
        p = model.params[name]
        if hasattr(model, "probe"):
            f: Callable[[int], tuple[float, bool]] = model.probe(batch, name)
        else:
            f = lambda i: (model.loss_and_grads(batch)[0], True)  # noqa: E731
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = np.sort(rng.choice(flat.size, size=max_per_tensor, replace=False))
        numeric = np.full(idx.size, np.nan)
        for k, i in enumerate(idx):
            d, step = _central_difference(flat, i, lambda: f(i), h, min_h)
            if d is None:
                skipped += 1
                continue
            reduced += step < h
            numeric[k] = d
        ok = ~np.isnan(numeric)
        err = relative_error(grads[name].reshape(-1)[idx][ok], numeric[ok])
        per_tensor[name] = float(err.max()) if err.size else 0.0
        if per_tensor[name] > worst_err:
            worst_err = per_tensor[name]
            j = int(idx[ok][np.argmax(err)]) if err.size else 0
            worst = (name, tuple(int(v) for v in np.unravel_index(j, p.shape)))
        total += int(ok.sum())
        log.debug("grad-check %s: max rel-err %.3g over %d entries", name, per_tensor[name], ok.sum())
    return GradCheckReport(max_rel_err=max(worst_err, 0.0), per_tensor=per_tensor, worst=worst,
                           n_checked=total, n_reduced_step=reduced, n_skipped=skipped)


def latent_gradient_check(model, batch, h: float = 1e-3, min_h: float = 1e-7) -> GradCheckReport:
    """Check ``dL/dz`` of the decoder path at the encoder's latent for ``batch``.

    Uses ``model.latent_probe`` and ``model.latent_grad`` with the same
    kink handling as :func:`gradient_check`.
    """
    z0, f = model.latent_probe(batch)
    z = np.array(z0, copy=True)
    _, gz = model.latent_grad(batch, z)
    flat = z.reshape(-1)
    numeric = np.full(flat.size, np.nan)
    reduced = skipped = 0
    for i in range(flat.size):
        d, step = _central_difference(flat, i, lambda: f(z), h, min_h)
        if d is None:
            skipped += 1
            continue
        reduced += step < h
        numeric[i] = d
    ok = ~np.isnan(numeric)
    err = relative_error(gz.reshape(-1)[ok], numeric[ok])
    m = float(err.max()) if err.size else 0.0
    j = int(np.flatnonzero(ok)[np.argmax(err)]) if err.size else 0
    return GradCheckReport(max_rel_err=m, per_tensor={"z": m},
                           worst=("z", tuple(int(v) for v in np.unravel_index(j, z.shape))),
                           n_checked=int(ok.sum()), n_reduced_step=reduced, n_skipped=skipped)
