"""The style auto-encoder: encoder + decoder parameters and the L1 training objective."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import decoder, encoder
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .exceptions import ConfigurationError
from .netcore import Adam, Checkpoint, l1_loss, load_checkpoint, relu, save_checkpoint, sigmoid


@dataclass
class Batch:
    """Aligned crops: ``x`` and ``y`` are ``(B, h, w, 3)``."""

    x: np.ndarray
    y: np.ndarray


class RetouchModel:
    def __init__(self, enc_cfg: EncoderConfig, dec_cfg: DecoderConfig, params: dict[str, np.ndarray]):
        if enc_cfg.latent_dim != dec_cfg.latent_dim:
            raise ConfigurationError("encoder and decoder latent dims differ")
        self.enc_cfg = enc_cfg
        self.dec_cfg = dec_cfg
        self.params = params

    @classmethod
    def create(cls, enc_cfg: EncoderConfig | None = None, dec_cfg: DecoderConfig | None = None,
               seed: int = 0, init: str = "default", dtype=np.float32) -> RetouchModel:
        enc_cfg = enc_cfg or EncoderConfig()
        dec_cfg = dec_cfg or DecoderConfig(latent_dim=enc_cfg.latent_dim)
        rng = np.random.default_rng(seed)
        params = {**encoder.init_params(enc_cfg, rng), **decoder.init_params(dec_cfg, rng)}
        if init == "zeros":
            params = {k: np.zeros_like(v) for k, v in params.items()}
        elif init != "default":
            raise ConfigurationError(f"unknown init {init!r}")
        return cls(enc_cfg, dec_cfg, {k: v.astype(dtype) for k, v in params.items()})

    @property
    def dtype(self):
        return self.params["dec.fc0.W"].dtype

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def astype(self, dtype) -> RetouchModel:
        return RetouchModel(self.enc_cfg, self.dec_cfg, {k: v.astype(dtype) for k, v in self.params.items()})

    # --- architecture descriptor ------------------------------------------

    def arch(self) -> list[int]:
        e, d = self.enc_cfg, self.dec_cfg
        return [e.grid, e.latent_dim, len(e.embed_dims), *e.embed_dims, len(d.widths), *d.widths]

    @staticmethod
    def configs_from_arch(arch: list[int]) -> tuple[EncoderConfig, DecoderConfig]:
        grid, latent, ne = arch[0], arch[1], arch[2]
        embed = tuple(arch[3:3 + ne])
        nd = arch[3 + ne]
        widths = tuple(arch[4 + ne:4 + ne + nd])
        return (EncoderConfig(grid=grid, embed_dims=embed, latent_dim=latent),
                DecoderConfig(hidden_in=widths[0], block_dims=widths[1:], latent_dim=latent))

    def fingerprint(self) -> str:
        """SHA-256 over the architecture and the float32 bytes of every tensor."""
        h = hashlib.sha256()
        h.update(np.asarray(self.arch(), dtype="<u4").tobytes())
        for name in sorted(self.params):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.params[name], dtype="<f4").tobytes())
        return h.hexdigest()

    def save(self, path: str | Path, adam: Adam | None = None, step: int = 0) -> None:
        save_checkpoint(path, Checkpoint(self.arch(), self.params, adam, step))

    @classmethod
    def load(cls, path: str | Path) -> RetouchModel:
        return cls.from_checkpoint(load_checkpoint(path))

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> RetouchModel:
        enc_cfg, dec_cfg = cls.configs_from_arch(ckpt.arch)
        return cls(enc_cfg, dec_cfg, {k: v.copy() for k, v in ckpt.tensors.items()})

    # --- inference ---------------------------------------------------------

    def encode(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return encoder.encode(x, y, self.params, self.enc_cfg)

    def decode(self, x: np.ndarray, z: np.ndarray) -> np.ndarray:
        return decoder.decode(x, z, self.params)

    def reconstruct(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Auto-encoding round trip ``decode(x, encode(x, y))``."""
        return self.decode(x, self.encode(x, y))

    # --- training objective ------------------------------------------------

    def _grids(self, batch: Batch):
        s = self.enc_cfg.grid
        dt = self.dtype
        xg = np.stack([encoder.resample_grid(im.astype(dt, copy=False), s) for im in batch.x]).reshape(len(batch.x), -1, 3)
        yg = np.stack([encoder.resample_grid(im.astype(dt, copy=False), s) for im in batch.y]).reshape(len(batch.y), -1, 3)
        return xg, yg

    def _forward(self, batch: Batch, grids=None):
        xg, yg = grids if grids is not None else self._grids(batch)
        b = len(batch.x)
        z, ecache = encoder.forward(self.params, xg, yg)
        xp = batch.x.reshape(b, -1, 3).astype(self.dtype, copy=False)
        yp = batch.y.reshape(b, -1, 3).astype(self.dtype, copy=False)
        pred, dcache = decoder.forward(self.params, xp, z)
        return z, pred, yp, ecache, dcache

    def loss_and_grads(self, batch: Batch):
        """L1 loss of ``decode(x, encode(x, y))`` against ``y`` and all parameter grads."""
        _, pred, yp, ecache, dcache = self._forward(batch)
        loss, g = l1_loss(pred, yp)
        grads, gz = decoder.backward(self.params, dcache, g)
        grads.update(encoder.backward(self.params, ecache, gz))
        return loss, grads

    def loss(self, batch: Batch) -> float:
        _, pred, yp, _, _ = self._forward(batch)
        return l1_loss(pred, yp)[0]

    def latent_grad(self, batch: Batch, z: np.ndarray):
        """Loss and ``dL/dz`` with the latent supplied directly (bypassing the encoder)."""
        b = len(batch.x)
        xp = batch.x.reshape(b, -1, 3).astype(self.dtype, copy=False)
        yp = batch.y.reshape(b, -1, 3).astype(self.dtype, copy=False)
        pred, dcache = decoder.forward(self.params, xp, z)
        loss, g = l1_loss(pred, yp)
        _, gz = decoder.backward(self.params, dcache, g)
        return loss, gz

    def probe(self, batch: Batch, name: str):
        """Loss re-evaluator for :func:`netcore.gradient_check`.

        Returns ``f(flat_index) -> (loss, smooth)`` for use after
        ``params[name]`` was modified at ``flat_index``.  Only the affected
        unit of the perturbed layer and the layers downstream of it are
        recomputed.  ``smooth`` is False if any ReLU mask or L1 residual sign
        differs from the unperturbed forward pass.
        """
        P = self.params
        grids = self._grids(batch)
        z, pred, yp, ec, dc = self._forward(batch, grids)
        base_sign = np.sign(pred - yp)
        n_enc = encoder.n_embed_layers(P)
        n_dec = decoder.n_layers(P)
        part, layer, kind = name.split(".")
        fan_in = P[name.rsplit(".", 1)[0] + ".W"].shape[1]
        # contiguous transposes are much faster for tiny batches; the perturbed
        # tensor is never one of the layers re-run through these copies
        WT = {i: np.ascontiguousarray(P[f"dec.fc{i}.W"].T) for i in range(n_dec)}

        def row(i):
            return i // fan_in if kind == "W" else i

        def finish(out):
            loss, _ = l1_loss(out, yp)
            return loss, bool(np.array_equal(np.sign(out - yp), base_sign))

        def run_decoder(h, first, Ps, smooth):
            for i in range(first, n_dec):
                pre = h @ WT[i] + P[f"dec.fc{i}.b"] + Ps[i][:, None, :]
                if i == n_dec - 1:
                    h = sigmoid(pre)
                else:
                    smooth &= np.array_equal(pre > 0, dc[f"pre{i}"] > 0)
                    h = relu(pre)
            loss, ok = finish(h)
            return loss, ok and smooth

        def from_latent(zz, smooth):
            Ps = []
            for i in range(n_dec):
                cp = zz @ P[f"dec.cond{i}.W"].T + P[f"dec.cond{i}.b"]
                smooth &= np.array_equal(cp > 0, dc[f"cpre{i}"] > 0)
                Ps.append(relu(cp))
            return run_decoder(dc["h-1"], 0, Ps, smooth)

        def from_features(f, smooth):
            return from_latent(f @ P["enc.proj.W"].T + P["enc.proj.b"], smooth)

        if part == "dec":
            i = int(layer[4:]) if layer.startswith("cond") else int(layer[2:])
            last = i == n_dec - 1
            Ps = [dc[f"P{l}"] for l in range(n_dec)]

            def f(idx):
                j = row(idx)
                smooth = True
                pj = Ps[i][:, j]
                if layer.startswith("cond"):
                    cp = z @ P[f"dec.cond{i}.W"][j] + P[f"dec.cond{i}.b"][j]
                    smooth = np.array_equal(cp > 0, dc[f"cpre{i}"][:, j] > 0)
                    pj = relu(cp)
                pre = dc[f"h{i - 1}"] @ P[f"dec.fc{i}.W"][j] + P[f"dec.fc{i}.b"][j] + pj[:, None]
                h = dc[f"h{i}"].copy()
                if last:
                    h[..., j] = sigmoid(pre)
                    return finish(h)
                smooth &= np.array_equal(pre > 0, dc[f"pre{i}"][..., j] > 0)
                h[..., j] = relu(pre)
                return run_decoder(h, i + 1, Ps, smooth)

        elif layer == "proj":
            def f(idx):
                return from_features(ec["f"], True)

        else:
            i = int(layer[5:])
            batch_size = len(batch.x)

            def f(idx):
                j = row(idx)
                pre = ec[f"a{i - 1}"] @ P[f"enc.embed{i}.W"][j] + P[f"enc.embed{i}.b"][j]
                smooth = np.array_equal(pre > 0, ec[f"pre{i}"][..., j] > 0)
                a = ec[f"a{i}"].copy()
                a[..., j] = relu(pre)
                for l in range(i + 1, n_enc):
                    pre_l = a @ P[f"enc.embed{l}.W"].T + P[f"enc.embed{l}.b"]
                    smooth &= np.array_equal(pre_l > 0, ec[f"pre{l}"] > 0)
                    a = relu(pre_l)
                pooled = a.mean(axis=1)
                feats = np.concatenate([pooled[:batch_size], pooled[batch_size:]], axis=1)
                return from_features(feats, smooth)

        return f

    def latent_probe(self, batch: Batch):
        """``(z0, f)`` where ``f(z) -> (loss, smooth)`` decodes ``batch.x`` with latent ``z``.

        ``z0`` is the encoder's latent for the batch; ``smooth`` compares ReLU
        masks and L1 residual signs against the pass at ``z0``.
        """
        b = len(batch.x)
        xp = batch.x.reshape(b, -1, 3).astype(self.dtype, copy=False)
        yp = batch.y.reshape(b, -1, 3).astype(self.dtype, copy=False)
        z0, pred, _, _, dc = self._forward(batch)
        base_sign = np.sign(pred - yp)
        masks = {k: v > 0 for k, v in dc.items() if k.startswith(("pre", "cpre"))}

        def f(z):
            out, cache = decoder.forward(self.params, xp, z)
            smooth = all(np.array_equal(cache[k] > 0, m) for k, m in masks.items())
            smooth &= bool(np.array_equal(np.sign(out - yp), base_sign))
            return l1_loss(out, yp)[0], smooth

        return z0, f
