"""Training loop for the style auto-encoder on paired (input, retouched) data."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .colorlab import load_image
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .exceptions import ConfigurationError, NonFiniteError
from .model import Batch, RetouchModel
from .netcore import Adam, load_checkpoint
from .presetlab import read_manifest, resolve

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 10_000
    batch_size: int = 8
    crop: int = 64
    lr: float = 1e-3
    lr_schedule: str = "constant"  # or "cosine"
    seed: int = 0
    checkpoint_every: int = 1000
    log_every: int = 100
    latent_dim: int = 64
    grid: int = 32

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1 or self.crop < 1:
            raise ConfigurationError("steps, batch_size and crop must be >= 1")
        if self.lr_schedule not in ("constant", "cosine"):
            raise ConfigurationError(f"unknown lr schedule {self.lr_schedule!r}")

    def lr_at(self, step: int) -> float:
        if self.lr_schedule == "cosine":
            return self.lr * 0.5 * (1 + math.cos(math.pi * step / self.steps))
        return self.lr


@dataclass
class PairDataset:
    x: list[np.ndarray]
    y: list[np.ndarray]
    ids: list[str] = field(default_factory=list)
    presets: list[str] = field(default_factory=list)
    groups: list[str] = field(default_factory=list)

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ConfigurationError("inputs and targets differ in count")
        for i, (a, b) in enumerate(zip(self.x, self.y)):
            if a.shape != b.shape:
                raise ConfigurationError(f"pair {i}: input {a.shape} and target {b.shape} differ")
        n = len(self.x)
        self.ids = self.ids or [str(i) for i in range(n)]
        self.presets = self.presets or [""] * n
        self.groups = self.groups or [""] * n

    def __len__(self) -> int:
        return len(self.x)

    @classmethod
    def from_manifest(cls, path: str | Path, split: str | None = None) -> PairDataset:
        recs = [r for r in read_manifest(path) if split is None or r.split == split]
        return cls(x=[load_image(resolve(path, r.input_path)) for r in recs],
                   y=[load_image(resolve(path, r.target_path)) for r in recs],
                   ids=[r.target_path for r in recs], presets=[r.preset_id for r in recs],
                   groups=[r.group_id for r in recs])

    def subset(self, idx) -> PairDataset:
        idx = list(idx)
        return PairDataset([self.x[i] for i in idx], [self.y[i] for i in idx], [self.ids[i] for i in idx],
                           [self.presets[i] for i in idx], [self.groups[i] for i in idx])


def sample_batch(data: PairDataset, cfg: TrainConfig, step: int) -> Batch:
    """Aligned random crops; depends only on ``(seed, step)`` so runs can resume exactly."""
    rng = np.random.default_rng([cfg.seed, step])
    idx = rng.integers(len(data), size=cfg.batch_size)
    xs, ys = [], []
    c = cfg.crop
    for i in idx:
        h, w = data.x[i].shape[:2]
        top = int(rng.integers(h - c + 1))
        left = int(rng.integers(w - c + 1))
        xs.append(data.x[i][top:top + c, left:left + c])
        ys.append(data.y[i][top:top + c, left:left + c])
    return Batch(np.stack(xs).astype(np.float32), np.stack(ys).astype(np.float32))


@dataclass
class TrainResult:
    model: RetouchModel
    history: list[tuple[int, float]]
    adam: Adam
    seconds: float = 0.0


def new_model(cfg: TrainConfig) -> RetouchModel:
    enc = EncoderConfig(grid=cfg.grid, latent_dim=cfg.latent_dim)
    return RetouchModel.create(enc, DecoderConfig(latent_dim=cfg.latent_dim), seed=cfg.seed)


def write_history(path: str | Path, history: list[tuple[int, float]]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["step", "loss"])
        for step, loss in history:
            w.writerow([step, repr(loss)])


def read_history(path: str | Path) -> list[tuple[int, float]]:
    with open(path, newline="") as f:
        return [(int(r["step"]), float(r["loss"])) for r in csv.DictReader(f)]


def train(cfg: TrainConfig, data: PairDataset, out_dir: str | Path | None = None,
          resume: str | Path | None = None, model: RetouchModel | None = None,
          stop_at: int | None = None) -> TrainResult:
    """Minimize the mean L1 reconstruction loss with Adam.

    Step ``k`` (1-based) trains on ``sample_batch(data, cfg, k)``.  With
    ``out_dir`` a checkpoint (``model.irtc``, including optimizer state) and
    ``loss.csv`` are written every ``checkpoint_every`` steps and at the end.
    ``resume`` continues from such a checkpoint; ``stop_at`` ends early at
    that step (the schedule still uses ``cfg.steps``).
    """
    if len(data) == 0:
        raise ConfigurationError("empty training set")
    smallest = min(min(im.shape[:2]) for im in data.x)
    if cfg.crop > smallest:
        raise ConfigurationError(f"crop {cfg.crop} exceeds smallest image side {smallest}")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    history: list[tuple[int, float]] = []
    start = 0
    if resume is not None:
        ckpt = load_checkpoint(resume)
        model = RetouchModel.from_checkpoint(ckpt)
        adam = ckpt.adam or Adam(lr=cfg.lr)
        start = ckpt.step
        hist_path = Path(resume).with_name("loss.csv")
        if hist_path.exists():
            history = [h for h in read_history(hist_path) if h[0] <= start]
    else:
        model = model or new_model(cfg)
        adam = Adam(lr=cfg.lr)
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)

    def save(step):
        if out is not None:
            model.save(out / "model.irtc", adam=adam, step=step)
            write_history(out / "loss.csv", history)

    t0 = time.perf_counter()
    for step in range(start + 1, end + 1):
        batch = sample_batch(data, cfg, step)
        loss, grads = model.loss_and_grads(batch)
        if not math.isfinite(loss):
            raise NonFiniteError(f"loss became {loss} at step {step}; last good checkpoint kept")
        adam.step(model.params, grads, lr=cfg.lr_at(step - 1))
        history.append((step, loss))
        if cfg.log_every and step % cfg.log_every == 0:
            recent = np.mean([h[1] for h in history[-cfg.log_every:]])
            log.info("step %d  loss %.5f  (%.1fs)", step, recent, time.perf_counter() - t0)
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
            save(step)
    save(end)
    return TrainResult(model, history, adam, time.perf_counter() - t0)


def reconstruct(x: np.ndarray, y: np.ndarray, model: RetouchModel) -> np.ndarray:
    return model.reconstruct(x, y)


def fixed_batch(data: PairDataset, cfg: TrainConfig, seed: int = 12345) -> Batch:
    """A reproducible evaluation batch drawn independently of the training stream."""
    return sample_batch(data, replace(cfg, seed=seed), 0)
