"""Synthetic retouching presets, source images, ab-histogram grouping and datasets.

A preset is a fixed chain of global color/tone operations applied per pixel:
white-balance gains, per-channel gamma, saturation around Rec.709 luma, a sine
S-curve, an offset, and a final clamp to [0, 1].
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .colorlab import ab_histogram, check_image, lab_to_srgb, load_image, save_image, to_uint8
from .exceptions import ConfigurationError

log = logging.getLogger(__name__)

REC709 = np.array([0.2126, 0.7152, 0.0722])

GAMMA_RANGE = (0.4, 2.5)
GAIN_RANGE = (0.6, 1.4)
SATURATION_RANGE = (0.0, 2.0)
SCURVE_RANGE = (-0.5, 0.5)
OFFSET_RANGE = (-0.1, 0.1)


@dataclass(frozen=True)
class SyntheticPreset:
    id: str
    gamma: tuple[float, float, float] = (1.0, 1.0, 1.0)
    gains: tuple[float, float, float] = (1.0, 1.0, 1.0)
    saturation: float = 1.0
    scurve: float = 0.0
    offset: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        checks = [
            ("gamma", self.gamma, GAMMA_RANGE),
            ("gains", self.gains, GAIN_RANGE),
            ("saturation", [self.saturation], SATURATION_RANGE),
            ("scurve", [self.scurve], SCURVE_RANGE),
            ("offset", [self.offset], OFFSET_RANGE),
        ]
        for name, values, (lo, hi) in checks:
            if len(values) != (3 if name in ("gamma", "gains") else 1):
                raise ConfigurationError(f"preset {self.id}: {name} has wrong length")
            if any(not lo <= v <= hi for v in values):
                raise ConfigurationError(f"preset {self.id}: {name}={list(values)} outside [{lo}, {hi}]")

    @property
    def is_identity(self) -> bool:
        return (self.gamma == (1.0, 1.0, 1.0) and self.gains == (1.0, 1.0, 1.0)
                and self.saturation == 1.0 and self.scurve == 0.0 and self.offset == 0.0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gamma"] = list(self.gamma)
        d["gains"] = list(self.gains)
        if d["seed"] is None:
            del d["seed"]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticPreset:
        return cls(id=str(d["id"]), gamma=tuple(float(v) for v in d["gamma"]),
                   gains=tuple(float(v) for v in d["gains"]), saturation=float(d["saturation"]),
                   scurve=float(d["scurve"]), offset=float(d["offset"]), seed=d.get("seed"))


IDENTITY = SyntheticPreset("identity")


def apply_preset(img: np.ndarray, preset: SyntheticPreset) -> np.ndarray:
    img = check_image(img)
    v = img.astype(np.float64)
    v = v * np.asarray(preset.gains)
    v = np.power(v, np.asarray(preset.gamma))
    luma = (v @ REC709)[..., None]
    # written as v*s + luma*(1-s) so s = 1 is exact
    v = v * preset.saturation + luma * (1.0 - preset.saturation)
    v = v + preset.scurve * np.sin(2 * np.pi * v) / (2 * np.pi)
    v = v + preset.offset
    return np.clip(v, 0.0, 1.0).astype(img.dtype)


def random_preset(rng: np.random.Generator, preset_id: str, seed: int | None = None) -> SyntheticPreset:
    """Draw a preset from the desk distribution (a sub-range of the valid ranges).

    A shared exposure gamma with small per-channel tints, mild white balance,
    and moderate saturation / curve / offset changes.
    """
    base = np.exp(rng.uniform(np.log(0.5), np.log(2.0)))
    gamma = np.clip(base * np.exp(rng.uniform(-0.2, 0.2, 3)), *GAMMA_RANGE)
    gains = rng.uniform(0.75, 1.25, 3)
    return SyntheticPreset(
        id=preset_id,
        gamma=tuple(round(float(g), 6) for g in gamma),
        gains=tuple(round(float(g), 6) for g in gains),
        saturation=round(float(rng.uniform(0.3, 1.7)), 6),
        scurve=round(float(rng.uniform(-0.5, 0.5)), 6),
        offset=round(float(rng.uniform(-0.05, 0.05)), 6),
        seed=seed,
    )


def preset_pool(n: int, seed: int = 0) -> list[SyntheticPreset]:
    """``n`` presets; the first is always the identity."""
    if n < 1:
        raise ConfigurationError("need at least one preset")
    rng = np.random.default_rng(seed)
    return [IDENTITY] + [random_preset(rng, f"p{i:03d}", seed) for i in range(1, n)]


def save_presets(path: str | Path, presets: list[SyntheticPreset]) -> None:
    Path(path).write_text(json.dumps([p.to_dict() for p in presets], indent=1) + "\n")


def load_presets(path: str | Path) -> list[SyntheticPreset]:
    data = json.loads(Path(path).read_text())
    if isinstance(data, dict):
        data = [data]
    return [SyntheticPreset.from_dict(d) for d in data]


# --- synthetic source images ------------------------------------------------


def synth_image(rng: np.random.Generator, size: int = 32, hue_center: tuple[float, float] | None = None) -> np.ndarray:
    """A smooth, textured image whose colors cluster around one ab center.

    Lightness spans dark to bright so every image exercises the full tone
    range; ``hue_center`` fixes the (a, b) family, otherwise it is random.
    """
    if hue_center is None:
        ang = rng.uniform(0, 2 * np.pi)
        rad = rng.uniform(5, 45)
        hue_center = (rad * np.cos(ang), rad * np.sin(ang))
    n_col = 4
    lightness = np.sort(rng.uniform(8, 95, n_col))
    lightness[0] = min(lightness[0], 25)
    lightness[-1] = max(lightness[-1], 75)
    ab = np.asarray(hue_center) + rng.normal(0, 12, size=(n_col, 2))
    palette = lab_to_srgb(np.column_stack([lightness, ab]))

    yy, xx = np.mgrid[0:size, 0:size] / max(size - 1, 1)
    theta = rng.uniform(0, 2 * np.pi)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    for _ in range(3):
        cy, cx = rng.uniform(0, 1, 2)
        r = rng.uniform(0.1, 0.35)
        t = t + rng.uniform(-0.8, 0.8) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * r * r))
    t = (t - t.min()) / max(t.max() - t.min(), 1e-9)
    t = np.clip(t + rng.normal(0, 0.03, t.shape), 0, 1) * (n_col - 1)
    i0 = np.minimum(np.floor(t).astype(int), n_col - 2)
    f = (t - i0)[..., None]
    img = palette[i0] * (1 - f) + palette[i0 + 1] * f
    img = img + rng.normal(0, 0.01, img.shape)
    return np.clip(img, 0, 1).astype(np.float32)


def synth_corpus(n: int, size: int = 32, seed: int = 0, n_families: int = 8) -> list[np.ndarray]:
    """``n`` images drawn from ``n_families`` ab-color families (round-robin)."""
    rng = np.random.default_rng(seed)
    angles = np.arange(n_families) * 2 * np.pi / n_families + rng.uniform(0, 2 * np.pi)
    centers = [(30 * np.cos(a), 30 * np.sin(a)) for a in angles]
    return [synth_image(rng, size, centers[i % n_families]) for i in range(n)]


# --- k-means over ab histograms ---------------------------------------------


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    sse_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def _sse(data, centroids, labels) -> float:
    return float(((data - centroids[labels]) ** 2).sum())


def kmeans(data: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding."""
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if not 1 <= k <= n:
        raise ConfigurationError(f"k={k} must be in [1, {n}]")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    d2 = ((data - data[chosen[0]]) ** 2).sum(axis=1)
    for _ in range(1, k):
        if d2.sum() > 0:
            nxt = int(rng.choice(n, p=d2 / d2.sum()))
        else:
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rng.choice(rest))
        chosen.append(nxt)
        d2 = np.minimum(d2, ((data - data[nxt]) ** 2).sum(axis=1))
    centroids = data[chosen].copy()

    def assign(c):
        dist = ((data[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(dist, axis=1)

    labels = assign(centroids)
    history = [_sse(data, centroids, labels)]
    it = 0
    for it in range(1, max_iter + 1):
        new = centroids.copy()
        for j in range(k):
            members = data[labels == j]
            if len(members):
                new[j] = members.mean(axis=0)
        shift = float(np.abs(new - centroids).max())
        centroids = new
        labels = assign(centroids)
        history.append(_sse(data, centroids, labels))
        if shift < tol:
            break
    return KMeansResult(labels=labels, centroids=centroids, sse_history=history, n_iter=it)


def cluster_groups(images: list[np.ndarray], k: int, seed: int = 0) -> KMeansResult:
    """k-means over the 256-bin ab histograms of ``images``."""
    if k > len(images):
        raise ConfigurationError(f"k={k} exceeds the number of images ({len(images)})")
    return kmeans(np.stack([ab_histogram(im) for im in images]), k, seed=seed)


# --- dataset generation -----------------------------------------------------


@dataclass(frozen=True)
class StyleGroup:
    group_id: str
    cluster: int
    preset_id: str
    members: tuple[str, ...]
    split: str


@dataclass(frozen=True)
class ManifestRecord:
    input_path: str
    target_path: str
    preset_id: str
    group_id: str
    split: str = "train"

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=False)


def read_manifest(path: str | Path) -> list[ManifestRecord]:
    records = []
    for line in Path(path).read_text().splitlines():
        if line.strip():
            d = json.loads(line)
            records.append(ManifestRecord(d["input_path"], d["target_path"], str(d["preset_id"]),
                                          str(d["group_id"]), d.get("split", "train")))
    return records


def resolve(manifest_path: str | Path, rel: str) -> Path:
    p = Path(rel)
    return p if p.is_absolute() else Path(manifest_path).parent / p


def _quantize(img: np.ndarray) -> np.ndarray:
    return to_uint8(img).astype(np.float32) / np.float32(255.0)


def make_dataset(sources, presets: list[SyntheticPreset], k: int, out_dir: str | Path, seed: int = 0,
                 heldout_clusters: int = 0, heldout_presets: int = 0, presets_per_cluster: int = 1,
                 names: list[str] | None = None) -> list[ManifestRecord]:
    """Cluster ``sources`` by ab histogram, attach presets per cluster, render pairs.

    ``heldout_clusters`` clusters and ``heldout_presets`` presets are reserved
    for evaluation so neither their images nor their transforms occur in
    training.  The identity preset is never held out.  Each (cluster, preset)
    combination is one style group.  Writes ``inputs/``, ``targets/``,
    ``presets.json``, ``groups.json`` and ``manifest.jsonl`` under ``out_dir``
    and returns the manifest records.
    """
    if not sources or not presets:
        raise ConfigurationError("need at least one source image and one preset")
    out = Path(out_dir)
    images = []
    for i, s in enumerate(sources):
        images.append(_quantize(load_image(s) if isinstance(s, (str, Path)) else check_image(s)))
    names = names or [f"img{i:04d}" for i in range(len(images))]
    if len(set(names)) != len(names):
        raise ConfigurationError("source names must be unique")

    km = cluster_groups(images, k, seed=seed)
    rng = np.random.default_rng(seed)
    cluster_order = rng.permutation(k)
    held_c = set(int(c) for c in cluster_order[:heldout_clusters])

    movable = [p for p in presets if not p.is_identity]
    if heldout_presets > len(movable):
        raise ConfigurationError("more held-out presets requested than non-identity presets")
    perm = rng.permutation(len(movable))
    held_ids = {movable[i].id for i in perm[:heldout_presets]}
    train_pool = [p for p in presets if p.id not in held_ids]
    held_pool = [p for p in presets if p.id in held_ids]
    if held_c and not held_pool:
        held_pool = train_pool
    if not train_pool and len(held_c) < k:
        raise ConfigurationError("no presets left for training clusters")

    # round-robin over a seeded order of each pool
    pools = {"train": [train_pool[i] for i in rng.permutation(len(train_pool))],
             "heldout": [held_pool[i] for i in rng.permutation(len(held_pool))] if held_pool else []}
    cursor = {"train": 0, "heldout": 0}
    groups: list[StyleGroup] = []
    for c in range(k):
        split = "heldout" if c in held_c else "train"
        pool = pools[split]
        members = tuple(names[i] for i in np.flatnonzero(km.labels == c))
        for _ in range(min(presets_per_cluster, len(pool))):
            preset = pool[cursor[split] % len(pool)]
            cursor[split] += 1
            groups.append(StyleGroup(f"g{len(groups):03d}", c, preset.id, members, split))

    (out / "inputs").mkdir(parents=True, exist_ok=True)
    by_id = {p.id: p for p in presets}
    index = {n: i for i, n in enumerate(names)}
    for n, img in zip(names, images):
        save_image(out / "inputs" / f"{n}.png", img)
    records = []
    for g in groups:
        gdir = out / "targets" / g.group_id
        gdir.mkdir(parents=True, exist_ok=True)
        for n in g.members:
            save_image(gdir / f"{n}.png", apply_preset(images[index[n]], by_id[g.preset_id]))
            records.append(ManifestRecord(f"inputs/{n}.png", f"targets/{g.group_id}/{n}.png",
                                          g.preset_id, g.group_id, g.split))
    save_presets(out / "presets.json", presets)
    (out / "groups.json").write_text(json.dumps(
        [{**asdict(g), "members": list(g.members), "centroid_ab": km.centroids[g.cluster].round(8).tolist()}
         for g in groups], indent=1) + "\n")
    (out / "manifest.jsonl").write_text("".join(r.to_json() + "\n" for r in records))
    log.info("wrote %d pairs in %d groups to %s", len(records), len(groups), out)
    return records
