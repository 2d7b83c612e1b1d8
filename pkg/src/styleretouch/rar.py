"""Retrieval-augmented retouching over a library of encoded reference pairs.

A query image is embedded, the ``K`` references with the most similar content
(cosine similarity of embeddings) are retrieved, and their style latents are
blended with softmax weights ``exp(s_i / tau)`` before decoding the query.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .colorlab import FEATURE_DIM, color_tone_feature, load_image
from .exceptions import ConfigurationError, FingerprintMismatch
from .model import RetouchModel

log = logging.getLogger(__name__)

LIBRARY_VERSION = 1
DEFAULT_EMBEDDING = "cielab-hist-272"
LOW_SIMILARITY = 0.2

# name -> image embedding function; register alternatives here
EMBEDDERS: dict[str, Callable[[np.ndarray], np.ndarray]] = {DEFAULT_EMBEDDING: color_tone_feature}


@dataclass(frozen=True)
class RarConfig:
    top_k: int = 3
    tau: float = 0.1

    def __post_init__(self):
        if self.top_k < 1:
            raise ConfigurationError("top_k must be >= 1")
        if not self.tau > 0:
            raise ConfigurationError("tau must be > 0")


@dataclass(frozen=True)
class LibraryEntry:
    id: int
    input_path: str
    target_path: str
    z: np.ndarray
    c: np.ndarray


@dataclass(frozen=True)
class ReferenceLibrary:
    entries: tuple[LibraryEntry, ...]
    fingerprint: str
    latent_dim: int
    embedding: str = DEFAULT_EMBEDDING

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ConfigurationError("library entry ids must be unique")
        if any(e.z.shape != (self.latent_dim,) for e in self.entries):
            raise ConfigurationError("library latents have mixed dimensions")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def latents(self) -> np.ndarray:
        return np.stack([e.z for e in self.entries]) if self.entries else np.zeros((0, self.latent_dim), np.float32)

    @property
    def embeddings(self) -> np.ndarray:
        return np.stack([e.c for e in self.entries])

    def save(self, path: str | Path) -> None:
        """One JSON header line, then float32 little-endian ``z`` and ``c`` per entry."""
        emb_dim = int(self.entries[0].c.size) if self.entries else FEATURE_DIM
        header = {
            "version": LIBRARY_VERSION,
            "latent_dim": self.latent_dim,
            "embedding_dim": emb_dim,
            "embedding": self.embedding,
            "fingerprint": self.fingerprint,
            "entries": [{"id": e.id, "input_path": e.input_path, "target_path": e.target_path} for e in self.entries],
        }
        with open(path, "wb") as f:
            f.write(json.dumps(header).encode("utf-8") + b"\n")
            for e in self.entries:
                f.write(np.ascontiguousarray(e.z, dtype="<f4").tobytes())
                f.write(np.ascontiguousarray(e.c, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> ReferenceLibrary:
        with open(path, "rb") as f:
            header = json.loads(f.readline().decode("utf-8"))
            payload = f.read()
        if header.get("version") != LIBRARY_VERSION:
            raise ConfigurationError(f"unsupported library version {header.get('version')}")
        d, e = header["latent_dim"], header["embedding_dim"]
        meta = header["entries"]
        data = np.frombuffer(payload, dtype="<f4")
        if data.size != len(meta) * (d + e):
            raise ConfigurationError(f"library {path}: payload size does not match header")
        data = data.reshape(len(meta), d + e).astype(np.float32)
        entries = tuple(LibraryEntry(int(m["id"]), m["input_path"], m["target_path"], row[:d].copy(), row[d:].copy())
                        for m, row in zip(meta, data))
        return cls(entries, header["fingerprint"], d, header.get("embedding", DEFAULT_EMBEDDING))


def content_embedding(img: np.ndarray, embedding: str = DEFAULT_EMBEDDING) -> np.ndarray:
    return np.asarray(EMBEDDERS[embedding](img), dtype=np.float32)


def build_library(pairs: Sequence, model: RetouchModel, paths: Sequence[tuple[str, str]] | None = None,
                  embedding: str = DEFAULT_EMBEDDING) -> ReferenceLibrary:
    """Encode every (input, target) pair; items may be arrays or image paths."""
    entries = []
    for i, (x, y) in enumerate(pairs):
        try:
            xi = load_image(x) if isinstance(x, (str, Path)) else x
            yi = load_image(y) if isinstance(y, (str, Path)) else y
        except OSError as exc:
            raise ConfigurationError(f"library entry {i}: cannot read image ({exc})") from exc
        if paths is not None:
            ip, tp = paths[i]
        else:
            ip = str(x) if isinstance(x, (str, Path)) else ""
            tp = str(y) if isinstance(y, (str, Path)) else ""
        z = model.encode(xi, yi).astype(np.float32)
        entries.append(LibraryEntry(i, ip, tp, z, content_embedding(xi, embedding)))
    return ReferenceLibrary(tuple(entries), model.fingerprint(), model.enc_cfg.latent_dim, embedding)


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ConfigurationError("cosine similarity of a zero vector is undefined")
    return float(a @ b / (na * nb))


@dataclass(frozen=True)
class Neighbor:
    index: int
    id: int
    similarity: float


def rank_by_similarity(similarities: Sequence[float], ids: Sequence[int], k: int) -> list[Neighbor]:
    """Top ``k`` by descending similarity, ties broken by ascending id."""
    if len(similarities) == 0:
        raise ConfigurationError("cannot retrieve from an empty library")
    order = sorted(range(len(similarities)), key=lambda i: (-similarities[i], ids[i]))
    return [Neighbor(i, ids[i], float(similarities[i])) for i in order[:min(k, len(order))]]


def retrieve_topk(library: ReferenceLibrary, c_q: np.ndarray, k: int) -> list[Neighbor]:
    if len(library) == 0:
        raise ConfigurationError("cannot retrieve from an empty library")
    sims = [cosine_similarity(c_q, e.c) for e in library.entries]
    return rank_by_similarity(sims, [e.id for e in library.entries], k)


def softmax_weights(similarities: Sequence[float], tau: float) -> np.ndarray:
    """``exp(s_i / tau)`` normalized, with max-subtraction; ``tau = inf`` gives uniform weights."""
    s = np.asarray(similarities, dtype=np.float64)
    if s.size == 0:
        raise ConfigurationError("need at least one neighbor")
    if not tau > 0:
        raise ConfigurationError("tau must be > 0")
    if math.isinf(tau):
        return np.full(s.size, 1.0 / s.size)
    e = np.exp((s - s.max()) / tau)
    return e / e.sum()


def aggregate_latents(similarities: Sequence[float], latents: np.ndarray, tau: float):
    """Return ``(z_q, weights)`` with ``z_q = sum_i w_i z_i``."""
    w = softmax_weights(similarities, tau)
    z = np.asarray(latents, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] != w.size:
        raise ConfigurationError("one latent per similarity is required")
    return w @ z, w


@dataclass
class RetouchResult:
    image: np.ndarray
    neighbors: list[Neighbor]
    weights: np.ndarray
    z: np.ndarray


def check_fingerprint(library: ReferenceLibrary, model: RetouchModel) -> None:
    fp = model.fingerprint()
    if library.fingerprint != fp:
        raise FingerprintMismatch(
            f"library was built with model {library.fingerprint[:12]}, decoder is {fp[:12]}")


def retouch_query(x_q: np.ndarray, library: ReferenceLibrary, model: RetouchModel,
                  config: RarConfig = RarConfig()) -> RetouchResult:
    check_fingerprint(library, model)
    if len(library) == 0:
        raise ConfigurationError("cannot retouch against an empty library")
    c_q = content_embedding(x_q, library.embedding)
    neighbors = retrieve_topk(library, c_q, config.top_k)
    if neighbors[0].similarity < LOW_SIMILARITY:
        log.warning("query is dissimilar to every reference (best similarity %.3f)", neighbors[0].similarity)
    latents = np.stack([library.entries[n.index].z for n in neighbors])
    z_q, w = aggregate_latents([n.similarity for n in neighbors], latents, config.tau)
    return RetouchResult(model.decode(x_q, z_q), neighbors, w, z_q)


def style_transfer(content: np.ndarray, style: np.ndarray, model: RetouchModel) -> np.ndarray:
    """Treat ``(content, style)`` as an (input, target) pair and re-apply its latent to ``content``."""
    return model.decode(content, model.encode(content, style))
