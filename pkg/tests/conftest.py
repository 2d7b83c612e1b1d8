"""Shared fixtures: the desk corpus, one trained desk model, and the acceptance report."""

import hashlib
import json
import shutil
import sys
import time
from dataclasses import asdict
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

import styleretouch  # noqa: E402
from styleretouch.model import RetouchModel  # noqa: E402
from styleretouch.presetlab import make_dataset, preset_pool, synth_corpus  # noqa: E402
from styleretouch.trainer import PairDataset, TrainConfig, read_history, train  # noqa: E402

# desk corpus: 240 images x 48 presets (8 held out) in 12 color clusters (2 held out)
CORPUS = dict(n_images=240, size=32, n_families=12, n_presets=48, k=12, heldout_clusters=2,
              heldout_presets=8, presets_per_cluster=8, seed=0)
DESK_TRAIN = TrainConfig(steps=10_000, batch_size=8, crop=16, lr=1e-3, lr_schedule="cosine", seed=0,
                         checkpoint_every=0, log_every=500)

ACCEPTANCE_LINES: dict[int, str] = {}


def build_corpus(out_dir, **overrides):
    c = {**CORPUS, **overrides}
    imgs = synth_corpus(c["n_images"], size=c["size"], seed=c["seed"], n_families=c["n_families"])
    presets = preset_pool(c["n_presets"], seed=c["seed"] + 1)
    make_dataset(imgs, presets, c["k"], out_dir, seed=c["seed"], heldout_clusters=c["heldout_clusters"],
                 heldout_presets=c["heldout_presets"], presets_per_cluster=c["presets_per_cluster"])
    return Path(out_dir) / "manifest.jsonl"


def _source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(styleretouch.__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    h.update(json.dumps([CORPUS, asdict(DESK_TRAIN)], sort_keys=True).encode())
    return h.hexdigest()[:16]


class DeskRun:
    def __init__(self, root: Path):
        self.root = root
        self.manifest = root / "ds" / "manifest.jsonl"
        self.model = RetouchModel.load(root / "run" / "model.irtc")
        self.history = read_history(root / "run" / "loss.csv")
        self.meta = json.loads((root / "meta.json").read_text())
        self._splits = {}

    def split(self, name) -> PairDataset:
        if name not in self._splits:
            self._splits[name] = PairDataset.from_manifest(self.manifest, split=name)
        return self._splits[name]

    @property
    def groups(self):
        return json.loads((self.manifest.parent / "groups.json").read_text())

    @property
    def presets(self):
        from styleretouch.presetlab import load_presets

        return {p.id: p for p in load_presets(self.manifest.parent / "presets.json")}


@pytest.fixture(scope="session")
def desk_corpus(tmp_path_factory) -> Path:
    return build_corpus(tmp_path_factory.mktemp("desk_corpus"))


@pytest.fixture(scope="session")
def desk(request, tmp_path_factory) -> DeskRun:
    """The desk model trained once per source revision.

    Training is bit-deterministic, so the result is cached under the pytest
    cache directory keyed by a hash of the package sources and configuration.
    ``--cache-clear`` forces a fresh run.
    """
    base = Path(request.config.cache.mkdir("desk_model"))
    root = base / _source_digest()
    if not (root / "meta.json").exists():
        shutil.rmtree(base, ignore_errors=True)
        root.mkdir(parents=True)
        t0 = time.perf_counter()
        manifest = build_corpus(root / "ds")
        res = train(DESK_TRAIN, PairDataset.from_manifest(manifest, split="train"), out_dir=root / "run")
        meta = {"train_seconds": res.seconds, "total_seconds": time.perf_counter() - t0}
        (root / "meta.json").write_text(json.dumps(meta))
    return DeskRun(root)


def record(criterion: int, passed: bool, detail: str) -> None:
    line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
