import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import softmax
from styleretouch.exceptions import ConfigurationError, FingerprintMismatch
from styleretouch.model import RetouchModel
from styleretouch.presetlab import apply_preset, preset_pool, synth_corpus
from styleretouch.rar import (LibraryEntry, RarConfig, ReferenceLibrary, aggregate_latents, build_library,
                              cosine_similarity, rank_by_similarity, retouch_query, retrieve_topk,
                              softmax_weights, style_transfer)

sims = st.lists(st.floats(-1, 1), min_size=1, max_size=12)


@pytest.fixture(scope="module")
def model():
    return RetouchModel.create(seed=0)


@pytest.fixture(scope="module")
def pairs():
    imgs = synth_corpus(6, size=16, seed=0, n_families=3)
    presets = preset_pool(3, seed=0)
    return [(x, apply_preset(x, presets[i % 3])) for i, x in enumerate(imgs)]


def test_cosine_examples():
    c = np.array([0.2, 0.3, 0.5])
    assert cosine_similarity(c, c) == pytest.approx(1.0)
    assert cosine_similarity([1, 0, 0], [0, 1, 0]) == 0.0
    assert cosine_similarity([1, 0, 0], [0.5, 0.5, 0]) == pytest.approx(1 / math.sqrt(2))
    with pytest.raises(ConfigurationError):
        cosine_similarity([0, 0], [1, 0])


def test_rank_examples():
    s = [0.9, 0.2, 0.9, 0.5, 0.1]
    ids = [0, 1, 2, 3, 4]
    assert [n.id for n in rank_by_similarity(s, ids, 3)] == [0, 2, 3]
    # brute force: sort by (-s, id)
    assert [n.id for n in rank_by_similarity(s, ids, 10)] == [i for _, i in sorted(zip([-v for v in s], ids))]
    assert [n.id for n in rank_by_similarity(s, ids, 1)] == [0]
    # ties follow id, not position
    assert [n.id for n in rank_by_similarity([0.5, 0.5], [9, 3], 2)] == [3, 9]


def test_weights_examples():
    assert np.array_equal(softmax_weights([0.3], 0.1), [1.0])
    assert np.allclose(softmax_weights([0.4, 0.4, 0.4], 0.1), 1 / 3)
    assert np.allclose(softmax_weights([0.9, 0.5], 0.1), [0.98201, 0.01799], atol=1e-5)
    assert np.allclose(softmax_weights([0.9, 0.5], 0.1), softmax([0.9, 0.5], 0.1), atol=1e-15)
    assert np.array_equal(softmax_weights([0.1, 0.9], math.inf), [0.5, 0.5])
    with pytest.raises(ConfigurationError):
        softmax_weights([0.1], 0.0)
    with pytest.raises(ConfigurationError):
        softmax_weights([], 1.0)


@settings(max_examples=100, deadline=None)
@given(sims, st.floats(1e-3, 1e3))
def test_weights_sum_to_one(s, tau):
    assert abs(softmax_weights(s, tau).sum() - 1) < 1e-9


@settings(max_examples=100, deadline=None)
@given(sims, st.integers(0, 11), st.floats(0, 0.5))
def test_weight_monotone_in_own_similarity(s, i, bump):
    i %= len(s)
    w0 = softmax_weights(s, 0.1)[i]
    s2 = list(s)
    s2[i] += bump
    assert softmax_weights(s2, 0.1)[i] >= w0 - 1e-15


def test_tau_limits():
    s = [0.3, 0.8, 0.5]
    assert softmax_weights(s, 1e-6)[1] > 0.999
    z = np.random.default_rng(0).normal(size=(3, 4))
    zq, _ = aggregate_latents(s, z, 1e6)
    assert np.abs(zq - z.mean(axis=0)).max() < 1e-6


def test_aggregate_single_and_shape_check():
    z = np.arange(4.0)[None]
    zq, w = aggregate_latents([0.2], z, 0.1)
    assert np.array_equal(zq, z[0]) and np.array_equal(w, [1.0])
    with pytest.raises(ConfigurationError):
        aggregate_latents([0.2, 0.3], z, 0.1)


def test_scaling_similarities_keeps_neighbors():
    s = list(np.random.default_rng(1).random(8))
    ids = list(range(8))
    a = [n.id for n in rank_by_similarity(s, ids, 4)]
    b = [n.id for n in rank_by_similarity([3 * v for v in s], ids, 4)]
    assert a == b


def test_library_build_roundtrip(tmp_path, model, pairs):
    lib = build_library(pairs, model)
    assert len(lib) == 6 and lib.fingerprint == model.fingerprint()
    lib.save(tmp_path / "lib.bin")
    back = ReferenceLibrary.load(tmp_path / "lib.bin")
    assert back.fingerprint == lib.fingerprint and len(back) == 6
    for a, b in zip(lib.entries, back.entries):
        assert a.id == b.id and a.z.tobytes() == b.z.tobytes() and a.c.tobytes() == b.c.tobytes()
    lib.save(tmp_path / "again.bin")
    assert (tmp_path / "lib.bin").read_bytes() == (tmp_path / "again.bin").read_bytes()


def test_library_from_paths(tmp_path, model, pairs):
    from styleretouch.colorlab import save_image

    x, y = pairs[0]
    save_image(tmp_path / "x.png", x)
    save_image(tmp_path / "y.png", y)
    lib = build_library([(tmp_path / "x.png", tmp_path / "y.png")], model)
    assert lib.entries[0].input_path.endswith("x.png")
    with pytest.raises(ConfigurationError, match="entry 0"):
        build_library([(tmp_path / "missing.png", tmp_path / "y.png")], model)


def test_duplicate_pair_and_empty_library(model, pairs):
    lib = build_library([pairs[0], pairs[0]], model)
    a, b = lib.entries
    assert a.z.tobytes() == b.z.tobytes() and a.c.tobytes() == b.c.tobytes()
    empty = build_library([], model)
    assert len(empty) == 0
    with pytest.raises(ConfigurationError):
        retouch_query(pairs[0][0], empty, model)
    with pytest.raises(ConfigurationError):
        retrieve_topk(empty, np.ones(272), 3)


def test_library_rejects_duplicate_ids():
    e = LibraryEntry(1, "", "", np.zeros(2, np.float32), np.ones(3, np.float32))
    with pytest.raises(ConfigurationError):
        ReferenceLibrary((e, e), "fp", 2)


def test_single_entry_query_equals_reconstruct(model, pairs):
    x, y = pairs[1]
    lib = build_library([(x, y)], model)
    res = retouch_query(x, lib, model)
    assert res.image.tobytes() == model.reconstruct(x, y).tobytes()
    assert [n.id for n in res.neighbors] == [0] and res.weights.tolist() == [1.0]


def test_retrieval_is_deterministic(model, pairs):
    lib = build_library(pairs, model)
    q = pairs[2][0]
    a = retouch_query(q, lib, model, RarConfig(top_k=6))
    b = retouch_query(q, lib, model, RarConfig(top_k=6))
    assert a.neighbors == b.neighbors and a.image.tobytes() == b.image.tobytes()
    assert len(a.neighbors) == 6
    sims_sorted = [n.similarity for n in a.neighbors]
    assert sims_sorted == sorted(sims_sorted, reverse=True)


def test_fingerprint_mismatch(model, pairs):
    lib = build_library(pairs[:2], model)
    other = RetouchModel.create(seed=1)
    with pytest.raises(FingerprintMismatch):
        retouch_query(pairs[0][0], lib, other)


def test_low_similarity_warns(model, caplog):
    red = np.zeros((8, 8, 3), np.float32)
    red[..., 0] = 1.0
    blue = np.zeros((8, 8, 3), np.float32)
    blue[..., 2] = 1.0
    lib = build_library([(red, red)], model)
    with caplog.at_level(logging.WARNING):
        retouch_query(blue, lib, model)
    assert "dissimilar" in caplog.text


def test_style_transfer_shape_follows_content(model):
    content = np.random.default_rng(0).random((10, 14, 3)).astype(np.float32)
    style = np.random.default_rng(1).random((20, 20, 3)).astype(np.float32)
    assert style_transfer(content, style, model).shape == (10, 14, 3)


def test_config_validation():
    with pytest.raises(ConfigurationError):
        RarConfig(top_k=0)
    with pytest.raises(ConfigurationError):
        RarConfig(tau=-1)
    assert RarConfig() == RarConfig(top_k=3, tau=0.1)
