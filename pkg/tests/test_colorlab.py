import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from styleretouch.colorlab import (AB_BINS, FEATURE_DIM, L_BINS, ab_histogram, check_image, chi_square,
                                   color_tone_feature, lab_to_srgb, load_image, save_image, srgb_to_lab)
from styleretouch.exceptions import ConfigurationError

# hand evaluation: gray 0.5 -> linear ((0.5+0.055)/1.055)**2.4 = 0.214041140
# -> L = 116 * cbrt(0.214041140) - 16, a = b = 0 for a neutral color
LAB_GRAY_HALF = (53.38896474111432, 0.0, 0.0)

images = arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.just(3)),
                elements=st.floats(0, 1))


def px(*rgb):
    return np.array([[rgb]], dtype=np.float64)


def test_white_and_black():
    L, a, b = srgb_to_lab(px(1, 1, 1))[0, 0]
    assert L == pytest.approx(100, abs=0.01)
    assert abs(a) < 0.01 and abs(b) < 0.01
    assert np.allclose(srgb_to_lab(px(0, 0, 0))[0, 0], 0, atol=1e-12)


def test_gray_half_frozen():
    assert np.allclose(srgb_to_lab(px(0.5, 0.5, 0.5))[0, 0], LAB_GRAY_HALF, atol=1e-6)


def test_agrees_with_skimage_on_random_colors():
    color = pytest.importorskip("skimage.color")
    rgb = np.random.default_rng(0).random((20, 20, 3))
    # skimage rounds its matrix differently, hence the loose tolerance
    assert np.abs(srgb_to_lab(rgb) - color.rgb2lab(rgb)).max() < 0.02


@settings(max_examples=50, deadline=None)
@given(images)
def test_lab_roundtrip(img):
    assert np.abs(lab_to_srgb(srgb_to_lab(img)) - img).max() < 1e-3


def test_feature_black_image():
    h = color_tone_feature(np.zeros((4, 4, 3)))
    assert h.shape == (FEATURE_DIM,) == (272,)
    assert h[0] == 1.0 and h[1:L_BINS].sum() == 0
    # (a, b) = (0, 0) lands in bin 8 of [-128, 127] on both axes
    expected = np.zeros(AB_BINS * AB_BINS)
    expected[8 * AB_BINS + 8] = 1.0
    assert np.array_equal(h[L_BINS:], expected)


def test_feature_black_white_pair():
    img = np.array([[[0, 0, 0], [1, 1, 1]]], dtype=np.float64)
    h_l = color_tone_feature(img)[:L_BINS]
    assert h_l[0] == 0.5 and h_l[15] == 0.5 and h_l.sum() == 1.0


@settings(max_examples=50, deadline=None)
@given(images)
def test_feature_normalized(img):
    h = color_tone_feature(img)
    assert abs(h[:L_BINS].sum() - 1) < 1e-9
    assert abs(h[L_BINS:].sum() - 1) < 1e-9
    assert (h >= 0).all()


def test_feature_permutation_invariant():
    rng = np.random.default_rng(1)
    img = rng.random((8, 8, 3))
    flat = img.reshape(-1, 3)[rng.permutation(64)].reshape(8, 8, 3)
    assert np.array_equal(color_tone_feature(img), color_tone_feature(flat))


def test_ab_histogram_is_tail():
    img = np.random.default_rng(2).random((5, 5, 3))
    assert np.array_equal(ab_histogram(img), color_tone_feature(img)[L_BINS:])


def test_chi_square_examples():
    h = np.random.default_rng(3).random(10)
    assert chi_square(h, h) == 0.0
    a, b = np.zeros(16), np.zeros(16)
    a[2], b[7] = 1, 1
    assert chi_square(a, b) == pytest.approx(2.0, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(images, images)
def test_chi_square_metric_properties(x, y):
    h1, h2 = color_tone_feature(x), color_tone_feature(y)
    d = chi_square(h1, h2)
    assert d >= 0
    assert d == chi_square(h2, h1)
    if d == 0:
        assert np.array_equal(h1, h2)


def test_chi_square_shape_mismatch():
    with pytest.raises(ConfigurationError):
        chi_square(np.ones(3), np.ones(4))


@pytest.mark.parametrize("bad", [np.zeros((4, 4)), np.zeros((4, 4, 4)), np.zeros((0, 4, 3)),
                                 np.full((2, 2, 3), 1.5), np.full((2, 2, 3), np.nan),
                                 np.zeros((2, 2, 3), dtype=np.uint8)])
def test_check_image_rejects(bad):
    with pytest.raises(ConfigurationError):
        check_image(bad)


@pytest.mark.parametrize("suffix", [".png", ".ppm"])
def test_image_io_roundtrip(tmp_path, suffix):
    img = np.random.default_rng(4).integers(0, 256, (5, 7, 3)).astype(np.float32) / 255
    save_image(tmp_path / f"a{suffix}", img)
    back = load_image(tmp_path / f"a{suffix}")
    assert back.dtype == np.float32 and back.shape == (5, 7, 3)
    assert np.array_equal(back, img)
