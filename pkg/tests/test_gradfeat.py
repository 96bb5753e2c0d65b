import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gdhaslr.gradfeat import (
    MappingFunction,
    direction_ratio,
    extract_features,
    intensity_feature,
    repeated_gradients,
    sobel_gradients,
)
from gdhaslr.imagekit import ImageMatrix, to_vector

KINDS = ["arctan", "tanh", "softsign", "sigmoid"]

images = arrays(np.float64, st.tuples(st.integers(3, 12), st.integers(3, 12)),
                elements=st.floats(0, 1, allow_nan=False))


def test_constant_image_has_zero_gradients():
    g_r, g_c = sobel_gradients(ImageMatrix(np.full((6, 5), 0.4)))
    # weights sum to zero, so only rounding survives
    np.testing.assert_allclose(g_r, 0.0, atol=1e-14)
    np.testing.assert_allclose(g_c, 0.0, atol=1e-14)


def test_horizontal_ramp():
    img = ImageMatrix(np.tile(np.arange(8) / 10.0, (6, 1)))
    g_r, g_c = sobel_gradients(img)
    inner_c = g_c[1:-1, 1:-1]
    assert np.all(inner_c > 0)
    np.testing.assert_allclose(inner_c, inner_c[0, 0])
    # (1 + 2 + 1) * (two-pixel difference of 0.2)
    assert inner_c[0, 0] == pytest.approx(0.8)
    np.testing.assert_allclose(g_r[1:-1, 1:-1], 0.0, atol=1e-15)


def test_center_pixel_matches_hand_expansion(rng):
    p = rng.uniform(0, 1, (5, 5))
    g_r, g_c = sobel_gradients(ImageMatrix(p))
    r, c = 2, 2
    want_r = (p[r + 1, c - 1] + 2 * p[r + 1, c] + p[r + 1, c + 1]
              - p[r - 1, c - 1] - 2 * p[r - 1, c] - p[r - 1, c + 1])
    want_c = (p[r - 1, c + 1] + 2 * p[r, c + 1] + p[r + 1, c + 1]
              - p[r - 1, c - 1] - 2 * p[r, c - 1] - p[r + 1, c - 1])
    assert g_r[r, c] == pytest.approx(want_r, abs=1e-14)
    assert g_c[r, c] == pytest.approx(want_c, abs=1e-14)


def test_border_uses_replicate_padding(rng):
    p = rng.uniform(0, 1, (4, 4))
    padded = np.pad(p, 1, mode="edge")
    g_r, _ = sobel_gradients(ImageMatrix(p))
    want = (padded[2, 0] + 2 * padded[2, 1] + padded[2, 2]
            - padded[0, 0] - 2 * padded[0, 1] - padded[0, 2])
    assert g_r[0, 0] == pytest.approx(want, abs=1e-14)


def test_too_small_image():
    with pytest.raises(ValueError):
        sobel_gradients(ImageMatrix(np.zeros((2, 5))))
    with pytest.raises(ValueError):
        extract_features(ImageMatrix(np.zeros((5, 2))))


def test_direction_ratio_cases():
    g = np.array([[1.5, -2.0], [0.25, 3.0]])
    np.testing.assert_array_equal(direction_ratio(g, g), np.ones((2, 2)))
    assert direction_ratio(np.array([0.0]), np.array([3.0]), eps=1e-6)[0] == pytest.approx(3e6)
    assert direction_ratio(np.array([-1e-9]), np.array([3.0]), eps=1e-6)[0] == pytest.approx(-3e6)
    out = direction_ratio(np.array([0.0, -4.0, 1e-12]), np.zeros(3))
    assert np.all(out == 0.0) and np.all(np.isfinite(out))
    with pytest.raises(ValueError):
        direction_ratio(np.zeros(2), np.zeros(3))


def test_constant_image_features_tanh():
    feats = extract_features(ImageMatrix(np.full((42, 30), 0.3)), MappingFunction("tanh", 7.3, 0.51))
    expect = math.tanh(7.3 * (0 - 0.51))
    assert expect == pytest.approx(-0.99881, abs=1e-4)
    assert len(feats) == 3
    for w in (1, 2, 3):
        np.testing.assert_array_equal(feats[w], np.full(42 * 30, expect))


def test_sigmoid_at_shift_is_half():
    m = MappingFunction("sigmoid", 7.3, 0.51)
    assert m(0.51) == 0.5


@pytest.mark.parametrize("kind", KINDS)
def test_mapping_monotone_and_bounded(kind):
    m = MappingFunction(kind, 7.3, 0.51)
    k = np.concatenate([-np.logspace(8, -8, 200), [0.0], np.logspace(-8, 8, 200)])
    out = m(k)
    assert np.all(np.diff(out) >= 0)
    lo, hi = m.codomain
    assert np.all(out >= lo) and np.all(out <= hi)


@settings(max_examples=40, deadline=None)
@given(pix=images, kind=st.sampled_from(KINDS))
def test_features_within_codomain(pix, kind):
    m = MappingFunction(kind)
    feats = extract_features(ImageMatrix(pix), m)
    lo, hi = m.codomain
    for f in feats.orders:
        assert f.shape == (pix.size,)
        assert np.all(f >= lo) and np.all(f <= hi)


@settings(max_examples=30, deadline=None)
@given(pix=images)
def test_tanh_order_one_open_interval_for_moderate_ratios(pix):
    # tanh saturates to +-1 in floating point only for |u (k - v)| > ~19
    g_r, g_c = sobel_gradients(ImageMatrix(pix))
    k = direction_ratio(g_r, g_c)
    moderate = np.abs(7.3 * (k - 0.51)) < 18
    f1 = extract_features(ImageMatrix(pix))[1]
    inner = f1[moderate.ravel(order="F")]
    assert np.all(np.abs(inner) < 1.0)


def test_order_one_composes(rng):
    img = ImageMatrix(rng.uniform(0, 1, (9, 7)))
    m = MappingFunction("softsign", 2.0, 0.1)
    g_r, g_c = sobel_gradients(img)
    direct = m(direction_ratio(g_r, g_c, 1e-8)).ravel(order="F")
    np.testing.assert_array_equal(extract_features(img, m)[1], direct)


def test_higher_orders_are_repeated_filters(rng):
    img = ImageMatrix(rng.uniform(0, 1, (9, 7)))
    g_r1, g_c1 = sobel_gradients(img)
    g_r2, g_c2 = repeated_gradients(img, 2)
    from scipy import ndimage
    from gdhaslr.gradfeat import SOBEL_COL, SOBEL_ROW

    np.testing.assert_allclose(g_r2, ndimage.correlate(g_r1, SOBEL_ROW, mode="nearest"))
    np.testing.assert_allclose(g_c2, ndimage.correlate(g_c1, SOBEL_COL, mode="nearest"))


@settings(max_examples=30, deadline=None)
@given(pix=images, scale=st.floats(0.05, 20.0))
def test_illumination_scaling_leaves_ratio(pix, scale):
    eps = 1e-8
    g_r, g_c = sobel_gradients(ImageMatrix(pix))
    scaled = np.clip(pix * scale, 0, 1)
    if not np.array_equal(scaled, pix * scale):
        return
    s_r, s_c = sobel_gradients(ImageMatrix(scaled))
    keep = (np.abs(g_r) >= eps / scale) & (np.abs(g_r) >= eps)
    # near-zero column gradients come from cancellation, so allow rounding of O(1) terms over |g_r|
    atol = 1e-14 / np.min(np.abs(g_r[keep]), initial=1.0)
    np.testing.assert_allclose(direction_ratio(s_r, s_c, eps)[keep],
                               direction_ratio(g_r, g_c, eps)[keep], rtol=1e-9, atol=atol)


def test_intensity_feature_is_vectorized_image(rng):
    img = ImageMatrix(rng.uniform(0, 1, (6, 4)))
    np.testing.assert_array_equal(intensity_feature(img), to_vector(img))


def test_mapping_validation():
    with pytest.raises(ValueError):
        MappingFunction("relu")
