"""Flow-based mask propagation, attention fusion, dice metric, mask centroid."""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from limbscan.errors import DimensionMismatch, EmptyMask
from limbscan.flowseg import (attention_fuse, dice, dice_loss, mask_centroid,
                              predict_mask)


def _brute_predict(mask, flow):
    h, w = mask.shape
    out = np.zeros_like(mask)
    for r in range(h):
        for c in range(w):
            if mask[r, c]:
                tr = r + int(np.rint(flow[0, r, c]))
                tc = c + int(np.rint(flow[1, r, c]))
                if 0 <= tr < h and 0 <= tc < w:
                    out[tr, tc] = 1
    return out


masks = st.integers(0, 10**9).map(
    lambda s: np.random.default_rng(s).integers(0, 2, (12, 12)).astype(np.uint8))


class TestPredictMask:
    def test_zero_flow_identity(self, rng):
        m = rng.integers(0, 2, (16, 16)).astype(np.uint8)
        np.testing.assert_array_equal(predict_mask(m, np.zeros((2, 16, 16))), m)

    def test_single_pixel_constant_flow(self):
        m = np.zeros((8, 8), dtype=np.uint8)
        m[3, 2] = 1
        flow = np.zeros((2, 8, 8))
        flow[0] = 1.0  # +1 row
        out = predict_mask(m, flow)
        expect = np.zeros_like(m)
        expect[4, 2] = 1
        np.testing.assert_array_equal(out, expect)

    def test_out_of_bounds_dropped(self):
        m = np.ones((4, 4), dtype=np.uint8)
        flow = np.zeros((2, 4, 4))
        flow[1] = 10.0
        assert predict_mask(m, flow).sum() == 0

    def test_collision_merges(self):
        m = np.zeros((4, 4), dtype=np.uint8)
        m[0, 0] = m[0, 2] = 1
        flow = np.zeros((2, 4, 4))
        flow[1, 0, 0] = 1.0
        flow[1, 0, 2] = -1.0
        out = predict_mask(m, flow)
        assert out.sum() == 1 and out[0, 1] == 1

    @settings(max_examples=60, deadline=None)
    @given(mask=masks, seed=st.integers(0, 10**9))
    def test_matches_brute_force(self, mask, seed):
        r = np.random.default_rng(seed)
        flow = r.uniform(-5.0, 5.0, (2, 12, 12))
        np.testing.assert_array_equal(predict_mask(mask, flow),
                                      _brute_predict(mask, flow))

    def test_injective_integer_flow_invertible(self, rng):
        m = rng.integers(0, 2, (10, 10)).astype(np.uint8)
        m[0, :] = m[-1, :] = 0  # keep the shift in bounds
        flow = np.zeros((2, 10, 10))
        flow[0] = 1.0
        fwd = predict_mask(m, flow)
        back = np.zeros((2, 10, 10))
        back[0] = -1.0
        np.testing.assert_array_equal(predict_mask(fwd, back), m)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            predict_mask(np.zeros((4, 4), dtype=np.uint8), np.zeros((2, 5, 5)))
        with pytest.raises(DimensionMismatch):
            predict_mask(np.zeros(4, dtype=np.uint8), np.zeros((2, 4, 4)))

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            predict_mask(np.full((3, 3), 2), np.zeros((2, 3, 3)))

    def test_rejects_non_finite_flow(self):
        flow = np.zeros((2, 3, 3))
        flow[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            predict_mask(np.zeros((3, 3), dtype=np.uint8), flow)


class TestAttentionFuse:
    def test_zero_features(self, rng):
        out = attention_fuse(np.zeros((3, 5, 5)), rng.normal(size=(5, 5)))
        np.testing.assert_array_equal(out, np.zeros((3, 5, 5)))

    def test_zero_attention_scales_by_three_halves(self, rng):
        f = rng.normal(size=(4, 6, 6))
        np.testing.assert_allclose(attention_fuse(f, np.zeros((6, 6))), 1.5 * f,
                                   atol=1e-15)

    def test_saturated_attention_doubles(self, rng):
        f = rng.normal(size=(2, 4, 4))
        np.testing.assert_allclose(attention_fuse(f, np.full((4, 4), 1e3)),
                                   2.0 * f, atol=1e-6)

    def test_elementwise_reference(self, rng):
        f = rng.normal(size=(3, 7, 5))
        a = rng.normal(size=(7, 5))
        out = attention_fuse(f, a)
        for ch in range(3):
            for r in range(7):
                for c in range(5):
                    gate = 1.0 / (1.0 + np.exp(-a[r, c]))
                    assert abs(out[ch, r, c] - (f[ch, r, c] * (1.0 + gate))) < 1e-12

    def test_bounded_by_twice_features(self, rng):
        f = rng.normal(size=(3, 8, 8))
        out = attention_fuse(f, rng.normal(0.0, 5.0, (8, 8)))
        assert np.all(np.abs(out) <= 2.0 * np.abs(f) + 1e-12)

    def test_leading_singleton_channel_accepted(self, rng):
        f = rng.normal(size=(2, 3, 3))
        a = rng.normal(size=(1, 3, 3))
        np.testing.assert_array_equal(attention_fuse(f, a), attention_fuse(f, a[0]))

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            attention_fuse(np.zeros((2, 4, 4)), np.zeros((5, 5)))
        with pytest.raises(DimensionMismatch):
            attention_fuse(np.zeros((4, 4)), np.zeros((4, 4)))


class TestDice:
    def test_identical(self, rng):
        m = rng.integers(0, 2, (8, 8)).astype(np.uint8)
        m[0, 0] = 1
        assert dice(m, m) == 1.0
        assert dice_loss(m, m) == 0.0

    def test_disjoint(self):
        g = np.zeros((4, 4), dtype=np.uint8)
        s = np.zeros((4, 4), dtype=np.uint8)
        g[0, 0] = 1
        s[3, 3] = 1
        assert dice(g, s) == 0.0

    def test_shifted_block(self):
        g = np.zeros((4, 5), dtype=np.uint8)
        s = np.zeros((4, 5), dtype=np.uint8)
        g[1:3, 1:3] = 1
        s[1:3, 2:4] = 1
        assert dice(g, s) == 0.5

    def test_both_empty(self):
        z = np.zeros((3, 3), dtype=np.uint8)
        assert dice(z, z) == 1.0

    @settings(max_examples=40, deadline=None)
    @given(a=masks, b=masks)
    def test_symmetric_and_one_iff_equal(self, a, b):
        assert dice(a, b) == dice(b, a)
        assert (dice(a, b) == 1.0) == np.array_equal(a, b)
        assert 0.0 <= dice(a, b) <= 1.0

    def test_shape_mismatch(self):
        with pytest.raises(DimensionMismatch):
            dice(np.zeros((3, 3), dtype=np.uint8), np.zeros((3, 4), dtype=np.uint8))


class TestMaskCentroid:
    def test_single_pixel(self):
        m = np.zeros((4, 8), dtype=np.uint8)
        m[2, 5] = 1
        assert mask_centroid(m) == 5.0

    def test_two_pixels_symmetric(self):
        m = np.zeros((4, 10), dtype=np.uint8)
        m[0, 2] = m[3, 8] = 1
        assert mask_centroid(m) == 5.0

    def test_matches_double_loop(self, rng):
        m = rng.integers(0, 2, (9, 11)).astype(np.uint8)
        m[4, 5] = 1
        num = sum(c for r in range(9) for c in range(11) if m[r, c])
        assert mask_centroid(m) == pytest.approx(num / m.sum(), abs=1e-12)

    def test_within_column_bounds(self, rng):
        m = rng.integers(0, 2, (6, 20)).astype(np.uint8)
        m[0, 7] = 1
        cols = np.nonzero(m.any(axis=0))[0]
        assert cols[0] <= mask_centroid(m) <= cols[-1]

    def test_empty_raises(self):
        with pytest.raises(EmptyMask):
            mask_centroid(np.zeros((3, 3), dtype=np.uint8))
