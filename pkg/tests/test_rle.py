import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from visknow.graph import Box, RleMask
from visknow.rle import (box_to_full_mask, clip_mask_to_box, decode_mask,
                         encode_mask, mask_area, mask_bounds, union_masks)

masks_2d = hnp.arrays(dtype=np.uint8,
                      shape=st.tuples(st.integers(1, 20), st.integers(1, 20)),
                      elements=st.integers(0, 1))


@settings(max_examples=150, deadline=None)
@given(masks_2d)
def test_encode_decode_round_trip(arr):
    rle = encode_mask(arr)
    assert rle.width == arr.shape[1] and rle.height == arr.shape[0]
    np.testing.assert_array_equal(decode_mask(rle), arr)
    assert mask_area(rle) == int(arr.sum())


def test_encode_rejects_non_2d():
    with pytest.raises(ValueError):
        encode_mask(np.zeros(6, dtype=np.uint8))


def test_rle_mask_validates_pixel_count():
    with pytest.raises(ValueError):
        RleMask(width=3, height=2, counts=(4, 1))


def test_mask_bounds_tight_box():
    arr = np.zeros((10, 12), dtype=np.uint8)
    arr[2:5, 3:9] = 1
    bounds = mask_bounds(encode_mask(arr))
    assert bounds == Box(3, 2, 6, 3)
    assert mask_bounds(encode_mask(np.zeros((4, 4), dtype=np.uint8))) is None


def test_clip_mask_to_box_keeps_slack_margin():
    arr = np.ones((20, 20), dtype=np.uint8)
    rle = encode_mask(arr)
    clipped = decode_mask(clip_mask_to_box(rle, Box(5, 5, 4, 4), slack=2.0))
    # rows/cols inside [3, 11) survive, everything else is zeroed
    assert clipped[3:11, 3:11].all()
    assert clipped.sum() == 8 * 8
    tight = decode_mask(clip_mask_to_box(rle, Box(5, 5, 4, 4), slack=0.0))
    assert tight.sum() == 16


def test_union_masks_is_pixelwise_or():
    rng = np.random.default_rng(5)
    a = (rng.random((9, 7)) < 0.4).astype(np.uint8)
    b = (rng.random((9, 7)) < 0.4).astype(np.uint8)
    got = decode_mask(union_masks(encode_mask(a), encode_mask(b)))
    np.testing.assert_array_equal(got, a | b)


def test_union_masks_rejects_dimension_mismatch():
    with pytest.raises(ValueError):
        union_masks(encode_mask(np.zeros((2, 2), dtype=np.uint8)),
                    encode_mask(np.zeros((3, 3), dtype=np.uint8)))


def test_box_to_full_mask_rasterizes_and_clamps():
    arr = box_to_full_mask(Box(1.2, 0.6, 2.0, 1.0), width=6, height=4)
    assert arr.shape == (4, 6)
    # floor/ceil cover every partially-touched pixel
    assert arr[0:2, 1:4].sum() == arr.sum() == 6
    off_canvas = box_to_full_mask(Box(4, 3, 10, 10), width=6, height=4)
    assert off_canvas[3, 4] == 1 and off_canvas.sum() == 2
