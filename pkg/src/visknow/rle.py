"""Binary-mask run-length coding and pixel geometry helpers.

Masks are encoded over row-major pixel order, counts alternating 0-runs and
1-runs with the zero run first (possibly 0). decode(encode(m)) is pixel-exact.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .graph import Box, RleMask


def encode_mask(mask: np.ndarray) -> RleMask:
    """Encode a 2-D binary array (H x W) as row-major RLE."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise ValueError(f"mask must be 2-D, got shape {arr.shape}")
    h, w = arr.shape
    counts = _kernels.rle_encode_counts((arr != 0).astype(np.uint8).ravel())
    return RleMask(width=w, height=h, counts=tuple(int(c) for c in counts))


def decode_mask(rle: RleMask) -> np.ndarray:
    """Decode back to a 2-D uint8 array of shape (height, width)."""
    flat = _kernels.rle_decode(np.asarray(rle.counts, dtype=np.int64),
                               rle.width * rle.height)
    return flat.reshape(rle.height, rle.width)


def mask_area(rle: RleMask) -> int:
    return int(sum(rle.counts[1::2]))


def mask_bounds(rle: RleMask):
    """Tight bounding Box of the 1-pixels, or None for an all-zero mask."""
    arr = decode_mask(rle)
    ys, xs = np.nonzero(arr)
    if ys.size == 0:
        return None
    x1, x2 = int(xs.min()), int(xs.max())
    y1, y2 = int(ys.min()), int(ys.max())
    return Box(x1, y1, x2 - x1 + 1, y2 - y1 + 1)


def clip_mask_to_box(rle: RleMask, box: Box, slack: float = 2.0) -> RleMask:
    """Zero out pixels outside `box` expanded by `slack` px on every side."""
    arr = decode_mask(rle)
    h, w = arr.shape
    x1 = max(0, int(np.floor(box.x - slack)))
    y1 = max(0, int(np.floor(box.y - slack)))
    x2 = min(w, int(np.ceil(box.x2 + slack)))
    y2 = min(h, int(np.ceil(box.y2 + slack)))
    clipped = np.zeros_like(arr)
    if x2 > x1 and y2 > y1:
        clipped[y1:y2, x1:x2] = arr[y1:y2, x1:x2]
    return encode_mask(clipped)


def union_masks(a: RleMask, b: RleMask) -> RleMask:
    """Pixelwise OR; both masks must share image dimensions."""
    if (a.width, a.height) != (b.width, b.height):
        raise ValueError("mask dimensions differ")
    return encode_mask(decode_mask(a) | decode_mask(b))


def box_to_full_mask(box: Box, width: int, height: int) -> np.ndarray:
    """Filled-rectangle mask of `box` on a width x height canvas."""
    arr = np.zeros((height, width), dtype=np.uint8)
    x1 = max(0, int(np.floor(box.x)))
    y1 = max(0, int(np.floor(box.y)))
    x2 = min(width, int(np.ceil(box.x2)))
    y2 = min(height, int(np.ceil(box.y2)))
    if x2 > x1 and y2 > y1:
        arr[y1:y2, x1:x2] = 1
    return arr
