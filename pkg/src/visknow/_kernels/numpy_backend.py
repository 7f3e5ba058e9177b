"""Pure-numpy implementations of the hot numeric kernels.

This is the fallback path; `visknow._kernels.numba_backend` carries jitted
versions of the same functions with identical semantics.
"""

import numpy as np


def rle_encode_counts(flat):
    """Run lengths of a flat 0/1 array, first run counting zeros (may be 0)."""
    flat = np.ascontiguousarray(flat, dtype=np.uint8)
    n = flat.size
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    change = np.flatnonzero(np.diff(flat)) + 1
    bounds = np.concatenate(([0], change, [n]))
    counts = np.diff(bounds).astype(np.int64)
    if flat[0] == 1:
        counts = np.concatenate(([0], counts))
    return counts


def rle_decode(counts, total):
    """Inverse of rle_encode_counts; returns a flat uint8 array of length total."""
    counts = np.asarray(counts, dtype=np.int64)
    values = np.zeros(counts.size, dtype=np.uint8)
    values[1::2] = 1
    out = np.repeat(values, counts)
    if out.size != total:
        raise ValueError(f"rle counts sum to {out.size}, expected {total}")
    return out


def box_iou_matrix(a, b):
    """Pairwise IoU of (x, y, w, h) boxes; a is (n,4), b is (m,4)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ax1, ay1 = a[:, 0], a[:, 1]
    ax2, ay2 = a[:, 0] + a[:, 2], a[:, 1] + a[:, 3]
    bx1, by1 = b[:, 0], b[:, 1]
    bx2, by2 = b[:, 0] + b[:, 2], b[:, 1] + b[:, 3]
    ix = np.maximum(0.0, np.minimum(ax2[:, None], bx2[None, :]) - np.maximum(ax1[:, None], bx1[None, :]))
    iy = np.maximum(0.0, np.minimum(ay2[:, None], by2[None, :]) - np.maximum(ay1[:, None], by1[None, :]))
    inter = ix * iy
    area_a = (a[:, 2] * a[:, 3])[:, None]
    area_b = (b[:, 2] * b[:, 3])[None, :]
    union = area_a + area_b - inter
    out = np.zeros_like(inter)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def mask_inter_union(pred, gold):
    """Pixel intersection and union counts of two flat 0/1 masks."""
    pred = np.asarray(pred, dtype=np.uint8)
    gold = np.asarray(gold, dtype=np.uint8)
    inter = int(np.count_nonzero(pred & gold))
    union = int(np.count_nonzero(pred | gold))
    return inter, union


def greedy_match(iou, thresh):
    """Match predictions (rows, in score order) to golds (cols) greedily.

    Each prediction takes the still-unmatched gold with the highest IoU that
    clears `thresh`. Returns the matched gold index per prediction, -1 if none.
    """
    iou = np.asarray(iou, dtype=np.float64)
    n_pred, n_gold = iou.shape
    matched = np.full(n_pred, -1, dtype=np.int64)
    taken = np.zeros(n_gold, dtype=np.bool_)
    for p in range(n_pred):
        best, best_j = thresh, -1
        for j in range(n_gold):
            if not taken[j] and iou[p, j] >= best:
                best, best_j = iou[p, j], j
        if best_j >= 0:
            matched[p] = best_j
            taken[best_j] = True
    return matched


def sgd_update(table, rows, grads, lr):
    """In-place SGD step on unique rows of an embedding table."""
    table[rows] -= lr * grads


def adagrad_update(table, accum, rows, grads, lr, eps):
    """In-place Adagrad step on unique rows of an embedding table."""
    accum[rows] += grads * grads
    table[rows] -= lr * grads / (np.sqrt(accum[rows]) + eps)
