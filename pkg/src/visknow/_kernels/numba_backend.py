"""Numba-jitted versions of the hot kernels.

Semantics match `numpy_backend` exactly; the jitted loops win once masks,
detection sets, or embedding batches get large. Compiled artifacts are cached
on disk so the compile cost is paid once per environment.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _encode_loop(flat):
    n = flat.size
    counts = np.empty(n + 1, dtype=np.int64)
    k = 0
    current = np.uint8(0)
    run = 0
    for i in range(n):
        if flat[i] == current:
            run += 1
        else:
            counts[k] = run
            k += 1
            current = flat[i]
            run = 1
    counts[k] = run
    k += 1
    return counts[:k]


def rle_encode_counts(flat):
    flat = np.ascontiguousarray(flat, dtype=np.uint8)
    if flat.size == 0:
        return np.zeros(0, dtype=np.int64)
    return _encode_loop(flat)


@njit(cache=True)
def _decode_loop(counts, total):
    out = np.zeros(total, dtype=np.uint8)
    pos = 0
    value = np.uint8(0)
    for c in counts:
        if value == 1:
            for i in range(pos, pos + c):
                out[i] = 1
        pos += c
        value = np.uint8(1 - value)
    return out


def rle_decode(counts, total):
    counts = np.ascontiguousarray(counts, dtype=np.int64)
    if int(counts.sum()) != total:
        raise ValueError(f"rle counts sum to {int(counts.sum())}, expected {total}")
    return _decode_loop(counts, total)


@njit(cache=True)
def _box_iou_loop(a, b):
    n, m = a.shape[0], b.shape[0]
    out = np.zeros((n, m), dtype=np.float64)
    for i in range(n):
        ax1, ay1 = a[i, 0], a[i, 1]
        ax2, ay2 = a[i, 0] + a[i, 2], a[i, 1] + a[i, 3]
        area_a = a[i, 2] * a[i, 3]
        for j in range(m):
            bx1, by1 = b[j, 0], b[j, 1]
            bx2, by2 = b[j, 0] + b[j, 2], b[j, 1] + b[j, 3]
            ix = min(ax2, bx2) - max(ax1, bx1)
            iy = min(ay2, by2) - max(ay1, by1)
            if ix <= 0.0 or iy <= 0.0:
                continue
            inter = ix * iy
            union = area_a + b[j, 2] * b[j, 3] - inter
            if union > 0.0:
                out[i, j] = inter / union
    return out


def box_iou_matrix(a, b):
    a = np.ascontiguousarray(np.asarray(a, dtype=np.float64).reshape(-1, 4))
    b = np.ascontiguousarray(np.asarray(b, dtype=np.float64).reshape(-1, 4))
    return _box_iou_loop(a, b)


@njit(cache=True)
def _inter_union_loop(pred, gold):
    inter = 0
    union = 0
    for i in range(pred.size):
        p = pred[i] != 0
        g = gold[i] != 0
        if p and g:
            inter += 1
        if p or g:
            union += 1
    return inter, union


def mask_inter_union(pred, gold):
    pred = np.ascontiguousarray(pred, dtype=np.uint8).ravel()
    gold = np.ascontiguousarray(gold, dtype=np.uint8).ravel()
    inter, union = _inter_union_loop(pred, gold)
    return int(inter), int(union)


@njit(cache=True)
def _greedy_loop(iou, thresh):
    n_pred, n_gold = iou.shape
    matched = np.full(n_pred, -1, dtype=np.int64)
    taken = np.zeros(n_gold, dtype=np.bool_)
    for p in range(n_pred):
        best = thresh
        best_j = -1
        for j in range(n_gold):
            if not taken[j] and iou[p, j] >= best:
                best = iou[p, j]
                best_j = j
        if best_j >= 0:
            matched[p] = best_j
            taken[best_j] = True
    return matched


def greedy_match(iou, thresh):
    iou = np.ascontiguousarray(iou, dtype=np.float64)
    return _greedy_loop(iou, float(thresh))


@njit(cache=True)
def _sgd_loop(table, rows, grads, lr):
    for k in range(rows.size):
        r = rows[k]
        for j in range(table.shape[1]):
            table[r, j] -= lr * grads[k, j]


def sgd_update(table, rows, grads, lr):
    _sgd_loop(table, np.ascontiguousarray(rows, dtype=np.int64),
              np.ascontiguousarray(grads, dtype=np.float64), float(lr))


@njit(cache=True)
def _adagrad_loop(table, accum, rows, grads, lr, eps):
    for k in range(rows.size):
        r = rows[k]
        for j in range(table.shape[1]):
            g = grads[k, j]
            accum[r, j] += g * g
            table[r, j] -= lr * g / (np.sqrt(accum[r, j]) + eps)


def adagrad_update(table, accum, rows, grads, lr, eps):
    _adagrad_loop(table, accum, np.ascontiguousarray(rows, dtype=np.int64),
                  np.ascontiguousarray(grads, dtype=np.float64), float(lr), float(eps))
