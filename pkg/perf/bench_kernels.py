"""Timing comparison of the numba and numpy kernel backends.

Runs each hot kernel on sized random inputs under both backends and prints
a table of per-call times and speedups. The numba column includes a warmup
call so JIT compilation is not billed to the measurement.

Usage: python perf/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from visknow._kernels import numpy_backend

try:
    from visknow._kernels import numba_backend
    HAVE_NUMBA = True
except ImportError:
    numba_backend = None
    HAVE_NUMBA = False


def make_inputs(rng):
    boxes_a = rng.uniform(0, 500, size=(400, 4))
    boxes_a[:, 2:] = rng.uniform(5, 80, size=(400, 2))
    boxes_b = rng.uniform(0, 500, size=(300, 4))
    boxes_b[:, 2:] = rng.uniform(5, 80, size=(300, 2))
    mask_a = (rng.random((512, 512)) < 0.4).astype(np.uint8).ravel()
    mask_b = (rng.random((512, 512)) < 0.4).astype(np.uint8).ravel()
    iou = rng.random((200, 180))
    table = rng.standard_normal((5000, 64))
    accum = np.abs(rng.standard_normal((5000, 64))) + 0.1
    rows = rng.integers(0, 5000, size=1024)
    grads = rng.standard_normal((1024, 64))
    counts = numpy_backend.rle_encode_counts(mask_a)
    return {
        "rle_encode_counts": (mask_a,),
        "rle_decode": (np.asarray(counts, dtype=np.int64), mask_a.size),
        "box_iou_matrix": (boxes_a, boxes_b),
        "mask_inter_union": (mask_a, mask_b),
        "greedy_match": (iou, 0.5),
        "sgd_update": (table.copy(), rows, grads, 0.01),
        "adagrad_update": (table.copy(), accum.copy(), rows, grads, 0.01, 1e-10),
    }


def time_call(fn, args, repeat):
    fn(*args)  # warmup (JIT compile for numba)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    inputs = make_inputs(rng)
    print(f"{'kernel':<20} {'numpy (ms)':>12} {'numba (ms)':>12} {'speedup':>9}")
    for name, call_args in inputs.items():
        t_np = time_call(getattr(numpy_backend, name), call_args, args.repeat)
        if HAVE_NUMBA:
            t_nb = time_call(getattr(numba_backend, name), call_args, args.repeat)
            ratio = t_np / t_nb if t_nb > 0 else float("inf")
            print(f"{name:<20} {t_np * 1e3:>12.3f} {t_nb * 1e3:>12.3f} {ratio:>8.1f}x")
        else:
            print(f"{name:<20} {t_np * 1e3:>12.3f} {'n/a':>12} {'n/a':>9}")
    if not HAVE_NUMBA:
        print("\nnumba not installed; install the [fast] extra to compare.")


if __name__ == "__main__":
    main()
