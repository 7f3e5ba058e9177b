"""Backend dispatch for the numeric hot kernels.

The active backend is chosen once at import time from the ``VISKNOW_NUMBA``
environment variable: "1" forces the numba backend (ImportError if numba is
missing), "0" forces pure numpy, unset picks numba when it is importable.
`perf/bench_kernels.py` compares the two.
"""

import os

_FLAG = os.environ.get("VISKNOW_NUMBA", "").strip().lower()

if _FLAG in ("1", "true", "yes"):
    from . import numba_backend as _backend
elif _FLAG in ("0", "false", "no"):
    from . import numpy_backend as _backend
else:
    try:
        from . import numba_backend as _backend
    except ImportError:
        from . import numpy_backend as _backend

BACKEND_NAME = _backend.__name__.rsplit(".", 1)[-1].replace("_backend", "")

rle_encode_counts = _backend.rle_encode_counts
rle_decode = _backend.rle_decode
box_iou_matrix = _backend.box_iou_matrix
mask_inter_union = _backend.mask_inter_union
greedy_match = _backend.greedy_match
sgd_update = _backend.sgd_update
adagrad_update = _backend.adagrad_update


def get_backend(name):
    """Explicit backend access ("numpy" or "numba"), bypassing the env flag."""
    if name == "numpy":
        from . import numpy_backend
        return numpy_backend
    if name == "numba":
        from . import numba_backend
        return numba_backend
    raise ValueError(f"unknown kernel backend {name!r}")
