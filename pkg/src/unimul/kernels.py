"""Local multiply-accumulate kernel, compiled core with numpy fallback.

The hot loop of every run is `c += a @ b` over tile slices.  If the Cython
extension built, it is selected at import time; otherwise the numpy fallback
is used.  Both are exposed so the benchmark can compare them.
"""

from __future__ import annotations

import numpy as np


def gemm_accumulate_numpy(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> None:
    """c += a @ b.  Allocates a temporary for the product."""
    if a.shape[1] != b.shape[0] or c.shape != (a.shape[0], b.shape[1]):
        raise ValueError("inconsistent slice shapes for gemm_accumulate")
    c += a @ b


try:
    from unimul._gemmcore import gemm_accumulate as gemm_accumulate_compiled

    gemm_accumulate = gemm_accumulate_compiled
    BACKEND = "compiled"
except ImportError:  # extension not built; pure-Python install
    gemm_accumulate_compiled = None
    gemm_accumulate = gemm_accumulate_numpy
    BACKEND = "numpy"
