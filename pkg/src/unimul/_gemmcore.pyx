# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled multiply-accumulate kernel for tile slices.

Accumulates a (m x k) @ (k x n) product directly into the destination slice,
avoiding the temporary that the numpy fallback allocates.  Operands may be
non-contiguous views into tile buffers.
"""


def gemm_accumulate(double[:, :] a, double[:, :] b, double[:, :] c):
    """c += a @ b over the full extents of the given slices."""
    cdef Py_ssize_t m = a.shape[0]
    cdef Py_ssize_t k = a.shape[1]
    cdef Py_ssize_t n = b.shape[1]
    if b.shape[0] != k or c.shape[0] != m or c.shape[1] != n:
        raise ValueError("inconsistent slice shapes for gemm_accumulate")
    cdef Py_ssize_t i, l, j
    cdef double aval
    for i in range(m):
        for l in range(k):
            aval = a[i, l]
            if aval == 0.0:
                continue
            for j in range(n):
                c[i, j] += aval * b[l, j]
