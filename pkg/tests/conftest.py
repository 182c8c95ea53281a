import numpy as np

from unimul.distmatrix import DistributedMatrix
from unimul.fabric import Fabric
from unimul.tiling import Shape2D


def oracle_matmul(a, b):
    """Serial triple-loop GEMM, the independent reference for all runs."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for l in range(k):
            for j in range(n):
                out[i][j] += a[i][l] * b[l][j]
    return np.array(out).reshape(m, n)


def integer_dense(rng, rows, cols):
    return rng.integers(-8, 9, size=(rows, cols)).astype(float)


def make_matrix(fabric, name, shape, part, c=1, dense=None):
    init = None
    if dense is not None:
        init = lambda r, cc: dense[r, cc]  # noqa: E731
    return DistributedMatrix(fabric, name, Shape2D(*shape), part, c, init)


def divisors(p):
    return [d for d in range(1, p + 1) if p % d == 0]


def make_problem(p, m, n, k, a_part, b_part, c_part, c_a=1, c_b=1, c_c=1, seed=0):
    """Fabric + A, B (random integer-valued), C (zero) + dense copies."""
    from unimul.cli import resolve_partition

    rng = np.random.default_rng(seed)
    a = integer_dense(rng, m, k)
    b = integer_dense(rng, k, n)
    fabric = Fabric(p)
    A = make_matrix(fabric, "A", (m, k),
                    resolve_partition(a_part, Shape2D(m, k), p // c_a), c_a, a)
    B = make_matrix(fabric, "B", (k, n),
                    resolve_partition(b_part, Shape2D(k, n), p // c_b), c_b, b)
    C = make_matrix(fabric, "C", (m, n),
                    resolve_partition(c_part, Shape2D(m, n), p // c_c), c_c)
    return fabric, A, B, C, a, b
