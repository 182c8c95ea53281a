"""Slicing-based generation of per-process local matrix-multiply ops.

For a chosen stationary operand, each process enumerates the tiles of the
moving operands that overlap its stationary tiles and intersects bounds to
produce component multiplies.  Misaligned tilings fall out of the same range
arithmetic; zero-area intersections emit no op.  When the stationary matrix
is replicated, each replica restricts its search to a disjoint 1/c chunk of
the free dimension so replicas split the work.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from unimul.distmatrix import DistributedMatrix
from unimul.errors import ConfigError, ContractError
from unimul.tiling import Bounds2D, Range, TileIdx, intersect


class Stationarity(Enum):
    STATIONARY_A = "a"
    STATIONARY_B = "b"
    STATIONARY_C = "c"


@dataclass(frozen=True)
class LocalMatMulOp:
    """One component multiply: C[m,n] += A[m,k] @ B[k,n] over tile slices.

    Bounds are global; the *_local fields are the same bounds shifted into
    each tile's coordinates.
    """

    a_tile: TileIdx
    b_tile: TileIdx
    c_tile: TileIdx
    m_bound: Range
    k_bound: Range
    n_bound: Range
    a_local: Bounds2D
    b_local: Bounds2D
    c_local: Bounds2D

    @property
    def flops(self) -> int:
        return 2 * len(self.m_bound) * len(self.k_bound) * len(self.n_bound)

    def stationary_tile(self, stationarity: Stationarity) -> TileIdx:
        if stationarity is Stationarity.STATIONARY_A:
            return self.a_tile
        if stationarity is Stationarity.STATIONARY_B:
            return self.b_tile
        return self.c_tile


def restrict_for_replication(inner: Range, c: int, replica_idx: int) -> Range:
    """Chunk `replica_idx` of `inner` split c ways.

    Floor split with the remainder on the last chunk; chunks are pairwise
    disjoint and union back to `inner`.
    """
    if not (0 <= replica_idx < c):
        raise ValueError(f"replica {replica_idx} out of range for c={c}")
    step = len(inner) // c
    lo = inner.lo + replica_idx * step
    hi = inner.hi if replica_idx == c - 1 else lo + step
    return Range(lo, hi)


def global_to_local(global_bounds: Bounds2D, tile_bounds: Bounds2D) -> Bounds2D:
    """Shift global bounds into tile-local coordinates."""
    if not tile_bounds.contains(global_bounds):
        raise ContractError(f"{global_bounds} not contained in tile {tile_bounds}")
    return Bounds2D(
        global_bounds.rows.shift(-tile_bounds.rows.lo),
        global_bounds.cols.shift(-tile_bounds.cols.lo),
    )


def _check_shapes(A: DistributedMatrix, B: DistributedMatrix, C: DistributedMatrix):
    m, k = A.global_shape.rows, A.global_shape.cols
    k2, n = B.global_shape.rows, B.global_shape.cols
    m2, n2 = C.global_shape.rows, C.global_shape.cols
    if k != k2 or m != m2 or n != n2:
        raise ConfigError(
            f"shapes do not conform: A {m}x{k}, B {k2}x{n}, C {m2}x{n2}"
        )
    return m, k, n


def _make_op(A, B, C, a_idx, b_idx, c_idx, m_bound, k_bound, n_bound):
    return LocalMatMulOp(
        a_tile=a_idx,
        b_tile=b_idx,
        c_tile=c_idx,
        m_bound=m_bound,
        k_bound=k_bound,
        n_bound=n_bound,
        a_local=global_to_local(Bounds2D(m_bound, k_bound), A.tile_bounds(a_idx)),
        b_local=global_to_local(Bounds2D(k_bound, n_bound), B.tile_bounds(b_idx)),
        c_local=global_to_local(Bounds2D(m_bound, n_bound), C.tile_bounds(c_idx)),
    )


def generate_stationary_c(
    A: DistributedMatrix, B: DistributedMatrix, C: DistributedMatrix, caller: int
) -> list[LocalMatMulOp]:
    """Ops for the C tiles owned by caller.

    If C is replicated, the caller's replica searches only its chunk of the
    inner dimension k; replicas then hold partial products to be reduced.
    """
    _, k, _ = _check_shapes(A, B, C)
    k_search = restrict_for_replication(Range(0, k), C.c, C.replica_of(caller))
    ops = []
    for c_idx in C.owned_tiles(caller):
        cb = C.tile_bounds(c_idx)
        for a_idx in A.overlapping_tiles(Bounds2D(cb.rows, k_search)):
            ab = A.tile_bounds(a_idx)
            k_in_a = intersect(ab.cols, k_search)
            for b_idx in B.overlapping_tiles(Bounds2D(k_in_a, cb.cols)):
                bb = B.tile_bounds(b_idx)
                m_bound = intersect(cb.rows, ab.rows)
                k_bound = intersect(k_in_a, bb.rows)
                n_bound = intersect(bb.cols, cb.cols)
                if len(m_bound) == 0 or len(k_bound) == 0 or len(n_bound) == 0:
                    continue
                ops.append(_make_op(A, B, C, a_idx, b_idx, c_idx,
                                    m_bound, k_bound, n_bound))
    return ops


def generate_stationary_b(
    A: DistributedMatrix, B: DistributedMatrix, C: DistributedMatrix, caller: int
) -> list[LocalMatMulOp]:
    """Ops for the B tiles owned by caller; C updates may be remote accumulates.

    If B is replicated, each replica restricts its search over the m dimension
    to a disjoint chunk, so replicas split the work without double counting.
    """
    m, _, _ = _check_shapes(A, B, C)
    m_search = restrict_for_replication(Range(0, m), B.c, B.replica_of(caller))
    ops = []
    for b_idx in B.owned_tiles(caller):
        bb = B.tile_bounds(b_idx)
        for a_idx in A.overlapping_tiles(Bounds2D(m_search, bb.rows)):
            ab = A.tile_bounds(a_idx)
            m_in_a = intersect(ab.rows, m_search)
            for c_idx in C.overlapping_tiles(Bounds2D(m_in_a, bb.cols)):
                cb = C.tile_bounds(c_idx)
                m_bound = intersect(m_in_a, cb.rows)
                k_bound = intersect(ab.cols, bb.rows)
                n_bound = intersect(bb.cols, cb.cols)
                if len(m_bound) == 0 or len(k_bound) == 0 or len(n_bound) == 0:
                    continue
                ops.append(_make_op(A, B, C, a_idx, b_idx, c_idx,
                                    m_bound, k_bound, n_bound))
    return ops


def generate_stationary_a(
    A: DistributedMatrix, B: DistributedMatrix, C: DistributedMatrix, caller: int
) -> list[LocalMatMulOp]:
    """Mirror of the Stationary-B path with A stationary (chunking over n)."""
    _, _, n = _check_shapes(A, B, C)
    n_search = restrict_for_replication(Range(0, n), A.c, A.replica_of(caller))
    ops = []
    for a_idx in A.owned_tiles(caller):
        ab = A.tile_bounds(a_idx)
        for b_idx in B.overlapping_tiles(Bounds2D(ab.cols, n_search)):
            bb = B.tile_bounds(b_idx)
            n_in_b = intersect(bb.cols, n_search)
            for c_idx in C.overlapping_tiles(Bounds2D(ab.rows, n_in_b)):
                cb = C.tile_bounds(c_idx)
                m_bound = intersect(cb.rows, ab.rows)
                k_bound = intersect(ab.cols, bb.rows)
                n_bound = intersect(n_in_b, cb.cols)
                if len(m_bound) == 0 or len(k_bound) == 0 or len(n_bound) == 0:
                    continue
                ops.append(_make_op(A, B, C, a_idx, b_idx, c_idx,
                                    m_bound, k_bound, n_bound))
    return ops


_GENERATORS = {
    Stationarity.STATIONARY_A: generate_stationary_a,
    Stationarity.STATIONARY_B: generate_stationary_b,
    Stationarity.STATIONARY_C: generate_stationary_c,
}


def generate(
    stationarity: Stationarity,
    A: DistributedMatrix,
    B: DistributedMatrix,
    C: DistributedMatrix,
    caller: int,
) -> list[LocalMatMulOp]:
    return _GENERATORS[stationarity](A, B, C, caller)


def format_op(op: LocalMatMulOp) -> str:
    return (
        f"a=({op.a_tile.i},{op.a_tile.j}) b=({op.b_tile.i},{op.b_tile.j}) "
        f"c=({op.c_tile.i},{op.c_tile.j}) m={op.m_bound} k={op.k_bound} "
        f"n={op.n_bound}"
    )
