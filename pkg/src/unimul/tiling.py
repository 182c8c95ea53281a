"""Tile-grid index arithmetic.

Pure functions over tile grids: tile bounds, overlap queries, range
intersection, and tile-to-process ownership.  No storage, no communication.
All indices are global, zero-based, row-major.  Edge tiles are clipped to the
global shape, never padded.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from unimul.errors import ConfigError


@dataclass(frozen=True)
class Shape2D:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise ValueError(f"negative shape {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols


@dataclass(frozen=True)
class Range:
    """Half-open index range [lo, hi)."""

    lo: int
    hi: int

    def __post_init__(self):
        if not (0 <= self.lo <= self.hi):
            raise ValueError(f"invalid range [{self.lo}, {self.hi})")

    def __len__(self) -> int:
        return self.hi - self.lo

    def shift(self, offset: int) -> "Range":
        return Range(self.lo + offset, self.hi + offset)

    def __str__(self) -> str:
        return f"[{self.lo},{self.hi})"


@dataclass(frozen=True)
class Bounds2D:
    rows: Range
    cols: Range

    @property
    def shape(self) -> Shape2D:
        return Shape2D(len(self.rows), len(self.cols))

    @property
    def area(self) -> int:
        return len(self.rows) * len(self.cols)

    def contains(self, other: "Bounds2D") -> bool:
        return (
            self.rows.lo <= other.rows.lo
            and other.rows.hi <= self.rows.hi
            and self.cols.lo <= other.cols.lo
            and other.cols.hi <= self.cols.hi
        )


@dataclass(frozen=True)
class TileIdx:
    i: int
    j: int


@dataclass(frozen=True)
class GridShape:
    rows: int
    cols: int

    @property
    def size(self) -> int:
        return self.rows * self.cols

    def tiles(self):
        """All tile indices in row-major order."""
        for i in range(self.rows):
            for j in range(self.cols):
                yield TileIdx(i, j)


class Mapping(Enum):
    BLOCK = "block"
    BLOCK_CYCLIC = "block_cyclic"


@dataclass(frozen=True)
class PartitionSpec:
    """Tile shape plus process grid, ScaLAPACK style.

    Describes how one replica of a matrix is split into tiles and how those
    tiles are assigned to the processes of that replica.
    """

    tile_shape: Shape2D
    proc_grid: Shape2D
    mapping: Mapping = Mapping.BLOCK

    def __post_init__(self):
        if self.tile_shape.rows < 1 or self.tile_shape.cols < 1:
            raise ConfigError(f"tile shape must be >= 1x1, got {self.tile_shape}")
        if self.proc_grid.rows < 1 or self.proc_grid.cols < 1:
            raise ConfigError(f"process grid must be >= 1x1, got {self.proc_grid}")

    @property
    def nprocs(self) -> int:
        return self.proc_grid.size


def most_square_grid(p: int) -> Shape2D:
    """Factor p into the most-square grid gr x gc with gr <= gc.

    Ties (perfect squares) resolve to gr = gc.  2D block descriptors leave
    the factorization open; this is the fixed choice used throughout.
    """
    gr = 1
    for d in range(1, int(math.isqrt(p)) + 1):
        if p % d == 0:
            gr = d
    return Shape2D(gr, p // gr)


def row_block(global_shape: Shape2D, nprocs: int) -> PartitionSpec:
    """1D row-block partition over nprocs processes."""
    tile_rows = max(1, math.ceil(global_shape.rows / nprocs))
    return PartitionSpec(Shape2D(tile_rows, global_shape.cols), Shape2D(nprocs, 1))


def col_block(global_shape: Shape2D, nprocs: int) -> PartitionSpec:
    """1D column-block partition over nprocs processes."""
    tile_cols = max(1, math.ceil(global_shape.cols / nprocs))
    return PartitionSpec(Shape2D(global_shape.rows, tile_cols), Shape2D(1, nprocs))


def block_2d(global_shape: Shape2D, nprocs: int) -> PartitionSpec:
    """2D block partition over the most-square grid for nprocs."""
    grid = most_square_grid(nprocs)
    tile_rows = max(1, math.ceil(global_shape.rows / grid.rows))
    tile_cols = max(1, math.ceil(global_shape.cols / grid.cols))
    return PartitionSpec(Shape2D(tile_rows, tile_cols), grid)


def grid_shape(part: PartitionSpec, global_shape: Shape2D) -> GridShape:
    """Shape of the tile grid: ceiling division of global dims by tile dims."""
    return GridShape(
        math.ceil(global_shape.rows / part.tile_shape.rows),
        math.ceil(global_shape.cols / part.tile_shape.cols),
    )


def tile_bounds(part: PartitionSpec, global_shape: Shape2D, t: TileIdx) -> Bounds2D:
    """Global index bounds of tile t; edge tiles are clipped, never padded."""
    grid = grid_shape(part, global_shape)
    if not (0 <= t.i < grid.rows and 0 <= t.j < grid.cols):
        raise IndexError(f"tile {t} outside grid {grid.rows}x{grid.cols}")
    tr, tc = part.tile_shape.rows, part.tile_shape.cols
    return Bounds2D(
        Range(t.i * tr, min((t.i + 1) * tr, global_shape.rows)),
        Range(t.j * tc, min((t.j + 1) * tc, global_shape.cols)),
    )


def overlapping_tiles(
    part: PartitionSpec, global_shape: Shape2D, slc: Bounds2D
) -> list[TileIdx]:
    """Tiles whose bounds intersect slc with nonzero area, row-major order."""
    if slc.area == 0:
        return []
    grid = grid_shape(part, global_shape)
    tr, tc = part.tile_shape.rows, part.tile_shape.cols
    i_lo = slc.rows.lo // tr
    i_hi = min(math.ceil(slc.rows.hi / tr), grid.rows)
    j_lo = slc.cols.lo // tc
    j_hi = min(math.ceil(slc.cols.hi / tc), grid.cols)
    return [TileIdx(i, j) for i in range(i_lo, i_hi) for j in range(j_lo, j_hi)]


def intersect(a: Range, b: Range) -> Range:
    """Intersection of two half-open ranges; canonical empty range on miss."""
    lo = max(a.lo, b.lo)
    hi = min(a.hi, b.hi)
    if lo >= hi:
        return Range(lo, lo)
    return Range(lo, hi)


def intersect_bounds(a: Bounds2D, b: Bounds2D) -> Bounds2D:
    return Bounds2D(intersect(a.rows, b.rows), intersect(a.cols, b.cols))


def owner_of(
    part: PartitionSpec, grid: GridShape, t: TileIdx, nprocs_in_replica: int
) -> int:
    """Rank (within one replica) owning tile t."""
    if part.proc_grid.size != nprocs_in_replica:
        raise ConfigError(
            f"process grid {part.proc_grid} does not cover {nprocs_in_replica} ranks"
        )
    if not (0 <= t.i < grid.rows and 0 <= t.j < grid.cols):
        raise IndexError(f"tile {t} outside grid {grid.rows}x{grid.cols}")
    pr, pc = part.proc_grid.rows, part.proc_grid.cols
    if part.mapping is Mapping.BLOCK_CYCLIC:
        return (t.i % pr) * pc + (t.j % pc)
    tiles_per_proc_row = math.ceil(grid.rows / pr)
    tiles_per_proc_col = math.ceil(grid.cols / pc)
    return (t.i // tiles_per_proc_row) * pc + (t.j // tiles_per_proc_col)
