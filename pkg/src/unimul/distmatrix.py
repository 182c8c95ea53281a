"""Distributed matrix data structure.

A matrix is c replicas, each covering the global index space once and
distributed over p/c consecutive ranks.  Tiles live in per-tile symmetric
segments, stored row-major and contiguous, so all remote access goes through
the fabric's get/accumulate primitives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from unimul import tiling
from unimul.errors import ConfigError, ContractError, OwnershipError
from unimul.fabric import AccumulateMode, Fabric, PendingCopy, SymSegment
from unimul.tiling import Bounds2D, GridShape, PartitionSpec, Range, Shape2D, TileIdx


@dataclass
class TileView:
    """Zero-copy mutable view of a locally owned tile."""

    matrix: str
    idx: TileIdx
    replica: int
    bounds: Bounds2D
    data: np.ndarray = field(repr=False)


@dataclass
class TileCopy:
    """Private copy of a (possibly remote) tile."""

    idx: TileIdx
    replica: int
    bounds: Bounds2D
    data: np.ndarray = field(repr=False)


class PendingTileCopy:
    """Future for get_tile_async; wait() yields a TileCopy."""

    def __init__(self, pending: PendingCopy, idx: TileIdx, replica: int, bounds: Bounds2D):
        self._pending = pending
        self._idx = idx
        self._replica = replica
        self._bounds = bounds

    def wait(self) -> TileCopy:
        buf = self._pending.wait()
        shape = self._bounds.shape
        return TileCopy(
            self._idx,
            self._replica,
            self._bounds,
            buf.reshape(shape.rows, shape.cols),
        )


class DistributedMatrix:
    """Global shape + partition + replication factor + symmetric tile storage."""

    def __init__(
        self,
        fabric: Fabric,
        name: str,
        global_shape: Shape2D,
        part: PartitionSpec,
        c: int = 1,
        init=None,
    ):
        p = fabric.nprocs
        if c < 1 or p % c != 0:
            raise ConfigError(f"replication factor {c} must divide process count {p}")
        ranks_per_replica = p // c
        if part.proc_grid.size != ranks_per_replica:
            raise ConfigError(
                f"process grid {part.proc_grid} covers {part.proc_grid.size} ranks "
                f"but each replica spans {ranks_per_replica}"
            )
        self.fabric = fabric
        self.name = name
        self.global_shape = global_shape
        self.part = part
        self.c = c
        self.p = p
        self.ranks_per_replica = ranks_per_replica
        self.grid: GridShape = tiling.grid_shape(part, global_shape)
        self._segments: dict[tuple[int, TileIdx], SymSegment] = {}
        for r in range(c):
            for t in self.grid.tiles():
                seg = fabric.alloc(self.owner_rank(t, r), self.tile_bounds(t).area)
                if init is not None:
                    b = self.tile_bounds(t)
                    rows = np.arange(b.rows.lo, b.rows.hi)[:, None]
                    cols = np.arange(b.cols.lo, b.cols.hi)[None, :]
                    seg.data[:] = np.asarray(
                        init(rows, cols), dtype=float
                    ).reshape(-1)
                self._segments[(r, t)] = seg

    # -- placement -----------------------------------------------------------

    def replica_of(self, rank: int) -> int:
        return rank // self.ranks_per_replica

    def owner_rank(self, t: TileIdx, replica: int) -> int:
        """Global rank owning tile t of the given replica."""
        if not (0 <= replica < self.c):
            raise IndexError(f"replica {replica} out of range for c={self.c}")
        local = tiling.owner_of(self.part, self.grid, t, self.ranks_per_replica)
        return local + replica * self.ranks_per_replica

    def owned_tiles(self, caller: int, replica: int | None = None) -> list[TileIdx]:
        """Tiles of (caller's) replica owned by caller, row-major order."""
        if replica is None:
            replica = self.replica_of(caller)
        return [
            t for t in self.grid.tiles() if self.owner_rank(t, replica) == caller
        ]

    def tile_bounds(self, t: TileIdx) -> Bounds2D:
        return tiling.tile_bounds(self.part, self.global_shape, t)

    def overlapping_tiles(self, slc: Bounds2D) -> list[TileIdx]:
        return tiling.overlapping_tiles(self.part, self.global_shape, slc)

    def tile_nbytes(self, t: TileIdx) -> int:
        return 8 * self.tile_bounds(t).area

    def segment(self, t: TileIdx, replica: int) -> SymSegment:
        return self._segments[(replica, t)]

    # -- tile access primitives ------------------------------------------------

    def tile(self, t: TileIdx, replica: int | None = None, *, caller: int) -> TileView:
        """Zero-copy view of an owned tile; replica defaults to the caller's."""
        if replica is None:
            replica = self.replica_of(caller)
        if self.owner_rank(t, replica) != caller:
            raise OwnershipError(
                f"rank {caller} does not own tile {t} of {self.name} replica {replica}"
            )
        b = self.tile_bounds(t)
        seg = self._segments[(replica, t)]
        view = self.fabric.local_view(seg, caller).reshape(b.shape.rows, b.shape.cols)
        return TileView(self.name, t, replica, b, view)

    def get_tile(self, t: TileIdx, replica: int | None = None, *, caller: int,
                 out: np.ndarray | None = None) -> TileCopy:
        """Copy of a tile via a fabric get, counted against (caller, owner)."""
        if replica is None:
            replica = self.replica_of(caller)
        b = self.tile_bounds(t)
        seg = self._segments[(replica, t)]
        buf = self.fabric.get(seg, Range(0, seg.length), caller, out=out)
        return TileCopy(t, replica, b, buf.reshape(b.shape.rows, b.shape.cols))

    def get_tile_async(self, t: TileIdx, replica: int | None = None, *, caller: int,
                       out: np.ndarray | None = None) -> PendingTileCopy:
        if replica is None:
            replica = self.replica_of(caller)
        b = self.tile_bounds(t)
        seg = self._segments[(replica, t)]
        pending = self.fabric.get_async(seg, Range(0, seg.length), caller, out=out)
        return PendingTileCopy(pending, t, replica, b)

    def accumulate_tile(
        self,
        replica: int | None,
        t: TileIdx,
        values: np.ndarray,
        within: Bounds2D | None = None,
        *,
        caller: int,
        mode: AccumulateMode = AccumulateMode.PEER_ATOMIC,
    ):
        """Element-wise += into a (possibly remote) tile.

        `within` selects a sub-slice in tile-local coordinates; by default the
        whole tile is updated.  Non-contiguous sub-slices are applied one row
        at a time through the fabric.
        """
        if replica is None:
            replica = self.replica_of(caller)
        b = self.tile_bounds(t)
        tile_rows, tile_cols = b.shape.rows, b.shape.cols
        if within is None:
            within = Bounds2D(Range(0, tile_rows), Range(0, tile_cols))
        if within.rows.hi > tile_rows or within.cols.hi > tile_cols:
            raise ContractError(f"slice {within} outside tile of {b.shape}")
        if values.shape != (len(within.rows), len(within.cols)):
            raise ContractError(
                f"payload shape {values.shape} does not match slice {within}"
            )
        seg = self._segments[(replica, t)]
        if len(within.cols) == tile_cols:
            start = within.rows.lo * tile_cols
            self.fabric.accumulate(
                seg, Range(start, start + values.size), values.reshape(-1),
                caller, mode,
            )
            return
        for r, row in zip(range(within.rows.lo, within.rows.hi), values):
            start = r * tile_cols + within.cols.lo
            self.fabric.accumulate(seg, Range(start, start + len(row)), row,
                                   caller, mode)

    def reduce_replicas(self, origin: int = 0,
                        mode: AccumulateMode = AccumulateMode.PEER_ATOMIC):
        """Sum all replicas element-wise into replica origin.

        Each origin-replica tile owner pulls the peer replicas' copies of its
        tile with one-sided gets and adds them locally.  No-op at c=1.
        """
        if not (0 <= origin < self.c):
            raise IndexError(f"replica {origin} out of range for c={self.c}")
        if self.c == 1:
            return
        for t in self.grid.tiles():
            dst = self._segments[(origin, t)]
            owner = dst.owner
            acc = np.zeros(dst.length)
            for r in range(self.c):
                if r == origin:
                    continue
                src = self._segments[(r, t)]
                acc += self.fabric.get(src, Range(0, src.length), owner)
            with dst.lock:
                dst.data += acc

    def broadcast_replica(self, origin: int = 0):
        """Make every replica a bit-identical copy of replica origin.

        Each non-origin tile owner pulls the origin copy with a one-sided get
        and writes it into its own segment.
        """
        if not (0 <= origin < self.c):
            raise IndexError(f"replica {origin} out of range for c={self.c}")
        for t in self.grid.tiles():
            src = self._segments[(origin, t)]
            for r in range(self.c):
                if r == origin:
                    continue
                dst = self._segments[(r, t)]
                buf = self.fabric.get(src, Range(0, src.length), dst.owner)
                with dst.lock:
                    dst.data[:] = buf

    def gather(self, replica: int = 0) -> np.ndarray:
        """Dense copy of one replica's contents (harness support; uncounted)."""
        out = np.zeros((self.global_shape.rows, self.global_shape.cols))
        for t in self.grid.tiles():
            b = self.tile_bounds(t)
            seg = self._segments[(replica, t)]
            out[b.rows.lo : b.rows.hi, b.cols.lo : b.cols.hi] = seg.data.reshape(
                b.shape.rows, b.shape.cols
            )
        return out
