import numpy as np
import pytest

from conftest import make_matrix
from unimul.errors import ConfigError, ContractError, OwnershipError
from unimul.fabric import ELEM_BYTES, AccumulateMode, Fabric
from unimul.tiling import (
    Bounds2D,
    PartitionSpec,
    Range,
    Shape2D,
    TileIdx,
    row_block,
)


def ij_fill(r, c):
    return 10.0 * r + c


class TestConstruction:
    def test_replication_must_divide(self):
        fab = Fabric(4)
        with pytest.raises(ConfigError):
            make_matrix(fab, "A", (4, 4), row_block(Shape2D(4, 4), 4), c=3)

    def test_grid_must_cover_replica(self):
        fab = Fabric(4)
        with pytest.raises(ConfigError):
            make_matrix(fab, "A", (4, 4), row_block(Shape2D(4, 4), 4), c=2)

    def test_init_fills_every_tile(self):
        fab = Fabric(4)
        dense = np.fromfunction(ij_fill, (7, 5))
        M = make_matrix(fab, "A", (7, 5), row_block(Shape2D(7, 5), 4), dense=dense)
        assert np.array_equal(M.gather(), dense)

    def test_default_init_is_zero(self):
        fab = Fabric(2)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2))
        assert not M.gather().any()


class TestPlacement:
    def test_replica_of_and_owner_rank(self):
        fab = Fabric(4)
        M = make_matrix(fab, "A", (4, 4), row_block(Shape2D(4, 4), 2), c=2)
        assert M.replica_of(0) == 0
        assert M.replica_of(3) == 1
        assert M.owner_rank(TileIdx(1, 0), 0) == 1
        assert M.owner_rank(TileIdx(1, 0), 1) == 3

    def test_owned_tiles(self):
        fab = Fabric(4)
        M = make_matrix(fab, "A", (8, 8),
                        PartitionSpec(Shape2D(4, 4), Shape2D(2, 2)))
        assert M.owned_tiles(2) == [TileIdx(1, 0)]

    def test_owned_tiles_follow_replica(self):
        fab = Fabric(4)
        M = make_matrix(fab, "A", (4, 4), row_block(Shape2D(4, 4), 2), c=2)
        assert M.owned_tiles(2) == [TileIdx(0, 0)]
        assert M.owned_tiles(3) == [TileIdx(1, 0)]


class TestTileAccess:
    def test_local_view_is_writable_alias(self):
        fab = Fabric(2)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2))
        view = M.tile(TileIdx(0, 0), caller=0)
        view.data[1, 1] = 5.0
        assert M.gather()[1, 1] == 5.0
        assert fab.counters.comm_bytes() == 0, "local views move no bytes"

    def test_view_requires_ownership(self):
        fab = Fabric(2)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2))
        with pytest.raises(OwnershipError):
            M.tile(TileIdx(1, 0), caller=0)

    def test_get_tile_counts_remote_bytes(self):
        fab = Fabric(2)
        dense = np.fromfunction(ij_fill, (4, 4))
        M = make_matrix(fab, "A", (4, 4), row_block(Shape2D(4, 4), 2), dense=dense)
        cp = M.get_tile(TileIdx(1, 0), caller=0)
        assert np.array_equal(cp.data, dense[2:4])
        assert fab.counters.bytes[0, 1] == 8 * ELEM_BYTES

    def test_get_tile_async_roundtrip(self):
        fab = Fabric(2)
        dense = np.fromfunction(ij_fill, (4, 4))
        M = make_matrix(fab, "A", (4, 4), row_block(Shape2D(4, 4), 2), dense=dense)
        pending = M.get_tile_async(TileIdx(1, 0), caller=0)
        cp = pending.wait()
        assert np.array_equal(cp.data, dense[2:4])
        assert fab.outstanding_copies == 0


class TestAccumulateTile:
    def test_full_tile(self):
        fab = Fabric(2)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2))
        M.accumulate_tile(0, TileIdx(1, 0), np.ones((2, 4)), caller=0)
        assert M.gather()[2:4].tolist() == [[1.0] * 4] * 2
        # one contiguous message for the whole tile
        assert fab.counters.msgs[0, 1] == 1

    def test_sub_slice_row_at_a_time(self):
        fab = Fabric(2)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2))
        vals = np.arange(4, dtype=float).reshape(2, 2)
        M.accumulate_tile(0, TileIdx(1, 0),
                          vals, Bounds2D(Range(0, 2), Range(1, 3)), caller=0)
        expected = np.zeros((4, 4))
        expected[2:4, 1:3] = vals
        assert np.array_equal(M.gather(), expected)
        assert fab.counters.msgs[0, 1] == 2

    def test_slice_outside_tile(self):
        fab = Fabric(2)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2))
        with pytest.raises(ContractError):
            M.accumulate_tile(0, TileIdx(0, 0), np.ones((3, 4)),
                              Bounds2D(Range(0, 3), Range(0, 4)), caller=0)

    def test_payload_shape_mismatch(self):
        fab = Fabric(2)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2))
        with pytest.raises(ContractError):
            M.accumulate_tile(0, TileIdx(0, 0), np.ones((1, 4)),
                              Bounds2D(Range(0, 2), Range(0, 4)), caller=0)

    def test_lock_get_put_mode_forwarded(self):
        fab = Fabric(2)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2))
        M.accumulate_tile(0, TileIdx(1, 0), np.ones((2, 4)), caller=0,
                          mode=AccumulateMode.LOCK_GET_PUT)
        assert fab.counters.bytes[0, 1] == 2 * 8 * ELEM_BYTES
        assert fab.counters.msgs[0, 1] == 2


class TestReplicaCollectives:
    def test_reduce_replicas(self):
        fab = Fabric(4)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2), c=2)
        M.accumulate_tile(0, TileIdx(0, 0), np.full((2, 4), 1.0), caller=0)
        M.accumulate_tile(1, TileIdx(0, 0), np.full((2, 4), 2.0), caller=2)
        M.accumulate_tile(1, TileIdx(1, 0), np.full((2, 4), 3.0), caller=3)
        M.reduce_replicas(0)
        got = M.gather(replica=0)
        assert got[0:2].tolist() == [[3.0] * 4] * 2
        assert got[2:4].tolist() == [[3.0] * 4] * 2
        # pulls are counted: rank 0 pulled tile (0,0) from rank 2, etc.
        assert fab.counters.bytes[0, 2] == 8 * ELEM_BYTES
        assert fab.counters.bytes[1, 3] == 8 * ELEM_BYTES

    def test_reduce_is_noop_at_c1(self):
        fab = Fabric(2)
        M = make_matrix(fab, "C", (4, 4), row_block(Shape2D(4, 4), 2))
        M.reduce_replicas(0)
        assert fab.counters.msgs.sum() == 0

    def test_broadcast_replica(self):
        fab = Fabric(4)
        dense = np.fromfunction(ij_fill, (4, 4))
        M = make_matrix(fab, "A", (4, 4), row_block(Shape2D(4, 4), 2), c=2)
        for t in M.grid.tiles():
            b = M.tile_bounds(t)
            M.segment(t, 0).data[:] = dense[b.rows.lo:b.rows.hi].reshape(-1)
        M.broadcast_replica(0)
        assert np.array_equal(M.gather(replica=1), dense)

    def test_gather_is_uncounted(self):
        fab = Fabric(2)
        dense = np.fromfunction(ij_fill, (4, 4))
        M = make_matrix(fab, "A", (4, 4), row_block(Shape2D(4, 4), 2), dense=dense)
        M.gather()
        assert fab.counters.msgs.sum() == 0
