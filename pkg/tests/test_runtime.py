import numpy as np
import pytest

from conftest import make_problem, oracle_matmul
from unimul.errors import ContractError
from unimul.fabric import AccumulateMode, Fabric
from unimul.lowering import IrProgram, IrStep, build_graph, lower_greedy
from unimul.opgen import Stationarity, generate, restrict_for_replication
from unimul.runtime import (
    BufferPool,
    ExecConfig,
    execute_multiply,
    iteration_offset,
    local_gemm,
    run_direct,
    run_ir,
)
from unimul.tiling import Range, TileIdx


class TestExecConfig:
    def test_counts_must_be_positive(self):
        with pytest.raises(ValueError):
            ExecConfig(prefetch_depth=0)
        with pytest.raises(ValueError):
            ExecConfig(max_inflight_gemms=0)
        with pytest.raises(ValueError):
            ExecConfig(max_inflight_accums=-1)

    def test_pool_capacity_floor(self):
        with pytest.raises(ValueError):
            ExecConfig(pool_capacity=2)
        ExecConfig(pool_capacity=3)


class TestBufferPool:
    def test_acquire_release_roundtrip(self):
        pool = BufferPool(2, 8)
        slot, buf = pool.acquire()
        assert buf.shape == (8,)
        assert pool.free_count == 1
        pool.release(slot)
        assert pool.free_count == 2
        assert pool.acquired == 1 and pool.released == 1

    def test_drain_callback_frees_a_buffer(self):
        pool = BufferPool(1, 4)
        slot, _ = pool.acquire()
        drained = []

        def drain():
            pool.release(slot)
            drained.append(True)
            return True

        slot2, _ = pool.acquire(drain)
        assert drained == [True]
        assert slot2 == slot

    def test_exhaustion_with_nothing_drainable(self):
        pool = BufferPool(1, 4)
        pool.acquire()
        with pytest.raises(RuntimeError, match="pool_capacity"):
            pool.acquire(lambda: False)

    def test_peak_tracking(self):
        pool = BufferPool(3, 4)
        s0, _ = pool.acquire()
        s1, _ = pool.acquire()
        pool.release(s0)
        pool.release(s1)
        assert pool.peak_in_use == 2


class TestIterationOffset:
    def test_paper_arithmetic(self):
        assert iteration_offset(TileIdx(1, 2), 4) == 3

    def test_zero(self):
        assert iteration_offset(TileIdx(0, 0), 5) == 0

    def test_wraparound(self):
        assert iteration_offset(TileIdx(3, 3), 4) == 2

    def test_requires_positive_nops(self):
        with pytest.raises(ValueError):
            iteration_offset(TileIdx(0, 0), 0)


class TestLocalGemm:
    def test_identity(self):
        x = np.arange(9, dtype=float).reshape(3, 3)
        c = np.zeros((3, 3))
        local_gemm(np.eye(3), x, c)
        assert np.array_equal(c, x)

    def test_zeros_leave_c_unchanged(self):
        c = np.full((2, 2), 5.0)
        local_gemm(np.zeros((2, 3)), np.zeros((3, 2)), c)
        assert np.array_equal(c, np.full((2, 2), 5.0))

    def test_against_oracle(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        c = np.zeros((5, 3))
        local_gemm(a, b, c)
        assert np.allclose(c, oracle_matmul(a, b), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            local_gemm(np.zeros((2, 3)), np.zeros((4, 2)), np.zeros((2, 2)))

    def test_flop_counter(self):
        fab = Fabric(2)
        local_gemm(np.zeros((2, 3)), np.zeros((3, 5)), np.zeros((2, 5)),
                   fab.counters, rank=1)
        assert fab.counters.flops[1] == 2 * 2 * 3 * 5


def run_all_direct(A, B, C, cfg):
    return {r: run_direct(A, B, C, cfg, r) for r in range(A.fabric.nprocs)}


class TestRunDirect:
    def test_aligned_matches_oracle(self):
        _, A, B, C, a, b = make_problem(4, 4, 4, 4, "2d", "2d", "2d")
        run_all_direct(A, B, C, ExecConfig())
        assert np.array_equal(C.gather(), oracle_matmul(a, b))

    def test_every_stationarity_matches_oracle(self):
        for stat in Stationarity:
            _, A, B, C, a, b = make_problem(4, 7, 9, 5, "row", "col", "2d",
                                            seed=3)
            run_all_direct(A, B, C, ExecConfig(stationarity=stat))
            assert np.array_equal(C.gather(), oracle_matmul(a, b))

    def test_single_process_no_comm(self):
        fab, A, B, C, a, b = make_problem(1, 6, 6, 6, "2d", "2d", "2d")
        run_all_direct(A, B, C, ExecConfig())
        assert np.array_equal(C.gather(), oracle_matmul(a, b))
        assert fab.counters.comm_bytes() == 0

    def test_replicated_c_partials_then_reduce(self):
        p, m, n, k = 4, 4, 4, 8
        _, A, B, C, a, b = make_problem(p, m, n, k, "row", "row", "row",
                                        c_c=p, seed=5)
        run_all_direct(A, B, C, ExecConfig())
        for r in range(p):
            chunk = restrict_for_replication(Range(0, k), p, r)
            partial = a[:, chunk.lo:chunk.hi] @ b[chunk.lo:chunk.hi, :]
            assert np.array_equal(C.gather(replica=r), partial)
        C.reduce_replicas(0)
        assert np.array_equal(C.gather(replica=0), oracle_matmul(a, b))

    def test_pool_discipline(self):
        _, A, B, C, a, b = make_problem(4, 8, 8, 8, "row", "col", "2d")
        cfg = ExecConfig(pool_capacity=8)
        for stats in run_all_direct(A, B, C, cfg).values():
            assert stats.pool_acquired == stats.pool_released
            assert stats.pool_peak <= 8
        assert np.array_equal(C.gather(), oracle_matmul(a, b))

    def test_bounded_accums(self):
        # stationary B forces remote C accumulates
        _, A, B, C, a, b = make_problem(4, 8, 8, 8, "2d", "2d", "2d")
        cfg = ExecConfig(stationarity=Stationarity.STATIONARY_B,
                         max_inflight_accums=1, max_inflight_gemms=1)
        for stats in run_all_direct(A, B, C, cfg).values():
            assert stats.peak_inflight_accums <= 1
            assert stats.peak_inflight_gemms <= 1
        assert np.array_equal(C.gather(), oracle_matmul(a, b))

    def test_no_leaked_async_copies(self):
        fab, A, B, C, a, b = make_problem(4, 8, 8, 8, "col", "row", "2d")
        run_all_direct(A, B, C, ExecConfig(prefetch_depth=3))
        assert fab.outstanding_copies == 0

    def test_lock_get_put_mode(self):
        _, A, B, C, a, b = make_problem(4, 6, 6, 6, "2d", "2d", "2d")
        cfg = ExecConfig(stationarity=Stationarity.STATIONARY_A,
                         accumulate_mode=AccumulateMode.LOCK_GET_PUT)
        run_all_direct(A, B, C, cfg)
        assert np.array_equal(C.gather(), oracle_matmul(a, b))


class TestRunIr:
    def make_lowered(self, A, B, C, rank, stat=Stationarity.STATIONARY_C):
        ops = generate(stat, A, B, C, rank)
        g = build_graph(ops, {"A": A, "B": B, "C": C}, rank)
        return lower_greedy(g), g

    def test_greedy_ir_matches_oracle(self):
        _, A, B, C, a, b = make_problem(4, 4, 4, 4, "2d", "2d", "2d")
        for r in range(4):
            prog, g = self.make_lowered(A, B, C, r)
            run_ir(prog, g, A, B, C, ExecConfig(), r)
        assert np.array_equal(C.gather(), oracle_matmul(a, b))

    def test_empty_program_is_noop(self):
        fab, A, B, C, a, b = make_problem(2, 2, 2, 2, "row", "row", "row")
        g = build_graph([], {"A": A, "B": B, "C": C}, 0)
        stats = run_ir(IrProgram({0: []}), g, A, B, C, ExecConfig(), 0)
        assert stats.executed_ops == []
        assert not C.gather().any()

    def test_bit_identical_to_direct_on_integers(self):
        _, A1, B1, C1, a, b = make_problem(4, 8, 8, 8, "row", "col", "2d",
                                           seed=9)
        run_all_direct(A1, B1, C1, ExecConfig())
        _, A2, B2, C2, _, _ = make_problem(4, 8, 8, 8, "row", "col", "2d",
                                           seed=9)
        for r in range(4):
            prog, g = self.make_lowered(A2, B2, C2, r)
            run_ir(prog, g, A2, B2, C2, ExecConfig(), r)
        assert np.array_equal(C1.gather(), C2.gather())
        assert np.array_equal(C1.gather(), oracle_matmul(a, b))

    def test_refuses_invalid_ir(self):
        _, A, B, C, a, b = make_problem(4, 4, 4, 4, "2d", "2d", "2d")
        ops = generate(Stationarity.STATIONARY_C, A, B, C, 0)
        g = build_graph(ops, {"A": A, "B": B, "C": C}, 0)
        bad = IrProgram({0: [IrStep(compute=[0])]})  # incomplete
        with pytest.raises(ContractError, match="completeness"):
            run_ir(bad, g, A, B, C, ExecConfig(), 0)

    def test_remote_accum_limits_respected(self):
        _, A, B, C, a, b = make_problem(4, 8, 8, 8, "2d", "2d", "2d")
        cfg = ExecConfig(stationarity=Stationarity.STATIONARY_B)
        for r in range(4):
            ops = generate(cfg.stationarity, A, B, C, r)
            g = build_graph(ops, {"A": A, "B": B, "C": C}, r)
            prog = lower_greedy(g, max_compute=1, max_comm=1)
            run_ir(prog, g, A, B, C, cfg, r)
        assert np.array_equal(C.gather(), oracle_matmul(a, b))


class TestExecuteMultiply:
    @pytest.mark.parametrize("execution", ["direct", "ir:greedy", "ir:cost"])
    def test_all_modes_match_oracle(self, execution):
        from unimul.costmodel import MachineModel
        from unimul.fabric import LinkTable

        _, A, B, C, a, b = make_problem(4, 9, 7, 11, "row", "2d", "col",
                                        seed=2)
        machine = MachineModel(1e11, 5e10, LinkTable.uniform(4, 1e9))
        execute_multiply(A, B, C, ExecConfig(), execution, machine=machine)
        assert np.array_equal(C.gather(), oracle_matmul(a, b))

    def test_threaded_mode_matches_oracle(self):
        _, A, B, C, a, b = make_problem(4, 12, 12, 12, "2d", "2d", "2d",
                                        seed=4)
        execute_multiply(A, B, C, ExecConfig(), "direct", threaded=True)
        assert np.array_equal(C.gather(), oracle_matmul(a, b))

    def test_replicated_c_is_reduced_by_driver(self):
        p = 4
        _, A, B, C, a, b = make_problem(p, 4, 4, 8, "row", "row", "row",
                                        c_c=p, seed=6)
        execute_multiply(A, B, C, ExecConfig(), "direct")
        assert np.array_equal(C.gather(replica=0), oracle_matmul(a, b))

    def test_unknown_mode(self):
        _, A, B, C, a, b = make_problem(2, 4, 4, 4, "row", "row", "row")
        with pytest.raises(ValueError):
            execute_multiply(A, B, C, ExecConfig(), "ir:magic")


class TestIterationOffsetBalance:
    def test_rotation_family_on_3x3_grid(self):
        p = 9
        _, A, B, C, a, b = make_problem(p, 12, 12, 12, "2d", "2d", "2d")
        stats = run_all_direct(A, B, C, ExecConfig())
        # ranks 0-2, 3-5, 6-8 form the process rows of the 3x3 grid
        for row in range(3):
            ranks = [3 * row + i for i in range(3)]
            nreq = len(stats[ranks[0]].a_requests)
            for pos in range(nreq):
                cols = [stats[r].a_requests[pos].j for r in ranks]
                assert len(set(cols)) == 3, (
                    f"process row {row}, position {pos}: {cols}")
        assert np.array_equal(C.gather(), oracle_matmul(a, b))
