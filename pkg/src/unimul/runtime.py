"""Execution of op lists and IR programs over the fabric.

Direct execution follows the four-step per-op procedure (fetch inputs,
stage output, local GEMM, remote accumulate) augmented with the iteration
offset, async prefetch of upcoming iterations, bounded in-flight accumulates,
and a fixed buffer pool.  IR execution replays a validated step schedule.
Both paths finish with a harness-level barrier; replicated outputs are
reduced by the driver afterwards.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np

from unimul import kernels, lowering, opgen
from unimul.distmatrix import DistributedMatrix, TileView
from unimul.errors import ContractError
from unimul.fabric import AccumulateMode
from unimul.opgen import LocalMatMulOp, Stationarity
from unimul.tiling import TileIdx


@dataclass
class ExecConfig:
    stationarity: Stationarity = Stationarity.STATIONARY_C
    prefetch_depth: int = 2
    max_inflight_gemms: int = 4
    max_inflight_accums: int = 4
    accumulate_mode: AccumulateMode = AccumulateMode.PEER_ATOMIC
    pool_capacity: int | None = None  # None: sized from prefetch + inflight

    def __post_init__(self):
        if self.prefetch_depth < 1 or self.max_inflight_gemms < 1 \
                or self.max_inflight_accums < 1:
            raise ValueError("ExecConfig counts must be >= 1")
        if self.pool_capacity is not None and self.pool_capacity < 3:
            raise ValueError("pool_capacity must cover at least one op (3 buffers)")


class BufferPool:
    """Fixed arena of tile-sized buffers; no allocation after construction."""

    def __init__(self, capacity: int, buffer_elems: int):
        self._arena = np.zeros((capacity, max(1, buffer_elems)))
        self._free = list(range(capacity))
        self.capacity = capacity
        self.acquired = 0
        self.released = 0
        self.peak_in_use = 0

    @property
    def free_count(self) -> int:
        return len(self._free)

    def acquire(self, drain=None) -> tuple[int, np.ndarray]:
        """Pop a free buffer; when exhausted, drain pending work to free one."""
        while not self._free:
            if drain is None or not drain():
                raise RuntimeError(
                    "buffer pool exhausted with nothing left to drain; "
                    "increase pool_capacity"
                )
        slot = self._free.pop()
        self.acquired += 1
        self.peak_in_use = max(self.peak_in_use, self.capacity - len(self._free))
        return slot, self._arena[slot]

    def release(self, slot: int):
        self._free.append(slot)
        self.released += 1


@dataclass
class RunStats:
    executed_ops: list[LocalMatMulOp] = field(default_factory=list)
    a_requests: list[TileIdx] = field(default_factory=list)
    b_requests: list[TileIdx] = field(default_factory=list)
    peak_inflight_gemms: int = 0
    peak_inflight_accums: int = 0
    pool_acquired: int = 0
    pool_released: int = 0
    pool_peak: int = 0
    flops: int = 0


def iteration_offset(stationary_tile: TileIdx, nops: int) -> int:
    """Per-process rotation of the op list: (i + j) mod nops."""
    if nops < 1:
        raise ValueError("nops must be >= 1")
    return (stationary_tile.i + stationary_tile.j) % nops


def local_gemm(a: np.ndarray, b: np.ndarray, c: np.ndarray,
               counters=None, rank: int = 0) -> None:
    """c += a @ b, reporting multiply-add flops to the runtime counters."""
    m, k = a.shape
    k2, n = b.shape
    if k != k2 or c.shape != (m, n):
        raise ContractError(
            f"gemm shape mismatch: {a.shape} x {b.shape} -> {c.shape}"
        )
    kernels.gemm_accumulate(a, b, c)
    if counters is not None:
        counters.add_flops(rank, 2 * m * k * n)


class _OpExecutor:
    """Shared per-rank machinery: input staging, GEMM, output accumulate."""

    def __init__(self, A, B, C, cfg: ExecConfig, caller: int, pool: BufferPool):
        self.A, self.B, self.C = A, B, C
        self.cfg = cfg
        self.caller = caller
        self.pool = pool
        self.counters = A.fabric.counters
        self.stats = RunStats()
        # (op, scratch slot, scratch view) awaiting remote accumulate
        self.pending_accums: list[tuple[LocalMatMulOp, int, np.ndarray]] = []

    def is_local(self, mat: DistributedMatrix, t: TileIdx) -> bool:
        return mat.owner_rank(t, mat.replica_of(self.caller)) == self.caller

    def flush_one_accum(self) -> bool:
        if not self.pending_accums:
            return False
        op, slot, scratch = self.pending_accums.pop(0)
        self.C.accumulate_tile(
            None, op.c_tile, scratch, op.c_local,
            caller=self.caller, mode=self.cfg.accumulate_mode,
        )
        self.pool.release(slot)
        return True

    def flush_all_accums(self):
        while self.flush_one_accum():
            pass

    def run_op(self, op: LocalMatMulOp, a_tile, b_tile, release_slots):
        """GEMM one op given staged input tiles, then stage its C update."""
        a_slice = a_tile[op.a_local.rows.lo : op.a_local.rows.hi,
                         op.a_local.cols.lo : op.a_local.cols.hi]
        b_slice = b_tile[op.b_local.rows.lo : op.b_local.rows.hi,
                         op.b_local.cols.lo : op.b_local.cols.hi]
        if self.is_local(self.C, op.c_tile):
            c_view = self.C.tile(op.c_tile, caller=self.caller).data
            c_slice = c_view[op.c_local.rows.lo : op.c_local.rows.hi,
                             op.c_local.cols.lo : op.c_local.cols.hi]
            self.stats.peak_inflight_gemms = max(self.stats.peak_inflight_gemms, 1)
            local_gemm(a_slice, b_slice, c_slice, self.counters, self.caller)
        else:
            slot, buf = self.pool.acquire(self.flush_one_accum)
            mlen, nlen = len(op.m_bound), len(op.n_bound)
            scratch = buf[: mlen * nlen].reshape(mlen, nlen)
            scratch[:] = 0.0
            self.stats.peak_inflight_gemms = max(self.stats.peak_inflight_gemms, 1)
            local_gemm(a_slice, b_slice, scratch, self.counters, self.caller)
            # accumulate ordered after its GEMM; bounded asynchrony
            while len(self.pending_accums) >= min(
                self.cfg.max_inflight_accums, self.cfg.max_inflight_gemms
            ):
                self.flush_one_accum()
            self.pending_accums.append((op, slot, scratch))
            self.stats.peak_inflight_accums = max(
                self.stats.peak_inflight_accums, len(self.pending_accums)
            )
        for slot in release_slots:
            self.pool.release(slot)
        self.stats.executed_ops.append(op)

    def finish(self):
        self.flush_all_accums()
        self.stats.pool_acquired = self.pool.acquired
        self.stats.pool_released = self.pool.released
        self.stats.pool_peak = self.pool.peak_in_use


def _max_tile_elems(*mats: DistributedMatrix) -> int:
    return max(
        m.tile_bounds(t).area for m in mats for t in m.grid.tiles()
    )


def _make_pool(cfg: ExecConfig, A, B, C) -> BufferPool:
    capacity = cfg.pool_capacity
    if capacity is None:
        capacity = 2 * (cfg.prefetch_depth + 1) + cfg.max_inflight_accums + 1
    return BufferPool(capacity, _max_tile_elems(A, B, C))


def run_direct(
    A: DistributedMatrix,
    B: DistributedMatrix,
    C: DistributedMatrix,
    cfg: ExecConfig,
    caller: int,
) -> RunStats:
    """Direct execution of the caller's rotated op list.

    Remote input tiles of the next prefetch_depth iterations are fetched
    asynchronously into pool buffers; local tiles are used as views.  The
    driver is responsible for the end-of-run barrier and, if C is
    replicated, the reduce_replicas call.
    """
    ops = opgen.generate(cfg.stationarity, A, B, C, caller)
    pool = _make_pool(cfg, A, B, C)
    ex = _OpExecutor(A, B, C, cfg, caller, pool)
    if not ops:
        ex.finish()
        return ex.stats
    start = iteration_offset(ops[0].stationary_tile(cfg.stationarity), len(ops))
    ops = ops[start:] + ops[:start]

    # per-iteration staging: {idx: [(matrix, tile, pending|view, slot|None), ...]}
    staged: dict[int, list] = {}

    def issue(idx: int):
        entries = []
        op = ops[idx]
        for label, mat, t in (("A", A, op.a_tile), ("B", B, op.b_tile)):
            if ex.is_local(mat, t):
                entries.append((label, mat, t, mat.tile(t, caller=caller).data, None))
            elif pool.free_count > 3:  # keep headroom for the current op
                slot, buf = pool.acquire()
                pending = mat.get_tile_async(t, caller=caller, out=buf)
                entries.append((label, mat, t, pending, slot))
            else:
                entries.append((label, mat, t, None, None))  # fetch at use time
        staged[idx] = entries

    for idx, op in enumerate(ops):
        for ahead in range(idx, min(idx + cfg.prefetch_depth + 1, len(ops))):
            if ahead not in staged:
                issue(ahead)
        release_slots = []
        tiles = {}
        for label, mat, t, staged_obj, slot in staged.pop(idx):
            if label == "A":
                ex.stats.a_requests.append(t)
            else:
                ex.stats.b_requests.append(t)
            if staged_obj is None:
                slot, buf = pool.acquire(ex.flush_one_accum)
                tiles[label] = mat.get_tile(t, caller=caller, out=buf).data
                release_slots.append(slot)
            elif slot is None:
                tiles[label] = staged_obj  # local view
            else:
                tiles[label] = staged_obj.wait().data
                release_slots.append(slot)
        ex.run_op(op, tiles["A"], tiles["B"], release_slots)
    ex.finish()
    ex.stats.flops = int(A.fabric.counters.flops[caller])
    return ex.stats


def run_ir(
    prog: lowering.IrProgram,
    graph: lowering.CompGraph,
    A: DistributedMatrix,
    B: DistributedMatrix,
    C: DistributedMatrix,
    cfg: ExecConfig,
    caller: int,
) -> RunStats:
    """Execute a validated single-rank IR program.

    Within a step, computes run first (their inputs were fetched in earlier
    steps), then the step's communication: fetches land in the tile cache for
    later steps, accumulates push finished scratch results to remote C tiles.
    """
    violation = lowering.validate(prog, {caller: graph})
    if violation is not None:
        raise ContractError(f"refusing to run invalid IR: {violation.kind}: "
                            f"{violation.message}")
    mats = {"A": A, "B": B, "C": C}
    # scratch for a remote-C op is held until its scheduled accumulate step,
    # so the pool must cover every such op at once
    remote_c = sum(
        1 for cn in graph.compute_nodes if not graph.data_nodes[cn.c_data].local
    )
    capacity = cfg.pool_capacity
    if capacity is None:
        capacity = 2 * (cfg.prefetch_depth + 1) + cfg.max_inflight_accums + 1
    pool = BufferPool(max(capacity, remote_c + 1), _max_tile_elems(A, B, C))
    ex = _OpExecutor(A, B, C, cfg, caller, pool)
    cache: dict[int, np.ndarray] = {}  # data node -> staged tile contents
    scratch_by_op: dict[int, tuple[int, np.ndarray]] = {}

    def input_tile(data_idx: int, mat: DistributedMatrix, t: TileIdx) -> np.ndarray:
        if data_idx in cache:
            return cache[data_idx]
        return mat.tile(t, caller=caller).data  # local by validation

    for step in prog.steps_by_rank[caller]:
        for i in step.compute:
            op = graph.ops[i]
            cn = graph.compute_nodes[i]
            a_tile = input_tile(cn.a_data, A, op.a_tile)
            b_tile = input_tile(cn.b_data, B, op.b_tile)
            a_slice = a_tile[op.a_local.rows.lo : op.a_local.rows.hi,
                             op.a_local.cols.lo : op.a_local.cols.hi]
            b_slice = b_tile[op.b_local.rows.lo : op.b_local.rows.hi,
                             op.b_local.cols.lo : op.b_local.cols.hi]
            if graph.data_nodes[cn.c_data].local:
                c_view = C.tile(op.c_tile, caller=caller).data
                c_slice = c_view[op.c_local.rows.lo : op.c_local.rows.hi,
                                 op.c_local.cols.lo : op.c_local.cols.hi]
                local_gemm(a_slice, b_slice, c_slice, ex.counters, caller)
            else:
                slot, buf = pool.acquire(ex.flush_one_accum)
                mlen, nlen = len(op.m_bound), len(op.n_bound)
                scratch = buf[: mlen * nlen].reshape(mlen, nlen)
                scratch[:] = 0.0
                local_gemm(a_slice, b_slice, scratch, ex.counters, caller)
                scratch_by_op[i] = (slot, scratch)
            ex.stats.executed_ops.append(op)
        for cm in step.comm:
            mat = mats[cm.matrix]
            if cm.kind == "fetch":
                cache[cm.data] = mat.get_tile(cm.tile, caller=caller).data
                if cm.matrix == "A":
                    ex.stats.a_requests.append(cm.tile)
                elif cm.matrix == "B":
                    ex.stats.b_requests.append(cm.tile)
            else:
                slot, scratch = scratch_by_op.pop(cm.op_index)
                op = graph.ops[cm.op_index]
                C.accumulate_tile(None, op.c_tile, scratch, op.c_local,
                                  caller=caller, mode=cfg.accumulate_mode)
                pool.release(slot)
    ex.finish()
    ex.stats.flops = int(A.fabric.counters.flops[caller])
    return ex.stats


def execute_multiply(
    A: DistributedMatrix,
    B: DistributedMatrix,
    C: DistributedMatrix,
    cfg: ExecConfig,
    execution: str = "direct",
    machine=None,
    max_compute: int | None = None,
    max_comm: int | None = None,
    threaded: bool = False,
) -> dict[int, RunStats]:
    """Drive a whole multiply across all logical processes.

    execution: "direct" | "ir:greedy" | "ir:cost" | "ir:exhaustive".
    Lockstep mode steps ranks serially (deterministic); threaded mode runs
    one thread per rank against the shared fabric.  Replicated C is reduced
    into replica 0 after the run-level barrier.
    """
    p = A.fabric.nprocs
    results: dict[int, RunStats] = {}

    def one_rank(rank: int):
        if execution == "direct":
            results[rank] = run_direct(A, B, C, cfg, rank)
            return
        ops = opgen.generate(cfg.stationarity, A, B, C, rank)
        g = lowering.build_graph(ops, {"A": A, "B": B, "C": C}, rank)
        if execution == "ir:greedy":
            prog = lowering.lower_greedy(g, max_compute, max_comm)
        elif execution == "ir:cost":
            prog = lowering.lower_cost_greedy(g, machine, max_compute, max_comm)
        elif execution == "ir:exhaustive":
            prog = lowering.lower_exhaustive(g, machine, max_compute, max_comm)
        else:
            raise ValueError(f"unknown execution mode {execution!r}")
        results[rank] = run_ir(prog, g, A, B, C, cfg, rank)

    if threaded:
        threads = [threading.Thread(target=one_rank, args=(r,)) for r in range(p)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()  # run-level barrier
    else:
        for rank in range(p):
            one_rank(rank)
    if C.c > 1:
        C.reduce_replicas(0, mode=cfg.accumulate_mode)
    return results
