"""Simulated one-sided communication fabric.

Symmetric memory segments per logical process, remote get (sync and async),
remote accumulate in two modes, and per-link byte/message instrumentation.
The fabric measures volume only; it never advances simulated time.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from unimul.errors import ContractError
from unimul.tiling import Range

ELEM_BYTES = 8  # all storage is float64


class AccumulateMode(Enum):
    PEER_ATOMIC = "peer_atomic"
    LOCK_GET_PUT = "lock_get_put"


@dataclass
class SymSegment:
    """A symmetric-memory segment owned by one rank.

    Readable and writable by any rank, but only through fabric operations;
    the owner may additionally take zero-copy local views.
    """

    owner: int
    length: int
    data: np.ndarray = field(repr=False)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class PendingCopy:
    """Future for an asynchronous get.  wait() may be called exactly once."""

    def __init__(self, buffer: np.ndarray, on_wait):
        self._buffer = buffer
        self._on_wait = on_wait
        self._done = False

    def wait(self) -> np.ndarray:
        if self._done:
            raise RuntimeError("PendingCopy waited on twice")
        self._done = True
        self._on_wait(self)
        return self._buffer

    @property
    def complete(self) -> bool:
        return self._done


class FabricCounters:
    """Cumulative per-(initiator, peer) traffic and per-rank flop counters.

    bytes[r][r] records local copies; comm_bytes() excludes the diagonal so
    that "communication volume" means strictly off-process traffic.
    """

    def __init__(self, nprocs: int):
        self.nprocs = nprocs
        self.bytes = np.zeros((nprocs, nprocs), dtype=np.int64)
        self.msgs = np.zeros((nprocs, nprocs), dtype=np.int64)
        self.flops = np.zeros(nprocs, dtype=np.int64)
        self._lock = threading.Lock()

    def add_traffic(self, initiator: int, peer: int, nbytes: int, nmsgs: int = 1):
        with self._lock:
            self.bytes[initiator, peer] += nbytes
            self.msgs[initiator, peer] += nmsgs

    def add_flops(self, rank: int, flops: int):
        with self._lock:
            self.flops[rank] += flops

    def comm_bytes(self) -> int:
        """Total off-process bytes moved."""
        return int(self.bytes.sum() - np.trace(self.bytes))

    def local_bytes(self) -> int:
        return int(np.trace(self.bytes))

    def total_flops(self) -> int:
        return int(self.flops.sum())

    def link_csv(self) -> str:
        """CSV of nonzero links: src,dst,bytes,msgs."""
        lines = ["src,dst,bytes,msgs"]
        for s in range(self.nprocs):
            for d in range(self.nprocs):
                if self.bytes[s, d] or self.msgs[s, d]:
                    lines.append(f"{s},{d},{self.bytes[s, d]},{self.msgs[s, d]}")
        return "\n".join(lines) + "\n"

    def flops_csv(self) -> str:
        lines = ["rank,flops"]
        for r in range(self.nprocs):
            lines.append(f"{r},{self.flops[r]}")
        return "\n".join(lines) + "\n"


class LinkTable:
    """Per-link bandwidth in bytes/second."""

    def __init__(self, bandwidth: np.ndarray):
        if (bandwidth <= 0).any():
            raise ValueError("all link bandwidths must be positive")
        self.bandwidth = bandwidth

    @classmethod
    def uniform(cls, nprocs: int, bw: float) -> "LinkTable":
        return cls(np.full((nprocs, nprocs), bw, dtype=float))

    @classmethod
    def two_level(
        cls, nprocs: int, group_size: int, intra_bw: float, inter_bw: float
    ) -> "LinkTable":
        """Fast links within contiguous groups of group_size ranks, slow across."""
        groups = np.arange(nprocs) // group_size
        same = groups[:, None] == groups[None, :]
        return cls(np.where(same, intra_bw, inter_bw).astype(float))

    def bw(self, src: int, dst: int) -> float:
        return float(self.bandwidth[src, dst])


class Fabric:
    """The shared substrate all logical processes communicate through."""

    def __init__(self, nprocs: int, links: LinkTable | None = None):
        if nprocs < 1:
            raise ValueError("need at least one process")
        self.nprocs = nprocs
        self.links = links or LinkTable.uniform(nprocs, 1e9)
        self.counters = FabricCounters(nprocs)
        self._outstanding = 0
        self._outstanding_lock = threading.Lock()

    def alloc(self, owner: int, length: int) -> SymSegment:
        if not (0 <= owner < self.nprocs):
            raise ValueError(f"owner {owner} out of range")
        return SymSegment(owner=owner, length=length, data=np.zeros(length))

    def _count_get(self, seg: SymSegment, n: int, caller: int):
        if n > 0:
            self.counters.add_traffic(caller, seg.owner, ELEM_BYTES * n)

    def get(
        self,
        seg: SymSegment,
        elem_range: Range,
        caller: int,
        out: np.ndarray | None = None,
    ) -> np.ndarray:
        """Snapshot of seg[lo:hi] into a private buffer (or `out`)."""
        lo, hi = elem_range.lo, elem_range.hi
        if hi > seg.length:
            raise IndexError(f"range {elem_range} outside segment of {seg.length}")
        n = hi - lo
        with seg.lock:
            if out is None:
                buf = seg.data[lo:hi].copy()
            else:
                buf = out[:n]
                buf[:] = seg.data[lo:hi]
        self._count_get(seg, n, caller)
        return buf

    def get_async(
        self,
        seg: SymSegment,
        elem_range: Range,
        caller: int,
        out: np.ndarray | None = None,
    ) -> PendingCopy:
        """As get(), but returns a future.  Completion is observed at wait().

        The copy is materialized at issue time (the simulation has no
        in-flight period); counters are identical to the synchronous path.
        """
        buf = self.get(seg, elem_range, caller, out=out)
        with self._outstanding_lock:
            self._outstanding += 1
        return PendingCopy(buf, self._retire_copy)

    def _retire_copy(self, _pending: PendingCopy):
        with self._outstanding_lock:
            self._outstanding -= 1

    @property
    def outstanding_copies(self) -> int:
        """Issued-but-unwaited async gets; nonzero at teardown means a leak."""
        return self._outstanding

    def accumulate(
        self,
        seg: SymSegment,
        elem_range: Range,
        values: np.ndarray,
        caller: int,
        mode: AccumulateMode = AccumulateMode.PEER_ATOMIC,
    ):
        """Element-wise += into seg[lo:hi].

        PEER_ATOMIC models a remote atomic-update kernel (one payload on the
        wire); LOCK_GET_PUT models a lock + get + put round trip (2x bytes,
        two messages).
        """
        lo, hi = elem_range.lo, elem_range.hi
        if hi > seg.length:
            raise IndexError(f"range {elem_range} outside segment of {seg.length}")
        n = hi - lo
        if len(values) != n:
            raise ContractError(f"payload of {len(values)} for range of {n}")
        if n == 0:
            return
        if mode is AccumulateMode.PEER_ATOMIC:
            with seg.lock:
                seg.data[lo:hi] += values
            self.counters.add_traffic(caller, seg.owner, ELEM_BYTES * n, 1)
        else:
            with seg.lock:
                tmp = seg.data[lo:hi].copy()
                tmp += values
                seg.data[lo:hi] = tmp
            self.counters.add_traffic(caller, seg.owner, 2 * ELEM_BYTES * n, 2)

    def local_view(self, seg: SymSegment, caller: int) -> np.ndarray:
        """Zero-copy view of a segment; owner only."""
        if caller != seg.owner:
            raise ContractError(
                f"rank {caller} asked for a local view of rank {seg.owner}'s segment"
            )
        return seg.data
