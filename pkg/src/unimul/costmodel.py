"""Roofline compute-cost and bandwidth communication-cost estimates.

Compute cost is max(flops / arithmetic peak, bytes touched / memory
bandwidth); communication cost is payload bytes over the link bandwidth.
A scheduled step costs the max of its (summed) compute and (summed) comm:
the two categories overlap perfectly, work within a category serializes.
No latency term; this is a pure bandwidth model.
"""

from __future__ import annotations

from dataclasses import dataclass

from unimul.fabric import LinkTable


@dataclass(frozen=True)
class MachineModel:
    arith_peak: float  # flops/second
    mem_bw: float  # bytes/second
    links: LinkTable

    def __post_init__(self):
        if self.arith_peak <= 0 or self.mem_bw <= 0:
            raise ValueError("machine peaks must be positive")


def compute_cost(m_len: int, k_len: int, n_len: int, machine: MachineModel) -> float:
    """Roofline estimate for one m x k x n multiply-accumulate, in seconds."""
    flops = 2 * m_len * k_len * n_len
    nbytes = 8 * (m_len * k_len + k_len * n_len + m_len * n_len)
    if flops == 0:
        return 0.0
    return max(flops / machine.arith_peak, nbytes / machine.mem_bw)


def comm_cost(nbytes: int, src: int, dst: int, machine: MachineModel) -> float:
    """Transfer time for nbytes over the (src, dst) link, in seconds."""
    if nbytes < 0:
        raise ValueError("negative byte count")
    return nbytes / machine.links.bw(src, dst)


def op_compute_cost(op, machine: MachineModel) -> float:
    return compute_cost(len(op.m_bound), len(op.k_bound), len(op.n_bound), machine)


def step_cost(step, caller: int, ops, machine: MachineModel) -> float:
    """max(summed compute, summed comm) for one IR step of one process."""
    c = sum(op_compute_cost(ops[i], machine) for i in step.compute)
    w = sum(comm_cost(d.nbytes, caller, d.peer, machine) for d in step.comm)
    return max(c, w)


def program_cost(prog, ops_by_rank, machine: MachineModel) -> float:
    """Critical path over SPMD peers: per-rank sum of step costs, max'd."""
    worst = 0.0
    for rank, steps in prog.steps_by_rank.items():
        total = sum(step_cost(s, rank, ops_by_rank[rank], machine) for s in steps)
        worst = max(worst, total)
    return worst
