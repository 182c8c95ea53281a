"""Computation graph and lowering of op lists to an explicit-communication IR.

The graph is bipartite: compute nodes (one per local multiply op) on one
side, data nodes (one per distinct referenced tile) on the other.  Edges to
caller-local tiles start satisfied; remote input tiles need a fetch, and each
remote C tile needs an accumulate scheduled in the same step as (or after)
the compute that produces it.  Three lowerers share the step structure:
plain greedy, cost-model greedy, and exhaustive search over all schedules.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

from unimul import costmodel
from unimul.errors import ConfigError
from unimul.opgen import LocalMatMulOp
from unimul.tiling import TileIdx

UNBOUNDED = 10**9


@dataclass(frozen=True)
class DataNode:
    matrix: str
    tile: TileIdx
    owner: int
    nbytes: int
    local: bool


@dataclass(frozen=True)
class ComputeNode:
    index: int  # position in the op list
    a_data: int
    b_data: int
    c_data: int


@dataclass(frozen=True)
class CommOp:
    kind: str  # "fetch" | "accum"
    matrix: str
    tile: TileIdx
    peer: int
    nbytes: int
    data: int  # data node index
    op_index: int | None = None  # producing op, accum only

    def __str__(self) -> str:
        verb = "fetch" if self.kind == "fetch" else "acc"
        return f"{verb} {self.matrix}({self.tile.i},{self.tile.j})@{self.peer}"


@dataclass
class CompGraph:
    caller: int
    ops: list[LocalMatMulOp]
    data_nodes: list[DataNode]
    compute_nodes: list[ComputeNode]

    @property
    def fetch_order(self) -> list[int]:
        """Remote input data nodes, ordered by first reference in the op list."""
        seen: list[int] = []
        for cn in self.compute_nodes:
            for d in (cn.a_data, cn.b_data):
                if not self.data_nodes[d].local and d not in seen:
                    seen.append(d)
        return seen

    def accum_comm(self, op_index: int) -> CommOp | None:
        """Accumulate descriptor for an op with a remote C tile, else None."""
        cn = self.compute_nodes[op_index]
        dn = self.data_nodes[cn.c_data]
        if dn.local:
            return None
        op = self.ops[op_index]
        nbytes = 8 * len(op.m_bound) * len(op.n_bound)
        return CommOp("accum", dn.matrix, dn.tile, dn.owner, nbytes,
                      cn.c_data, op_index)

    def fetch_comm(self, data: int) -> CommOp:
        dn = self.data_nodes[data]
        return CommOp("fetch", dn.matrix, dn.tile, dn.owner, dn.nbytes, data)


@dataclass
class IrStep:
    compute: list[int] = field(default_factory=list)
    comm: list[CommOp] = field(default_factory=list)


@dataclass
class IrProgram:
    steps_by_rank: dict[int, list[IrStep]]
    max_compute: int = UNBOUNDED
    max_comm: int = UNBOUNDED


@dataclass(frozen=True)
class Violation:
    kind: str  # "dependency" | "fetch" | "completeness" | "limits" | "accum"
    message: str


def build_graph(
    ops: list[LocalMatMulOp], matrices: dict[str, "DistributedMatrix"], caller: int
) -> CompGraph:
    """Bipartite graph for one process; data nodes deduped by (matrix, tile)."""
    data_nodes: list[DataNode] = []
    index: dict[tuple[str, TileIdx], int] = {}

    def node(matrix: str, tile: TileIdx) -> int:
        key = (matrix, tile)
        if key not in index:
            mat = matrices[matrix]
            owner = mat.owner_rank(tile, mat.replica_of(caller))
            index[key] = len(data_nodes)
            data_nodes.append(
                DataNode(matrix, tile, owner, mat.tile_nbytes(tile),
                         owner == caller)
            )
        return index[key]

    compute_nodes = [
        ComputeNode(i, node("A", op.a_tile), node("B", op.b_tile),
                    node("C", op.c_tile))
        for i, op in enumerate(ops)
    ]
    return CompGraph(caller, ops, data_nodes, compute_nodes)


def _eligible_compute(g: CompGraph, scheduled: set[int], satisfied: set[int]):
    return [
        cn.index
        for cn in g.compute_nodes
        if cn.index not in scheduled
        and cn.a_data in satisfied
        and cn.b_data in satisfied
    ]


def lower_greedy(
    g: CompGraph, max_compute: int | None = None, max_comm: int | None = None
) -> IrProgram:
    """FIFO greedy: fill compute with eligible ops, then comm, emit, repeat."""
    max_compute = max_compute or UNBOUNDED
    max_comm = max_comm or UNBOUNDED
    satisfied = {i for i, d in enumerate(g.data_nodes) if d.local}
    fetch_pending = list(g.fetch_order)
    accum_queue: list[CommOp] = []
    scheduled: set[int] = set()
    steps: list[IrStep] = []
    while len(scheduled) < len(g.ops) or fetch_pending or accum_queue:
        step = IrStep()
        for i in _eligible_compute(g, scheduled, satisfied):
            if len(step.compute) == max_compute:
                break
            step.compute.append(i)
            scheduled.add(i)
            acc = g.accum_comm(i)
            if acc is not None:
                accum_queue.append(acc)
        newly: list[int] = []
        while fetch_pending and len(step.comm) < max_comm:
            d = fetch_pending.pop(0)
            step.comm.append(g.fetch_comm(d))
            newly.append(d)
        while accum_queue and len(step.comm) < max_comm:
            step.comm.append(accum_queue.pop(0))
        if not step.compute and not step.comm:
            raise RuntimeError("lowering stalled: graph has unsatisfiable edges")
        steps.append(step)
        satisfied.update(newly)
    return IrProgram({g.caller: steps}, max_compute, max_comm)


def lower_cost_greedy(
    g: CompGraph,
    machine: costmodel.MachineModel,
    max_compute: int | None = None,
    max_comm: int | None = None,
) -> IrProgram:
    """Greedy by marginal step cost; still fills every step to the limits.

    Candidates are ranked by the step-cost increase their addition causes,
    ties broken compute-before-comm and then by op-list order, so uniform
    costs reproduce the plain greedy schedule.
    """
    max_compute = max_compute or UNBOUNDED
    max_comm = max_comm or UNBOUNDED
    satisfied = {i for i, d in enumerate(g.data_nodes) if d.local}
    fetch_pending = list(g.fetch_order)
    accum_queue: list[CommOp] = []
    scheduled: set[int] = set()
    steps: list[IrStep] = []

    while len(scheduled) < len(g.ops) or fetch_pending or accum_queue:
        step = IrStep()
        comp_sum = 0.0
        comm_sum = 0.0
        step_accums: list[CommOp] = []
        while True:
            candidates = []
            if len(step.compute) < max_compute:
                for rank_pos, i in enumerate(
                    _eligible_compute(g, scheduled, satisfied)
                ):
                    cost = costmodel.op_compute_cost(g.ops[i], machine)
                    marginal = max(comp_sum + cost, comm_sum) - max(comp_sum, comm_sum)
                    candidates.append((marginal, 0, rank_pos, "compute", i, cost))
            if len(step.comm) < max_comm:
                for pos, d in enumerate(fetch_pending):
                    cm = g.fetch_comm(d)
                    cost = costmodel.comm_cost(cm.nbytes, g.caller, cm.peer, machine)
                    marginal = max(comp_sum, comm_sum + cost) - max(comp_sum, comm_sum)
                    candidates.append((marginal, 1, pos, "fetch", d, cost))
                for pos, cm in enumerate(accum_queue + step_accums):
                    cost = costmodel.comm_cost(cm.nbytes, g.caller, cm.peer, machine)
                    marginal = max(comp_sum, comm_sum + cost) - max(comp_sum, comm_sum)
                    candidates.append((marginal, 2, pos, "accum", cm, cost))
            if not candidates:
                break
            marginal, _, _, kind, payload, cost = min(candidates, key=lambda c: c[:3])
            if kind == "compute":
                step.compute.append(payload)
                scheduled.add(payload)
                comp_sum += cost
                acc = g.accum_comm(payload)
                if acc is not None:
                    step_accums.append(acc)
            elif kind == "fetch":
                fetch_pending.remove(payload)
                step.comm.append(g.fetch_comm(payload))
                comm_sum += cost
            else:
                if payload in accum_queue:
                    accum_queue.remove(payload)
                else:
                    step_accums.remove(payload)
                step.comm.append(payload)
                comm_sum += cost
        accum_queue.extend(step_accums)
        if not step.compute and not step.comm:
            raise RuntimeError("lowering stalled: graph has unsatisfiable edges")
        steps.append(step)
        satisfied.update(c.data for c in step.comm if c.kind == "fetch")
    return IrProgram({g.caller: steps}, max_compute, max_comm)


def lower_naive(g: CompGraph) -> IrProgram:
    """One action per step, in op-list order: the no-overlap baseline."""
    satisfied = {i for i, d in enumerate(g.data_nodes) if d.local}
    steps: list[IrStep] = []
    for cn in g.compute_nodes:
        for d in (cn.a_data, cn.b_data):
            if d not in satisfied:
                steps.append(IrStep(comm=[g.fetch_comm(d)]))
                satisfied.add(d)
        steps.append(IrStep(compute=[cn.index]))
        acc = g.accum_comm(cn.index)
        if acc is not None:
            steps.append(IrStep(comm=[acc]))
    return IrProgram({g.caller: steps}, 1, 1)


def lower_exhaustive(
    g: CompGraph,
    machine: costmodel.MachineModel,
    max_compute: int | None = None,
    max_comm: int | None = None,
    exhaustive_bound: int = 6,
) -> IrProgram:
    """Minimum-cost schedule by search over every valid step sequence.

    Exponential: refuses op lists above exhaustive_bound; use
    lower_cost_greedy for larger instances.
    """
    if len(g.ops) > exhaustive_bound:
        raise ConfigError(
            f"{len(g.ops)} ops exceeds exhaustive bound {exhaustive_bound}; "
            "use lower_cost_greedy"
        )
    max_compute = max_compute or UNBOUNDED
    max_comm = max_comm or UNBOUNDED
    all_ops = frozenset(cn.index for cn in g.compute_nodes)
    all_fetches = frozenset(g.fetch_order)
    need_accum = frozenset(
        cn.index for cn in g.compute_nodes if not g.data_nodes[cn.c_data].local
    )
    local_nodes = frozenset(i for i, d in enumerate(g.data_nodes) if d.local)
    memo: dict[tuple, tuple[float, list[IrStep]]] = {}

    def solve(scheduled: frozenset, fetched: frozenset, accumed: frozenset):
        if scheduled == all_ops and fetched == all_fetches and accumed == need_accum:
            return 0.0, []
        key = (scheduled, fetched, accumed)
        if key in memo:
            return memo[key]
        satisfied = local_nodes | fetched
        eligible = [
            cn.index
            for cn in g.compute_nodes
            if cn.index not in scheduled
            and cn.a_data in satisfied
            and cn.b_data in satisfied
        ]
        fetchable = [d for d in g.fetch_order if d not in fetched]
        best = (float("inf"), None)
        for nc in range(min(len(eligible), max_compute), -1, -1):
            for comp_sel in itertools.combinations(eligible, nc):
                accumable = [
                    i
                    for i in sorted((scheduled | set(comp_sel)) & need_accum)
                    if i not in accumed
                ]
                comm_pool = [("fetch", d) for d in fetchable] + [
                    ("accum", i) for i in accumable
                ]
                for nm in range(min(len(comm_pool), max_comm), -1, -1):
                    for comm_sel in itertools.combinations(comm_pool, nm):
                        if nc == 0 and nm == 0:
                            continue
                        step = IrStep(compute=list(comp_sel))
                        for kind, x in comm_sel:
                            step.comm.append(
                                g.fetch_comm(x) if kind == "fetch" else g.accum_comm(x)
                            )
                        cost = costmodel.step_cost(step, g.caller, g.ops, machine)
                        sub_cost, sub_steps = solve(
                            scheduled | set(comp_sel),
                            fetched
                            | {x for kind, x in comm_sel if kind == "fetch"},
                            accumed
                            | {x for kind, x in comm_sel if kind == "accum"},
                        )
                        total = cost + sub_cost
                        if total < best[0]:
                            best = (total, [step] + sub_steps)
        memo[key] = best
        return best

    cost, steps = solve(frozenset(), frozenset(), frozenset())
    if steps is None:
        raise RuntimeError("exhaustive search found no valid schedule")
    return IrProgram({g.caller: steps}, max_compute, max_comm)


def validate(prog: IrProgram, graphs: dict[int, CompGraph]) -> Violation | None:
    """Check every IR invariant; return the first violation or None."""
    for rank, steps in prog.steps_by_rank.items():
        g = graphs[rank]
        satisfied = {i for i, d in enumerate(g.data_nodes) if d.local}
        seen_ops: list[int] = []
        fetched: list[int] = []
        compute_step: dict[int, int] = {}
        accum_step: dict[int, int] = {}
        for s, step in enumerate(steps):
            if len(step.compute) > prog.max_compute:
                return Violation(
                    "limits", f"rank {rank} step {s}: {len(step.compute)} compute ops"
                )
            if len(step.comm) > prog.max_comm:
                return Violation(
                    "limits", f"rank {rank} step {s}: {len(step.comm)} comm ops"
                )
            for i in step.compute:
                cn = g.compute_nodes[i]
                for d in (cn.a_data, cn.b_data):
                    if d not in satisfied:
                        dn = g.data_nodes[d]
                        return Violation(
                            "dependency",
                            f"rank {rank} step {s}: op {i} runs before "
                            f"{dn.matrix}({dn.tile.i},{dn.tile.j}) is fetched",
                        )
                seen_ops.append(i)
                compute_step[i] = s
            for cm in step.comm:
                if cm.kind == "fetch":
                    if cm.data in fetched:
                        return Violation(
                            "fetch",
                            f"rank {rank}: {cm} fetched more than once",
                        )
                    fetched.append(cm.data)
                else:
                    accum_step[cm.op_index] = s
            # fetches of step s satisfy dependents from step s+1 on
            satisfied.update(cm.data for cm in step.comm if cm.kind == "fetch")
        if sorted(seen_ops) != list(range(len(g.ops))) or len(seen_ops) != len(
            set(seen_ops)
        ):
            return Violation(
                "completeness",
                f"rank {rank}: ops scheduled {sorted(set(seen_ops))} "
                f"of {len(g.ops)}",
            )
        needed = set(g.fetch_order)
        if set(fetched) != needed:
            return Violation(
                "fetch", f"rank {rank}: fetched {sorted(fetched)}, needed {sorted(needed)}"
            )
        for cn in g.compute_nodes:
            if g.data_nodes[cn.c_data].local:
                continue
            i = cn.index
            if i not in accum_step:
                return Violation(
                    "accum", f"rank {rank}: op {i} has no remote accumulate"
                )
            if i in compute_step and accum_step[i] < compute_step[i]:
                return Violation(
                    "accum",
                    f"rank {rank}: op {i} accumulates at step {accum_step[i]} "
                    f"before computing at step {compute_step[i]}",
                )
    return None


def format_program(prog: IrProgram, rank: int) -> str:
    lines = []
    for s, step in enumerate(prog.steps_by_rank[rank]):
        comp = " ".join(f"op#{i}" for i in step.compute)
        comm = " ".join(str(c) for c in step.comm)
        lines.append(f"step {s}: compute=[{comp}] comm=[{comm}]")
    return "\n".join(lines)


def merge_programs(programs: list[IrProgram]) -> IrProgram:
    """Combine independently lowered single-rank programs."""
    merged: dict[int, list[IrStep]] = {}
    for p in programs:
        merged.update(p.steps_by_rank)
    first = programs[0]
    return IrProgram(merged, first.max_compute, first.max_comm)
