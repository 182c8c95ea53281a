"""Configuration-driven harness and `unimul` command line tool.

Config and sweep files are plain key = value tables (see README for the
grammar).  A run builds the three distributed matrices, executes the multiply
with the requested stationarity and execution strategy, verifies the gathered
result against a dense serial reference, and reports communication counters
and modeled cost.
"""

from __future__ import annotations

import argparse
import itertools
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

from unimul import costmodel, lowering, opgen, runtime, tiling
from unimul.distmatrix import DistributedMatrix
from unimul.errors import ConfigError
from unimul.fabric import AccumulateMode, Fabric, LinkTable
from unimul.opgen import Stationarity
from unimul.tiling import Mapping, PartitionSpec, Shape2D

log = logging.getLogger("unimul")

CSV_HEADER = "config,stationarity,pass,max_rel_err,comm_bytes,flops_max_rank,model_cost_s,ops"

_DEFAULTS = {
    "m": "8", "n": "8", "k": "8", "p": "4",
    "a_part": "2d", "b_part": "2d", "c_part": "2d",
    "c_a": "1", "c_b": "1", "c_c": "1",
    "stationarity": "c",
    "execution": "direct",
    "seed": "0",
    "real": "false",
    "arith_peak": "1e11",
    "mem_bw": "5e10",
    "bandwidth": "1e9",
    "topology": "uniform",
    "group_size": "0",
    "inter_bandwidth": "0",
    "prefetch_depth": "2",
    "max_inflight_gemms": "4",
    "max_inflight_accums": "4",
    "accumulate_mode": "peer",
    "pool_capacity": "",
    "max_compute": "4",
    "max_comm": "4",
    "threaded": "false",
}

_STATIONARITIES = {
    "a": Stationarity.STATIONARY_A,
    "b": Stationarity.STATIONARY_B,
    "c": Stationarity.STATIONARY_C,
}

_EXECUTIONS = ("direct", "ir:greedy", "ir:cost", "ir:exhaustive")


@dataclass
class RunConfig:
    m: int
    n: int
    k: int
    p: int
    a_part: str = "2d"
    b_part: str = "2d"
    c_part: str = "2d"
    c_a: int = 1
    c_b: int = 1
    c_c: int = 1
    stationarity: str = "c"  # a | b | c | auto
    execution: str = "direct"
    seed: int = 0
    real: bool = False
    arith_peak: float = 1e11
    mem_bw: float = 5e10
    bandwidth: float = 1e9
    topology: str = "uniform"
    group_size: int = 0
    inter_bandwidth: float = 0.0
    prefetch_depth: int = 2
    max_inflight_gemms: int = 4
    max_inflight_accums: int = 4
    accumulate_mode: str = "peer"
    pool_capacity: int | None = None
    max_compute: int = 4
    max_comm: int = 4
    threaded: bool = False

    def config_id(self) -> str:
        return (
            f"m{self.m}n{self.n}k{self.k}p{self.p}"
            f"-{self.a_part}.{self.b_part}.{self.c_part}"
            f"-c{self.c_a}.{self.c_b}.{self.c_c}"
            f"-s{self.stationarity}-{self.execution}-seed{self.seed}"
        )

    def validate(self):
        for label, c in (("c_a", self.c_a), ("c_b", self.c_b), ("c_c", self.c_c)):
            if c < 1 or self.p % c != 0:
                raise ConfigError(
                    f"replication must divide process count: {label}={c}, p={self.p}"
                )
        if self.stationarity not in ("a", "b", "c", "auto"):
            raise ConfigError(f"unknown stationarity {self.stationarity!r}")
        if self.execution not in _EXECUTIONS:
            raise ConfigError(f"unknown execution {self.execution!r}")
        if self.accumulate_mode not in ("peer", "lockgetput"):
            raise ConfigError(f"unknown accumulate_mode {self.accumulate_mode!r}")


@dataclass
class RunResult:
    config_id: str
    stationarity: str
    passed: bool
    max_rel_err: float
    comm_bytes: int
    flops_max_rank: int
    model_cost_s: float
    op_count: int
    invalid: bool = False
    counters: "FabricCounters | None" = field(default=None, repr=False)

    def csv_row(self) -> str:
        status = "invalid" if self.invalid else ("pass" if self.passed else "fail")
        return (
            f"{self.config_id},{self.stationarity},{status},{self.max_rel_err:.3e},"
            f"{self.comm_bytes},{self.flops_max_rank},{self.model_cost_s:.6e},"
            f"{self.op_count}"
        )


def resolve_partition(desc: str, shape: Shape2D, nranks: int) -> PartitionSpec:
    """Map a partition descriptor string to a PartitionSpec.

    row | col | 2d | misaligned | custom:TR:TC[:PR:PC[:cyclic]]
    """
    if desc == "row":
        return tiling.row_block(shape, nranks)
    if desc == "col":
        return tiling.col_block(shape, nranks)
    if desc == "2d":
        return tiling.block_2d(shape, nranks)
    if desc == "misaligned":
        return PartitionSpec(Shape2D(3, 4), tiling.most_square_grid(nranks))
    if desc.startswith("custom:"):
        parts = desc.split(":")[1:]
        if len(parts) not in (2, 4, 5):
            raise ConfigError(f"bad custom partition {desc!r}")
        tile = Shape2D(int(parts[0]), int(parts[1]))
        if len(parts) >= 4:
            grid = Shape2D(int(parts[2]), int(parts[3]))
        else:
            grid = tiling.most_square_grid(nranks)
        mapping = Mapping.BLOCK_CYCLIC if len(parts) == 5 and parts[4] == "cyclic" \
            else Mapping.BLOCK
        return PartitionSpec(tile, grid, mapping)
    raise ConfigError(f"unknown partition descriptor {desc!r}")


def build_problem(cfg: RunConfig):
    """Fabric, machine model, and the three matrices (A, B random; C zero)."""
    cfg.validate()
    if cfg.topology == "twolevel":
        if cfg.group_size <= 0 or cfg.inter_bandwidth <= 0:
            raise ConfigError("twolevel topology needs group_size and inter_bandwidth")
        links = LinkTable.two_level(cfg.p, cfg.group_size, cfg.bandwidth,
                                    cfg.inter_bandwidth)
    elif cfg.topology == "uniform":
        links = LinkTable.uniform(cfg.p, cfg.bandwidth)
    else:
        raise ConfigError(f"unknown topology {cfg.topology!r}")
    fabric = Fabric(cfg.p, links)
    machine = costmodel.MachineModel(cfg.arith_peak, cfg.mem_bw, links)

    rng = np.random.default_rng(cfg.seed)
    if cfg.real:
        a_dense = rng.uniform(-8.0, 8.0, size=(cfg.m, cfg.k))
        b_dense = rng.uniform(-8.0, 8.0, size=(cfg.k, cfg.n))
    else:
        a_dense = rng.integers(-8, 9, size=(cfg.m, cfg.k)).astype(float)
        b_dense = rng.integers(-8, 9, size=(cfg.k, cfg.n)).astype(float)

    def make(name, dense_or_none, shape, part_desc, c):
        part = resolve_partition(part_desc, shape, cfg.p // c)
        init = None
        if dense_or_none is not None:
            init = lambda r, cc: dense_or_none[r, cc]  # noqa: E731
        return DistributedMatrix(fabric, name, shape, part, c, init)

    A = make("A", a_dense, Shape2D(cfg.m, cfg.k), cfg.a_part, cfg.c_a)
    B = make("B", b_dense, Shape2D(cfg.k, cfg.n), cfg.b_part, cfg.c_b)
    C = make("C", None, Shape2D(cfg.m, cfg.n), cfg.c_part, cfg.c_c)
    return fabric, machine, A, B, C, a_dense, b_dense


def modeled_cost(stationarity: Stationarity, A, B, C, machine,
                 max_compute, max_comm) -> tuple[float, int]:
    """Greedy-lowered program cost over all ranks, plus total op count."""
    programs, ops_by_rank = [], {}
    total_ops = 0
    for rank in range(A.fabric.nprocs):
        ops = opgen.generate(stationarity, A, B, C, rank)
        g = lowering.build_graph(ops, {"A": A, "B": B, "C": C}, rank)
        programs.append(lowering.lower_greedy(g, max_compute, max_comm))
        ops_by_rank[rank] = ops
        total_ops += len(ops)
    prog = lowering.merge_programs(programs)
    return costmodel.program_cost(prog, ops_by_rank, machine), total_ops


def pick_stationarity(A, B, C, machine, max_compute, max_comm) -> Stationarity:
    """Minimal modeled cost over the three options; ties keep Stationary C."""
    best = Stationarity.STATIONARY_C
    best_cost, _ = modeled_cost(best, A, B, C, machine, max_compute, max_comm)
    for cand in (Stationarity.STATIONARY_A, Stationarity.STATIONARY_B):
        cost, _ = modeled_cost(cand, A, B, C, machine, max_compute, max_comm)
        if cost < best_cost:
            best, best_cost = cand, cost
    return best


def run_one(cfg: RunConfig) -> RunResult:
    fabric, machine, A, B, C, a_dense, b_dense = build_problem(cfg)
    if cfg.stationarity == "auto":
        stationarity = pick_stationarity(A, B, C, machine,
                                         cfg.max_compute, cfg.max_comm)
    else:
        stationarity = _STATIONARITIES[cfg.stationarity]
    exec_cfg = runtime.ExecConfig(
        stationarity=stationarity,
        prefetch_depth=cfg.prefetch_depth,
        max_inflight_gemms=cfg.max_inflight_gemms,
        max_inflight_accums=cfg.max_inflight_accums,
        accumulate_mode=AccumulateMode.PEER_ATOMIC
        if cfg.accumulate_mode == "peer"
        else AccumulateMode.LOCK_GET_PUT,
        pool_capacity=cfg.pool_capacity,
    )
    cost, total_ops = modeled_cost(stationarity, A, B, C, machine,
                                   cfg.max_compute, cfg.max_comm)
    runtime.execute_multiply(
        A, B, C, exec_cfg,
        execution=cfg.execution,
        machine=machine,
        max_compute=cfg.max_compute,
        max_comm=cfg.max_comm,
        threaded=cfg.threaded,
    )
    result = C.gather(0)
    ref = a_dense @ b_dense
    denom = np.linalg.norm(ref)
    err = np.linalg.norm(result - ref) / (denom if denom > 0 else 1.0)
    passed = bool(err <= 1e-10)
    res = RunResult(
        config_id=cfg.config_id(),
        stationarity=stationarity.value,
        passed=passed,
        max_rel_err=float(err),
        comm_bytes=fabric.counters.comm_bytes(),
        flops_max_rank=int(fabric.counters.flops.max()),
        model_cost_s=cost,
        op_count=total_ops,
        counters=fabric.counters,
    )
    log.info("run %s: %s", res.config_id, res.csv_row())
    return res


# -- config file parsing -----------------------------------------------------


def _parse_table(path: str) -> dict[str, list[str]]:
    """key = v1[, v2, ...] lines; '#' starts a comment."""
    table: dict[str, list[str]] = {}
    with open(path) as f:
        for lineno, raw in enumerate(f, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key = key.strip()
            values = [v.strip() for v in value.split(",") if v.strip()]
            if key not in _DEFAULTS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            if not values:
                raise ConfigError(f"{path}:{lineno}: no value for {key!r}")
            table[key] = values
    return table


def _coerce(raw: dict[str, str]) -> RunConfig:
    def as_bool(s):
        return s.lower() in ("1", "true", "yes")

    return RunConfig(
        m=int(raw["m"]), n=int(raw["n"]), k=int(raw["k"]), p=int(raw["p"]),
        a_part=raw["a_part"], b_part=raw["b_part"], c_part=raw["c_part"],
        c_a=int(raw["c_a"]), c_b=int(raw["c_b"]), c_c=int(raw["c_c"]),
        stationarity=raw["stationarity"],
        execution=raw["execution"],
        seed=int(raw["seed"]),
        real=as_bool(raw["real"]),
        arith_peak=float(raw["arith_peak"]),
        mem_bw=float(raw["mem_bw"]),
        bandwidth=float(raw["bandwidth"]),
        topology=raw["topology"],
        group_size=int(raw["group_size"]),
        inter_bandwidth=float(raw["inter_bandwidth"]),
        prefetch_depth=int(raw["prefetch_depth"]),
        max_inflight_gemms=int(raw["max_inflight_gemms"]),
        max_inflight_accums=int(raw["max_inflight_accums"]),
        accumulate_mode=raw["accumulate_mode"],
        pool_capacity=int(raw["pool_capacity"]) if raw["pool_capacity"] else None,
        max_compute=int(raw["max_compute"]),
        max_comm=int(raw["max_comm"]),
        threaded=as_bool(raw["threaded"]),
    )


def load_config(path: str) -> RunConfig:
    table = _parse_table(path)
    raw = dict(_DEFAULTS)
    for key, values in table.items():
        if len(values) != 1:
            raise ConfigError(f"{path}: key {key!r} must be single-valued here")
        raw[key] = values[0]
    return _coerce(raw)


def iter_sweep_configs(path: str):
    """Cross-product of all listed dimensions, in file key order."""
    table = _parse_table(path)
    keys = list(table.keys())
    for combo in itertools.product(*(table[k] for k in keys)):
        raw = dict(_DEFAULTS)
        raw.update(dict(zip(keys, combo)))
        yield _coerce(raw)


def run_sweep(path: str) -> tuple[list[RunResult], bool]:
    results = []
    all_ok = True
    for cfg in iter_sweep_configs(path):
        try:
            res = run_one(cfg)
        except ConfigError as e:
            log.warning("invalid config %s: %s", cfg.config_id(), e)
            res = RunResult(cfg.config_id(), cfg.stationarity, False, float("nan"),
                            0, 0, 0.0, 0, invalid=True)
        results.append(res)
        all_ok = all_ok and res.passed and not res.invalid
    return results, all_ok


# -- entry points ------------------------------------------------------------


def _write_counters(prefix: str, counters):
    with open(f"{prefix}_links.csv", "w") as f:
        f.write(counters.link_csv())
    with open(f"{prefix}_flops.csv", "w") as f:
        f.write(counters.flops_csv())


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        res = run_one(cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(CSV_HEADER)
    print(res.csv_row())
    if args.counters:
        _write_counters(args.counters, res.counters)
    return 0 if res.passed else 1


def _cmd_sweep(args) -> int:
    try:
        results, all_ok = run_sweep(args.sweep)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    lines = [CSV_HEADER] + [r.csv_row() for r in results]
    text = "\n".join(lines) + "\n"
    if args.output:
        with open(args.output, "w") as f:
            f.write(text)
    else:
        print(text, end="")
    return 0 if all_ok else 1


def _cmd_dump_ops(args) -> int:
    cfg = load_config(args.config)
    _, machine, A, B, C, _, _ = build_problem(cfg)
    stationarity = (
        pick_stationarity(A, B, C, machine, cfg.max_compute, cfg.max_comm)
        if cfg.stationarity == "auto"
        else _STATIONARITIES[cfg.stationarity]
    )
    for rank in range(cfg.p):
        for op in opgen.generate(stationarity, A, B, C, rank):
            print(f"rank {rank}: {opgen.format_op(op)}")
    return 0


def _cmd_dump_ir(args) -> int:
    cfg = load_config(args.config)
    _, machine, A, B, C, _, _ = build_problem(cfg)
    stationarity = (
        pick_stationarity(A, B, C, machine, cfg.max_compute, cfg.max_comm)
        if cfg.stationarity == "auto"
        else _STATIONARITIES[cfg.stationarity]
    )
    for rank in range(cfg.p):
        ops = opgen.generate(stationarity, A, B, C, rank)
        g = lowering.build_graph(ops, {"A": A, "B": B, "C": C}, rank)
        if cfg.execution == "ir:cost":
            prog = lowering.lower_cost_greedy(g, machine, cfg.max_compute,
                                              cfg.max_comm)
        elif cfg.execution == "ir:exhaustive":
            prog = lowering.lower_exhaustive(g, machine, cfg.max_compute,
                                             cfg.max_comm)
        else:
            prog = lowering.lower_greedy(g, cfg.max_compute, cfg.max_comm)
        print(f"# rank {rank}")
        print(lowering.format_program(prog, rank))
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("UNIMUL_LOG", "WARNING").upper())
    parser = argparse.ArgumentParser(
        prog="unimul",
        description="Universal one-sided distributed matrix multiply simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configuration")
    p_run.add_argument("config")
    p_run.add_argument("--counters", help="write <prefix>_links.csv / _flops.csv")
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a sweep file")
    p_sweep.add_argument("sweep")
    p_sweep.add_argument("-o", "--output", help="output CSV path")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_ops = sub.add_parser("dump-ops", help="print per-rank op lists")
    p_ops.add_argument("config")
    p_ops.set_defaults(func=_cmd_dump_ops)

    p_ir = sub.add_parser("dump-ir", help="print per-rank lowered IR")
    p_ir.add_argument("config")
    p_ir.set_defaults(func=_cmd_dump_ir)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
