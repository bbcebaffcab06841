"""The two demonstration programs and their runners.

``distribute`` populates every core of the hypercube with a ``node``
process by spawning a copy of itself on a neighbour each recursion
level, halving its processor range.  ``par-msort`` reuses the same
placement to sort: above the distribution threshold the second half of
the array is sorted remotely in parallel with the first, below it the
call collapses to a sequential mergesort.

Sequential compute advances the clock by the calibrated cost functions
(a merge costs slope*n + intercept, a sequential sort its analytic
total) while performing the real data manipulation, so results are
genuine sorted arrays and times compose the calibrated leaf costs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Generator, Optional, Sequence

from .costmodel import (CostConstants, DEFAULT_CONSTANTS, SEQ_COST_CLOSED,
                        SEQ_COST_MODES, check_pow2, ilog2, merge_time,
                        seq_sort_time)
from .engine import Machine, SimulationError, Simulator, Trace
from .protocol import SpawnRecord
from .runtime import (Array, ArraySlice, ProcedureRegistry, Run, RunContext,
                      alias, build_machine, new_simulator)
from .topology import Hypercube, default_chip_dims

# Image sizes (bytes) of the shipped procedures.  Together with the
# handshake overhead these calibrate both measured spawn constants: a
# distribute closure is 38 wire words, a sort closure 102 + n, so the
# bare spawn costs bare_spawn_ns and a sorting spawn costs
# spawn_init_ns + 2 * word_send_ns * n exactly.
NODE_IMAGE_BYTES = 32
DISTRIBUTE_IMAGE_BYTES = 80
MERGE_IMAGE_BYTES = 160
SEQ_MSORT_IMAGE_BYTES = 96
PAR_MSORT_IMAGE_BYTES = 200

THRESHOLD_AUTO = "auto"


def node_proc(ctx: RunContext, t: int) -> Generator:
    """Leaf payload: record (node, arrival time) in the run log."""
    ctx.run.visits.append((t, ctx.now))
    ctx.note("visit")
    yield from ()


def distribute_proc(ctx: RunContext, t: int, n: int) -> Generator:
    if n == 1:
        yield from ctx.call("node", t)
        return
    half = n // 2
    yield from ctx.par(
        lambda: ctx.call("distribute", t, half),
        lambda: ctx.on(t + half, "distribute", t + half, half),
    )


def merge_proc(ctx: RunContext, out, left, right) -> Generator:
    """Merge sorted ``left`` and ``right`` into ``out`` (stable: equal
    keys come from ``left`` first), charging the linear merge cost.
    """
    if len(out) != len(left) + len(right):
        raise ValueError(
            f"merge into {len(out)} words from {len(left)}+{len(right)}")
    merged = _merge_words(left, right)
    for k, w in enumerate(merged):
        out[k] = w
    ctx.run.merges += 1
    ctx.note("merge")
    yield from ctx.charge(merge_time(len(out), ctx.constants))


def seq_msort_proc(ctx: RunContext, arr) -> Generator:
    yield from _seq_sort_lump(ctx, arr)


def par_msort_proc(ctx: RunContext, t: int, n: int, arr) -> Generator:
    size = len(arr)
    if size <= 1 or not ctx.should_fork(size):
        yield from _seq_sort_lump(ctx, arr)
        return
    half = size // 2
    a = alias(arr, 0, half)
    b = alias(arr, half, size)
    yield from ctx.par(
        lambda: ctx.call("par-msort", t, n // 2, a),
        lambda: ctx.on(t + n // 2, "par-msort", t + n // 2, n // 2, b),
    )
    yield from ctx.call("merge", arr, a, b)


def _merge_words(left, right) -> list[int]:
    a, b = left.tolist() if hasattr(left, "tolist") else list(left), \
        right.tolist() if hasattr(right, "tolist") else list(right)
    out = []
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i] <= b[j]:
            out.append(a[i])
            i += 1
        else:
            out.append(b[j])
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return out


def _sort_words(arr) -> None:
    """In-place mergesort of an Array/slice; pure data work, no clock."""
    size = len(arr)
    if size <= 1:
        return
    half = size // 2
    a = alias(arr, 0, half)
    b = alias(arr, half, size)
    _sort_words(a)
    _sort_words(b)
    merged = _merge_words(a, b)
    for k, w in enumerate(merged):
        arr[k] = w


def _seq_sort_lump(ctx: RunContext, arr) -> Generator:
    """A below-threshold subtree: one analytic charge for the whole
    sequential sort, real data sorted in place.
    """
    size = len(arr)
    _sort_words(arr)
    ctx.run.seq_lumps += 1
    ctx.note("lump")
    if size >= 1:
        yield from ctx.charge(seq_sort_time(size, ctx.run.seq_cost_mode,
                                            ctx.constants))


def standard_registry() -> ProcedureRegistry:
    reg = ProcedureRegistry()
    reg.register("node", node_proc, NODE_IMAGE_BYTES)
    reg.register("distribute", distribute_proc, DISTRIBUTE_IMAGE_BYTES,
                 callees=("node",))
    reg.register("merge", merge_proc, MERGE_IMAGE_BYTES)
    reg.register("seq-msort", seq_msort_proc, SEQ_MSORT_IMAGE_BYTES,
                 callees=("merge",))
    reg.register("par-msort", par_msort_proc, PAR_MSORT_IMAGE_BYTES,
                 callees=("merge",))
    return reg


@dataclass
class ProgramResult:
    program: str
    d: int
    p: int
    n_words: int
    total_ns: int
    visits: list[tuple[int, int]]
    spawns: list[SpawnRecord]
    merges: int
    seq_lumps: int
    trace: Optional[Trace]
    input_data: Optional[list[int]] = None
    output_data: Optional[list[int]] = None
    threshold: Optional[int | str] = None
    seq_cost_mode: str = SEQ_COST_CLOSED
    events: int = 0

    @property
    def spawn_count(self) -> int:
        return len(self.spawns)

    @property
    def cores_used(self) -> int:
        return len({0} | {s.host for s in self.spawns})

    @property
    def sorted_ok(self) -> Optional[bool]:
        if self.output_data is None:
            return None
        return self.output_data == sorted(self.input_data)

    def node_level(self, label: int) -> int:
        """Recursion level at which a node is first reached: 0 for the
        origin, else the dimension depth of its lowest set bit.
        """
        if label == 0:
            return 0
        return self.d - ((label & -label).bit_length() - 1)

    def level_arrivals(self) -> dict[int, int]:
        """Latest node arrival per recursion level."""
        arrivals: dict[int, int] = {}
        for label, at in self.visits:
            lvl = self.node_level(label)
            arrivals[lvl] = max(arrivals.get(lvl, 0), at)
        return arrivals

    def level_times(self) -> list[tuple[int, int]]:
        """(level, duration) pairs: differences between the latest
        arrivals of consecutive levels.
        """
        arrivals = self.level_arrivals()
        out = []
        prev = arrivals.get(0, 0)
        for lvl in range(1, self.d + 1):
            cur = arrivals.get(lvl, prev)
            out.append((lvl, cur - prev))
            prev = cur
        return out


def make_topology(d: int, chip_dims: Optional[Sequence[int]] = None,
                  on_chip_factor: float = 0.8) -> Hypercube:
    """Uniform links unless a chip mapping is requested; ``chip_dims``
    of "default" selects the two most significant dimensions.
    """
    if chip_dims is None:
        dims = frozenset()
    elif chip_dims == "default":
        dims = default_chip_dims(d)
    else:
        dims = frozenset(chip_dims)
    return Hypercube(d, dims, on_chip_factor)


def _finish_run(sim: Simulator, run: Run, require_single_hop: bool = True) -> None:
    """Post-run invariants: placement, memory and thread conservation."""
    topo = sim.machine.topo
    if require_single_hop:
        for s in run.spawns:
            if topo.hop_distance(s.guest, s.host) != 1:
                raise SimulationError(
                    f"spawn {s.proc_name} {s.guest}->{s.host} is not single-hop")
    for core in sim.machine.cores:
        if core.mem_used != 0:
            raise SimulationError(
                f"core {core.label} leaked {core.mem_used}B of heap")
        if core.active_threads != 0 or core.queued_requests:
            raise SimulationError(f"core {core.label} has live threads after run")
        if core.thread_grants != core.thread_releases:
            raise SimulationError(
                f"core {core.label} granted {core.thread_grants} slots "
                f"but released {core.thread_releases}")


def run_distribute(d: int, constants: CostConstants = DEFAULT_CONSTANTS,
                   chip_dims: Optional[Sequence[int]] = None,
                   on_chip_factor: float = 0.8,
                   trace: bool = False,
                   force_local: bool = False) -> ProgramResult:
    """Populate all 2**d cores from node 0 and report arrivals."""
    topo = make_topology(d, chip_dims, on_chip_factor)
    registry = standard_registry()
    machine = build_machine(topo, registry, constants)
    sim, run = new_simulator(machine, registry, trace)
    run.force_local = force_local
    ctx = RunContext(sim, 0, run)
    sim.boot_thread(0, ctx.call("distribute", 0, topo.node_count))
    total = sim.run()
    _finish_run(sim, run)
    visits = sorted(run.visits)
    if [v for v, _ in visits] != list(topo.nodes()):
        raise SimulationError("distribute did not visit every node exactly once")
    return ProgramResult(
        program="distribute", d=d, p=topo.node_count, n_words=0,
        total_ns=total, visits=run.visits, spawns=run.spawns,
        merges=run.merges, seq_lumps=run.seq_lumps, trace=sim.trace,
        events=sim.dispatched_events)


def run_msort(p: int, data: Sequence[int],
              threshold: int | str = THRESHOLD_AUTO,
              seq_cost_mode: str = SEQ_COST_CLOSED,
              constants: CostConstants = DEFAULT_CONSTANTS,
              chip_dims: Optional[Sequence[int]] = None,
              on_chip_factor: float = 0.8,
              trace: bool = False,
              force_local: bool = False) -> ProgramResult:
    """Sort ``data`` over p cores with the given distribution threshold."""
    check_pow2(p)
    if seq_cost_mode not in SEQ_COST_MODES:
        raise ValueError(f"unknown sequential cost mode {seq_cost_mode!r}")
    n = len(data)
    if n < 1:
        raise ValueError("nothing to sort")
    if threshold == THRESHOLD_AUTO and n < p:
        raise ValueError(f"need at least one word per core: n={n} < p={p}")
    d = ilog2(p)
    topo = make_topology(d, chip_dims, on_chip_factor)
    registry = standard_registry()
    machine = build_machine(topo, registry, constants)
    sim, run = new_simulator(machine, registry, trace)
    run.force_local = force_local
    run.seq_cost_mode = seq_cost_mode
    if threshold == THRESHOLD_AUTO:
        run.threshold_num, run.threshold_den = n, p
    else:
        if not isinstance(threshold, int) or threshold < 1:
            raise ValueError(f"threshold must be 'auto' or a positive int, "
                             f"got {threshold!r}")
        run.threshold_num, run.threshold_den = threshold, 1
    arr = Array(data)
    ctx = RunContext(sim, 0, run)
    sim.boot_thread(0, ctx.call("par-msort", 0, p, arr))
    total = sim.run()
    _finish_run(sim, run)
    return ProgramResult(
        program="msort", d=d, p=p, n_words=n, total_ns=total,
        visits=run.visits, spawns=run.spawns, merges=run.merges,
        seq_lumps=run.seq_lumps, trace=sim.trace,
        input_data=list(data), output_data=arr.tolist(),
        threshold=threshold, seq_cost_mode=seq_cost_mode,
        events=sim.dispatched_events)


def run_seq_sort(data: Sequence[int],
                 seq_cost_mode: str = SEQ_COST_CLOSED,
                 constants: CostConstants = DEFAULT_CONSTANTS) -> tuple[list[int], int]:
    """Sequential sort on a single core; returns (sorted, elapsed ns)."""
    topo = Hypercube(0)
    registry = standard_registry()
    machine = build_machine(topo, registry, constants)
    sim, run = new_simulator(machine, registry)
    run.seq_cost_mode = seq_cost_mode
    arr = Array(data)
    ctx = RunContext(sim, 0, run)
    sim.boot_thread(0, ctx.call("seq-msort", arr))
    total = sim.run()
    _finish_run(sim, run)
    return arr.tolist(), total


def run_merge(left: Sequence[int], right: Sequence[int],
              constants: CostConstants = DEFAULT_CONSTANTS) -> tuple[list[int], int]:
    """One simulated merge; returns (merged, elapsed ns)."""
    topo = Hypercube(0)
    registry = standard_registry()
    machine = build_machine(topo, registry, constants)
    sim, run = new_simulator(machine, registry)
    out = Array([0] * (len(left) + len(right)))
    ctx = RunContext(sim, 0, run)
    sim.boot_thread(0, ctx.call("merge", out, Array(left), Array(right)))
    total = sim.run()
    return out.tolist(), total
