"""Programming surface for simulated processes.

Processes are generator functions ``behaviour(ctx, *args)`` registered
under globally consistent jump-table indices.  The context exposes

* ``par``    synchronous fork-join over blocks on the local core
* ``on``     synchronous execution on another core via the spawn
             protocol (a plain local call when the target is itself)
* ``alias``  sub-array views with write-through to the parent
* ``charge`` advance the virtual clock by an analytic cost

Only node 0 starts with the whole jump table populated; other cores
learn procedures from the closures they receive, so a spawn of an
untransmitted procedure fails loudly.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Generator, Iterable, Optional, Sequence

from . import protocol
from .closure import ArgKind, Argument, Closure, ProcedureImage
from .costmodel import CostConstants, DEFAULT_CONSTANTS
from .engine import Delay, Fork, Machine, Simulator, Trace
from .protocol import SpawnError, SpawnRecord
from .topology import Hypercube


class Array:
    """A guest array of 32-bit words."""

    __slots__ = ("words",)

    def __init__(self, values: Iterable[int]):
        self.words = list(values)

    def __len__(self):
        return len(self.words)

    def __getitem__(self, i):
        return self.words[i]

    def __setitem__(self, i, v):
        self.words[i] = v

    def tolist(self) -> list[int]:
        return list(self.words)


class ArraySlice:
    """View over a contiguous range of an Array (or another slice);
    writes land in the backing store.
    """

    __slots__ = ("base", "start", "length")

    def __init__(self, base, start: int, length: int):
        if start < 0 or length < 0 or start + length > len(base):
            raise IndexError(
                f"slice [{start}:{start + length}] outside array of {len(base)}")
        # collapse nested views so offsets always compose onto an Array
        if isinstance(base, ArraySlice):
            start += base.start
            base = base.base
        self.base = base
        self.start = start
        self.length = length

    def __len__(self):
        return self.length

    def _index(self, i: int) -> int:
        if not 0 <= i < self.length:
            raise IndexError(f"index {i} outside slice of {self.length}")
        return self.start + i

    def __getitem__(self, i):
        return self.base[self._index(i)]

    def __setitem__(self, i, v):
        self.base[self._index(i)] = v

    def tolist(self) -> list[int]:
        return [self.base[self.start + k] for k in range(self.length)]


def alias(arr, start: int, stop: int) -> ArraySlice:
    """A view of ``arr[start:stop]`` that writes through."""
    return ArraySlice(arr, start, stop - start)


class Var:
    """A single mutable word with write-back semantics."""

    __slots__ = ("value",)

    def __init__(self, value: int):
        self.value = value


@dataclass(frozen=True)
class ProcedureSpec:
    index: int
    name: str
    behaviour: Callable[..., Generator]
    image_bytes: int
    callees: tuple[str, ...] = ()

    def image(self) -> ProcedureImage:
        payload = bytes((self.index * 31 + k) & 0xFF for k in range(self.image_bytes))
        return ProcedureImage(self.index, payload)


class ProcedureRegistry:
    """Index-consistent procedure table shared by all cores."""

    def __init__(self):
        self._by_name: dict[str, ProcedureSpec] = {}
        self._by_index: list[ProcedureSpec] = []

    def register(self, name: str, behaviour: Callable[..., Generator],
                 image_bytes: int, callees: Sequence[str] = ()) -> ProcedureSpec:
        if name in self._by_name:
            raise ValueError(f"procedure {name!r} already registered")
        if image_bytes < 4:
            raise ValueError("image must hold at least one instruction word")
        spec = ProcedureSpec(len(self._by_index), name, behaviour,
                             image_bytes, tuple(callees))
        self._by_name[name] = spec
        self._by_index.append(spec)
        return spec

    def __len__(self):
        return len(self._by_index)

    def __contains__(self, name: str):
        return name in self._by_name

    def by_name(self, name: str) -> ProcedureSpec:
        try:
            return self._by_name[name]
        except KeyError:
            raise KeyError(f"unknown procedure {name!r}") from None

    def by_index(self, index: int) -> ProcedureSpec:
        return self._by_index[index]

    def closure_specs(self, name: str) -> list[ProcedureSpec]:
        """The spawned procedure plus its transitive static callees,
        spawned procedure first, then by ascending index.
        """
        root = self.by_name(name)
        seen = {root.name}
        frontier = [root]
        while frontier:
            spec = frontier.pop()
            for callee in spec.callees:
                if callee not in seen:
                    seen.add(callee)
                    frontier.append(self.by_name(callee))
        rest = sorted((self._by_name[n] for n in seen if n != root.name),
                      key=lambda s: s.index)
        return [root] + rest

    def all_images(self) -> list[ProcedureImage]:
        return [spec.image() for spec in self._by_index]


@dataclass
class Run:
    """Mutable per-run state shared by every context of one simulation."""

    registry: ProcedureRegistry
    spawns: list[SpawnRecord] = field(default_factory=list)
    visits: list[tuple[int, int]] = field(default_factory=list)  # (node, arrival_ns)
    merges: int = 0
    seq_lumps: int = 0
    force_local: bool = False
    seq_cost_mode: str = "closed"
    threshold_num: int = 0   # fork while size * den > num
    threshold_den: int = 1


class RunContext:
    """Binds a behaviour to the core it executes on."""

    __slots__ = ("sim", "core_label", "run")

    def __init__(self, sim: Simulator, core_label: int, run: Run):
        self.sim = sim
        self.core_label = core_label
        self.run = run

    @property
    def now(self) -> int:
        return self.sim.now

    @property
    def constants(self) -> CostConstants:
        return self.sim.machine.constants

    def charge(self, ns) -> Generator:
        yield Delay(ns)

    def note(self, kind: str) -> None:
        self.sim.note(self.core_label, 0, kind)

    # -- composition -------------------------------------------------------

    def par(self, *blocks: Callable[[], Generator]) -> Generator:
        """Fork-join: blocks start together, the construct finishes one
        level overhead after the last block halts.  A single block runs
        plainly in sequence.
        """
        if not blocks:
            return
        if len(blocks) == 1:
            yield from blocks[0]()
            return
        yield Fork(tuple(blocks))
        overhead = self.constants.level_overhead_ns
        if overhead:
            yield Delay(overhead)

    # -- remote execution ----------------------------------------------------

    def on(self, target: int, proc_name: str, *args) -> Generator:
        """Run a registered procedure on ``target`` and write results
        back, blocking until it completes.  Targeting the executing core
        is a plain local call with no protocol cost.
        """
        self.sim.machine.topo.check_label(target)
        spec = self.run.registry.by_name(proc_name)
        if target == self.core_label or self.run.force_local:
            yield from self.call(proc_name, *args)
            return

        closure, writeback = self._marshal(spec, args)
        run = self.run

        def execute(decoded_args):
            host_ctx = RunContext(self.sim, target, run)
            live, collect = _materialize(decoded_args)
            behaviour = host_ctx.call(proc_name, *live)
            return behaviour, collect

        yield from protocol.remote_spawn(
            self.sim, self.core_label, target, closure, proc_name,
            execute, writeback, run.spawns)

    def call(self, proc_name: str, *args) -> Generator:
        """Local procedure call through the core's jump table."""
        spec = self.run.registry.by_name(proc_name)
        core = self.sim.machine.core(self.core_label)
        if core.jump_table[spec.index] is None:
            raise SpawnError(
                f"core {self.core_label} has no image for {proc_name!r}; "
                "the procedure was never transmitted here")
        yield from spec.behaviour(self, *args)

    def _marshal(self, spec: ProcedureSpec, args) -> tuple[Closure, Callable]:
        """Build the closure for a spawn: argument snapshot plus the
        images of the procedure and its callees, read from this core's
        jump table.
        """
        core = self.sim.machine.core(self.core_label)
        wire_args = []
        homes = []
        for a in args:
            if isinstance(a, (Array, ArraySlice)):
                wire_args.append(Argument.array(a.tolist()))
                homes.append(a)
            elif isinstance(a, Var):
                wire_args.append(Argument.single(a.value))
                homes.append(a)
            elif isinstance(a, int):
                wire_args.append(Argument.const(a))
                homes.append(None)
            else:
                raise TypeError(f"cannot marshal argument {a!r}")

        images = []
        for s in self.run.registry.closure_specs(spec.name):
            image = core.jump_table[s.index]
            if image is None:
                raise SpawnError(
                    f"core {self.core_label} cannot spawn {spec.name!r}: "
                    f"no local image for callee {s.name!r}")
            images.append(image)
        closure = Closure(tuple(wire_args), tuple(images))

        def writeback(results: list[list[int]]) -> None:
            for home, words in zip(homes, results):
                if home is None:
                    continue
                if isinstance(home, Var):
                    home.value = words[0]
                else:
                    for k, w in enumerate(words):
                        home[k] = w

        return closure, writeback

    # -- sorting helpers -----------------------------------------------------

    def should_fork(self, size: int) -> bool:
        """True while a sub-array is above the distribution threshold."""
        return size * self.run.threshold_den > self.run.threshold_num


def _materialize(decoded_args) -> tuple[list, Callable[[], list[list[int]]]]:
    """Host-side argument containers for decoded wire arguments, plus a
    collector returning post-execution result words per argument.
    """
    live = []
    for arg in decoded_args:
        if arg.kind is ArgKind.ARRAY:
            live.append(Array(arg.values))
        elif arg.kind is ArgKind.SINGLE:
            live.append(Var(arg.values[0]))
        else:
            live.append(arg.values[0])

    def collect() -> list[list[int]]:
        out = []
        for arg, obj in zip(decoded_args, live):
            if arg.kind is ArgKind.ARRAY:
                out.append(obj.tolist())
            elif arg.kind is ArgKind.SINGLE:
                out.append([obj.value])
            else:
                out.append([])
        return out

    return live, collect


def build_machine(topo: Hypercube, registry: ProcedureRegistry,
                  constants: CostConstants = DEFAULT_CONSTANTS,
                  handshake_ns: Optional[int] = None,
                  **machine_kwargs) -> Machine:
    """Assemble a machine with node 0 preloaded with every procedure.

    When ``handshake_ns`` is not given it is calibrated so that the
    distribution program's bare spawn costs exactly ``bare_spawn_ns``.
    """
    if handshake_ns is None:
        handshake_ns = calibrated_handshake_ns(registry, constants)
    return Machine(topo, constants, table_size=len(registry),
                   preload=registry.all_images(), handshake_ns=handshake_ns,
                   **machine_kwargs)


def calibrated_handshake_ns(registry: ProcedureRegistry, constants: CostConstants,
                            root: str = "distribute") -> int:
    """Fixed protocol overhead implied by the bare-spawn constant: what
    is left of it after paying per-word cost for the root program's
    closure (two const arguments, no results).
    """
    if root not in registry:
        raise ValueError(f"registry lacks the calibration root {root!r}")
    wire = 2 + 2 * 2  # header plus two const args
    for s in registry.closure_specs(root):
        wire += s.image().wire_words
    handshake = constants.bare_spawn_ns - constants.word_send_ns * wire
    if handshake < 0:
        raise ValueError(
            f"bare_spawn_ns {constants.bare_spawn_ns} cannot cover "
            f"{wire} closure words at {constants.word_send_ns}ns/word")
    return handshake


def new_simulator(machine: Machine, registry: ProcedureRegistry,
                  trace: bool | Trace = False) -> tuple[Simulator, Run]:
    tr = trace if isinstance(trace, Trace) else (Trace() if trace else None)
    sim = Simulator(machine, trace=tr)
    return sim, Run(registry=registry)
