"""Deterministic discrete-event core.

Simulated threads are Python generators that yield commands (Delay,
Fork, Connect, ChanSend, ChanRecv) back to the simulator.  One event is
dispatched at a time; equal-time events dispatch in scheduling order,
so a run is a pure function of its configuration.

The clock is integer nanoseconds quantised to 10ns ticks, the timer
resolution of the modelled hardware.  Every core owns a private memory
and at most eight thread slots; exhausted slots queue FIFO.
"""
from __future__ import annotations

import hashlib
import heapq
import itertools
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Generator, Iterable, Optional, Sequence

from .closure import ProcedureImage
from .costmodel import CostConstants, DEFAULT_CONSTANTS
from .topology import Hypercube

TICK_NS = 10
CORE_MEM_BYTES = 65536
THREADS_PER_CORE = 8


class SimulationError(Exception):
    pass


class SchedulingError(SimulationError):
    """Internal bug trap: an event was scheduled in the past."""


class DeadlockError(SimulationError):
    """No events remain but threads are still blocked or queued."""


class CoreMemoryError(SimulationError):
    """A heap allocation exceeded the core's private memory."""


class ChannelError(SimulationError):
    """Misuse of a point-to-point channel (e.g. send after close)."""


def quantize_ns(value) -> int:
    """Round a duration to the 10ns timer grid (never negative)."""
    if isinstance(value, int):
        q, r = divmod(value, TICK_NS)
        if r == 0:
            return value
        return (q + (1 if r * 2 >= TICK_NS else 0)) * TICK_NS
    ticks = round(value / TICK_NS)
    if ticks < 0:
        raise ValueError(f"negative duration {value}")
    return int(ticks) * TICK_NS


class Trace:
    """Collects the run's event and protocol-phase lines in dispatch order."""

    def __init__(self):
        self.lines: list[str] = []

    def event(self, ns: int, core: int, thread: int, kind: str) -> None:
        self.lines.append(f"{ns},{core},{thread},{kind}")

    def phase(self, ns: int, guest: int, host: int, phase: str) -> None:
        self.lines.append(f"{ns},{guest},{host},{phase}")

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines:
            h.update(line.encode("ascii"))
            h.update(b"\n")
        return h.hexdigest()

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)


class MemHandle:
    __slots__ = ("core", "nbytes", "freed")

    def __init__(self, core: "Core", nbytes: int):
        self.core = core
        self.nbytes = nbytes
        self.freed = False

    def free(self) -> None:
        if not self.freed:
            self.freed = True
            self.core.mem_used -= self.nbytes


class Core:
    """One simulated processor: private memory, eight thread slots and a
    fixed-size jump table mapping procedure indices to local images.
    """

    def __init__(self, label: int, table_size: int,
                 mem_capacity: int = CORE_MEM_BYTES,
                 max_threads: int = THREADS_PER_CORE):
        self.label = label
        self.mem_capacity = mem_capacity
        self.max_threads = max_threads
        self.mem_used = 0
        self.jump_table: list[Optional[ProcedureImage]] = [None] * table_size
        self.active_threads = 0
        self.peak_threads = 0
        self.thread_grants = 0
        self.thread_releases = 0
        self._slot_queue: deque = deque()
        self._next_serial = 0

    def new_serial(self) -> int:
        self._next_serial += 1
        return self._next_serial

    def alloc(self, nbytes: int) -> MemHandle:
        if nbytes < 0:
            raise ValueError("allocation size must be non-negative")
        if self.mem_used + nbytes > self.mem_capacity:
            raise CoreMemoryError(
                f"core {self.label}: {nbytes}B requested, "
                f"{self.mem_capacity - self.mem_used}B free")
        self.mem_used += nbytes
        return MemHandle(self, nbytes)

    def install(self, image: ProcedureImage) -> None:
        if not 0 <= image.index < len(self.jump_table):
            raise SimulationError(f"procedure index {image.index} outside jump table")
        self.jump_table[image.index] = image

    def request_slot(self, grant: Callable[[], None]) -> bool:
        """Claim a thread slot now, or queue ``grant`` FIFO for later.

        Returns True when granted immediately.
        """
        if self.active_threads < self.max_threads:
            self.active_threads += 1
            self.peak_threads = max(self.peak_threads, self.active_threads)
            self.thread_grants += 1
            return True
        self._slot_queue.append(grant)
        return False

    def release_slot(self, sim: "Simulator") -> None:
        self.thread_releases += 1
        if self._slot_queue:
            handoff = self._slot_queue.popleft()
            self.thread_grants += 1
            sim.schedule(sim.now, handoff)
        else:
            self.active_threads -= 1

    @property
    def queued_requests(self) -> int:
        return len(self._slot_queue)


# Commands a thread generator may yield.

@dataclass(frozen=True)
class Delay:
    ns: int | float


@dataclass(frozen=True)
class Fork:
    factories: tuple


@dataclass(frozen=True)
class Connect:
    """Open a channel to ``target`` and start ``accept(channel)`` there
    as a new hosted thread (FIFO-queued if its slots are busy).  The
    connecting thread resumes with the channel once the host thread is
    allocated.
    """
    target: int
    accept: Callable[["Channel"], Generator]


@dataclass(frozen=True)
class ChanSend:
    channel: "Channel"
    payload: object
    words: int
    extra_ns: int = 0


@dataclass(frozen=True)
class ChanRecv:
    channel: "Channel"


class Channel:
    """Synchronous point-to-point link: a word transfer completes for
    sender and receiver together, ``extra + words * word_cost`` scaled
    by the path latency factor.
    """

    def __init__(self, guest_core: int, host_core: int, multiplier: float):
        self.guest_core = guest_core
        self.host_core = host_core
        self.multiplier = multiplier
        self.open = True
        self.guest_thread: Optional[int] = None
        self.host_thread: Optional[int] = None
        self._waiting_send = None   # (thread, payload, words, extra_ns)
        self._waiting_recv = None   # thread

    def close(self) -> None:
        self.open = False

    @property
    def endpoints(self):
        return ((self.guest_core, self.guest_thread), (self.host_core, self.host_thread))


class _ForkState:
    __slots__ = ("parent", "remaining")

    def __init__(self, parent: "_Thread", count: int):
        self.parent = parent
        self.remaining = count


class _Thread:
    __slots__ = ("core", "serial", "gen", "owns_slot", "fork", "done",
                 "blocked_on", "on_finish", "name")

    def __init__(self, core: Core, gen: Generator, owns_slot: bool,
                 fork: Optional[_ForkState] = None, name: str = ""):
        self.core = core
        self.serial = core.new_serial()
        self.gen = gen
        self.owns_slot = owns_slot
        self.fork = fork
        self.done = False
        self.blocked_on = "new"
        self.on_finish: Optional[Callable[[], None]] = None
        self.name = name or f"t{self.serial}"

    def __repr__(self):
        return f"<thread {self.core.label}.{self.serial} {self.name} {self.blocked_on}>"


class Machine:
    """The simulated hardware: hypercube of cores plus the calibrated
    cost constants and the fixed protocol handshake overhead.
    """

    def __init__(self, topo: Hypercube, constants: CostConstants = DEFAULT_CONSTANTS,
                 table_size: int = 0,
                 preload: Sequence[ProcedureImage] = (),
                 handshake_ns: int = 12700,
                 mem_capacity: int = CORE_MEM_BYTES,
                 max_threads: int = THREADS_PER_CORE):
        if handshake_ns < 0:
            raise ValueError("handshake_ns must be non-negative")
        self.topo = topo
        self.constants = constants
        self.handshake_ns = handshake_ns
        self.cores = [Core(label, table_size, mem_capacity, max_threads)
                      for label in topo.nodes()]
        for image in preload:
            self.cores[0].install(image)

    def core(self, label: int) -> Core:
        self.topo.check_label(label)
        return self.cores[label]


class Simulator:
    """Single-threaded event loop over one machine."""

    def __init__(self, machine: Machine, trace: Optional[Trace] = None):
        self.machine = machine
        self.trace = trace
        self.now = 0
        self._heap: list = []
        self._seq = itertools.count()
        self._live: set[_Thread] = set()
        self.dispatched_events = 0

    # -- scheduling --------------------------------------------------------

    def schedule(self, at_ns: int, fn: Callable[[], None]) -> None:
        if at_ns < self.now:
            raise SchedulingError(f"event at {at_ns} scheduled at time {self.now}")
        heapq.heappush(self._heap, (at_ns, next(self._seq), fn))

    def run(self) -> int:
        """Dispatch until no events remain; returns the final clock."""
        while self._heap:
            at, _, fn = heapq.heappop(self._heap)
            if at < self.now:
                raise SchedulingError("event queue went backwards")
            self.now = at
            self.dispatched_events += 1
            fn()
        if self._live:
            stuck = ", ".join(repr(t) for t in sorted(
                self._live, key=lambda t: (t.core.label, t.serial)))
            raise DeadlockError(f"no events left but threads blocked: {stuck}")
        return self.now

    def _emit(self, core: int, thread: int, kind: str) -> None:
        if self.trace is not None:
            self.trace.event(self.now, core, thread, kind)

    def note(self, core: int, thread_serial: int, kind: str) -> None:
        """Expose trace emission for higher layers (merge/visit marks)."""
        self._emit(core, thread_serial, kind)

    def phase(self, guest: int, host: int, name: str) -> None:
        if self.trace is not None:
            self.trace.phase(self.now, guest, host, name)

    # -- threads -----------------------------------------------------------

    def boot_thread(self, core_label: int, gen: Generator, name: str = "main") -> _Thread:
        """Start a root thread; its slot must be free at boot time."""
        core = self.machine.core(core_label)
        thread = _Thread(core, gen, owns_slot=True, name=name)
        if not core.request_slot(lambda: None):
            raise SimulationError(f"core {core_label} has no free boot slot")
        self._live.add(thread)
        self.schedule(self.now, lambda: self._start(thread))
        return thread

    def _start(self, thread: _Thread) -> None:
        self._emit(thread.core.label, thread.serial, "start")
        self._advance(thread, None)

    def _advance(self, thread: _Thread, value, exc: Optional[Exception] = None) -> None:
        thread.blocked_on = "running"
        while True:
            try:
                if exc is not None:
                    cmd = thread.gen.throw(exc)
                    exc = None
                else:
                    cmd = thread.gen.send(value)
            except StopIteration:
                self._finish(thread)
                return
            value = None
            if isinstance(cmd, Delay):
                dur = quantize_ns(cmd.ns)
                if dur == 0:
                    continue
                thread.blocked_on = "delay"
                self.schedule(self.now + dur, lambda t=thread: self._advance(t, None))
                return
            if isinstance(cmd, Fork):
                self._do_fork(thread, cmd.factories)
                return
            if isinstance(cmd, Connect):
                self._do_connect(thread, cmd)
                return
            if isinstance(cmd, ChanSend):
                self._do_send(thread, cmd)
                return
            if isinstance(cmd, ChanRecv):
                self._do_recv(thread, cmd.channel)
                return
            raise SimulationError(f"unknown command {cmd!r} from {thread!r}")

    def _throw(self, thread: _Thread, exc: Exception) -> None:
        """Deliver an error at the thread's yield point; the thread may
        catch it and continue yielding commands.
        """
        self._advance(thread, None, exc)

    def _finish(self, thread: _Thread) -> None:
        thread.done = True
        thread.blocked_on = "done"
        self._live.discard(thread)
        self._emit(thread.core.label, thread.serial, "halt")
        if thread.owns_slot:
            thread.core.release_slot(self)
        if thread.on_finish is not None:
            thread.on_finish()
        if thread.fork is not None:
            fork = thread.fork
            fork.remaining -= 1
            if fork.remaining == 0:
                parent = fork.parent
                self.schedule(self.now, lambda: self._join(parent))

    def _join(self, parent: _Thread) -> None:
        self._emit(parent.core.label, parent.serial, "join")
        self._advance(parent, None)

    # -- fork-join ---------------------------------------------------------

    def _do_fork(self, parent: _Thread, factories: tuple) -> None:
        if not factories:
            raise SimulationError("empty fork")
        parent.blocked_on = "fork"
        self._emit(parent.core.label, parent.serial, "fork")
        state = _ForkState(parent, len(factories))
        core = parent.core
        for i, factory in enumerate(factories):
            child = _Thread(core, factory(), owns_slot=(i > 0), fork=state,
                            name=f"{parent.name}.{i}")
            self._live.add(child)
            if i == 0:
                # first block runs on the forking thread's own slot
                self.schedule(self.now, lambda t=child: self._start(t))
            else:
                def launch(t=child):
                    self._start(t)
                if core.request_slot(launch):
                    self.schedule(self.now, lambda t=child: self._start(t))

    # -- connections -------------------------------------------------------

    def _do_connect(self, guest: _Thread, cmd: Connect) -> None:
        topo = self.machine.topo
        host_core = self.machine.core(cmd.target)
        if host_core.label == guest.core.label:
            raise SimulationError("connect to self: local calls bypass the protocol")
        mult = topo.path_factor(guest.core.label, cmd.target)
        channel = Channel(guest.core.label, cmd.target, mult)
        channel.guest_thread = guest.serial
        guest.blocked_on = "connect"
        self._emit(guest.core.label, guest.serial, "connect")

        def launch_host():
            hosted = _Thread(host_core, cmd.accept(channel), owns_slot=True,
                             name=f"host<{guest.core.label}")
            channel.host_thread = hosted.serial
            self._live.add(hosted)
            self._emit(host_core.label, hosted.serial, "grant")
            self._start(hosted)
            self._advance(guest, channel)

        if host_core.request_slot(launch_host):
            self.schedule(self.now, launch_host)

    # -- channels ----------------------------------------------------------

    def _do_send(self, thread: _Thread, cmd: ChanSend) -> None:
        ch = cmd.channel
        if not ch.open:
            self._throw(thread, ChannelError("send on closed channel"))
            return
        if cmd.words < 0:
            self._throw(thread, ChannelError("negative word count"))
            return
        if ch._waiting_send is not None:
            self._throw(thread, ChannelError("channel already has a sender"))
            return
        thread.blocked_on = "send"
        ch._waiting_send = (thread, cmd.payload, cmd.words, cmd.extra_ns)
        self._try_transfer(ch)

    def _do_recv(self, thread: _Thread, channel: Channel) -> None:
        if not channel.open:
            self._throw(thread, ChannelError("receive on closed channel"))
            return
        if channel._waiting_recv is not None:
            self._throw(thread, ChannelError("channel already has a receiver"))
            return
        thread.blocked_on = "recv"
        channel._waiting_recv = thread
        self._try_transfer(channel)

    def _try_transfer(self, ch: Channel) -> None:
        if ch._waiting_send is None or ch._waiting_recv is None:
            return
        sender, payload, words, extra_ns = ch._waiting_send
        receiver = ch._waiting_recv
        ch._waiting_send = None
        ch._waiting_recv = None
        cost = (extra_ns + words * self.machine.constants.word_send_ns) * ch.multiplier
        end = self.now + quantize_ns(cost)

        def complete():
            self._emit(sender.core.label, sender.serial, "xfer")
            self._advance(sender, None)
            self._advance(receiver, payload)

        self.schedule(end, complete)

    # -- direct channel API (blocking ops for library callers) -------------

    def open_channel(self, guest_core: int, host_core: int) -> Channel:
        """A bare channel between two cores, for direct engine use."""
        mult = self.machine.topo.path_factor(guest_core, host_core)
        return Channel(guest_core, host_core, mult)

    def transfer_cost_ns(self, ch: Channel, words: int, extra_ns: int = 0) -> int:
        return quantize_ns((extra_ns + words * self.machine.constants.word_send_ns)
                           * ch.multiplier)
