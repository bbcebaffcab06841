"""Guest/host process-creation protocol.

A remote spawn walks four phases over one channel:

1. init       guest sends a control token and its identity, then waits
              for the acknowledgment that a host thread was allocated
              (FIFO-queued when all eight are busy)
2. closure    the encoded closure streams to the host, which heap-
              allocates it and installs the images in its jump table
3. execute    the host thread runs the procedure; the guest blocks
4. results    updated singles and arrays stream back, the guest writes
              them to their original homes, the host frees the heap
              space and yields its thread

Costs: the whole exchange is charged as a fixed handshake plus the
per-word cost of every word moved (closure down, results up), all
scaled by the path latency factor.  The handshake covers the control
tokens, acknowledgment and completion signalling, so it is front-
loaded onto the closure transfer; a result-free spawn completes the
instant the remote procedure halts.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Generator, Sequence

from .closure import Closure, decode, encode, heap_bytes, payload_sizes
from .engine import ChanRecv, ChanSend, Channel, Connect, CoreMemoryError, Simulator

# Wire tokens (values fixed for trace stability).
TOKEN_REQUEST = 0x01
TOKEN_ACK = 0x02
TOKEN_COMPLETED = 0x03
TOKEN_CLOSE = 0x04

PHASE_INIT = "init"
PHASE_CLOSURE = "closure"
PHASE_EXECUTE = "execute"
PHASE_RESULTS = "results"

_OK = "ok"
_FAILED = "failed"


class SpawnError(Exception):
    """A remote spawn failed; surfaced on the guest thread."""


@dataclass
class SpawnRecord:
    """One completed remote spawn, for placement and cost analysis."""

    guest: int
    host: int
    proc_index: int
    proc_name: str
    arg_words: int        # n: argument section incl. array contents
    proc_words: int       # m: procedure descriptions
    result_words: int     # o: words written back
    wire_words: int       # full encoded closure length (n + m + 2)
    multiplier: float
    start_ns: int
    end_ns: int

    @property
    def elapsed_ns(self) -> int:
        return self.end_ns - self.start_ns


def spawn_charge_ns(sim: Simulator, wire_words: int, result_words: int,
                    multiplier: float = 1.0) -> int:
    """The protocol's total charge for a spawn, excluding execution and
    queueing: (handshake + word cost * (wire + results)) * multiplier.
    """
    word = sim.machine.constants.word_send_ns
    from .engine import quantize_ns
    down = quantize_ns((sim.machine.handshake_ns + word * wire_words) * multiplier)
    up = quantize_ns((word * result_words) * multiplier)
    return down + up


def remote_spawn(sim: Simulator, guest_core: int, target: int,
                 closure: Closure, proc_name: str,
                 execute: Callable[[Sequence], tuple[Generator, Callable[[], list[list[int]]]]],
                 writeback: Callable[[list[list[int]]], None],
                 record_sink: list[SpawnRecord]) -> Generator:
    """Guest side of the protocol (a generator to run on a guest thread).

    ``execute`` is invoked host-side with the decoded arguments and
    returns the procedure's behaviour generator plus a collector that,
    after the behaviour halts, yields the result words per argument
    (empty for constants).  ``writeback`` receives those lists in
    argument order on the guest.
    """
    if target == guest_core:
        raise ValueError("remote_spawn of a local target; call locally instead")
    n, m, o = payload_sizes(closure)
    words = encode(closure)
    start = sim.now
    sim.phase(guest_core, target, PHASE_INIT)

    channel = yield Connect(target, lambda ch: _host_side(sim, ch, execute))
    sim.phase(guest_core, target, PHASE_CLOSURE)
    yield ChanSend(channel, (TOKEN_REQUEST, words), words=len(words),
                   extra_ns=sim.machine.handshake_ns)

    status, results = yield ChanRecv(channel)
    if status is not _OK:
        channel.close()
        raise SpawnError(f"spawn of {proc_name!r} on core {target} failed: {results}")
    writeback(results)
    channel.close()
    record_sink.append(SpawnRecord(
        guest=guest_core, host=target,
        proc_index=closure.procs[0].index, proc_name=proc_name,
        arg_words=n, proc_words=m, result_words=o, wire_words=len(words),
        multiplier=channel.multiplier, start_ns=start, end_ns=sim.now))


def _host_side(sim: Simulator, channel: Channel,
               execute: Callable[[Sequence], tuple[Generator, Callable[[], list[list[int]]]]]
               ) -> Generator:
    """Host side: receive, install, run, reply, tear down."""
    core = sim.machine.core(channel.host_core)
    _token, words = yield ChanRecv(channel)
    closure = decode(words)
    try:
        heap = core.alloc(heap_bytes(closure))
    except CoreMemoryError as oom:
        yield ChanSend(channel, (_FAILED, str(oom)), words=0)
        return
    try:
        for image in closure.procs:
            core.install(image)
        sim.phase(channel.guest_core, core.label, PHASE_EXECUTE)
        behaviour, collect = execute(closure.args)
        yield from behaviour
        sim.phase(channel.guest_core, core.label, PHASE_RESULTS)
        results = collect()
        o = sum(len(r) for r in results)
        yield ChanSend(channel, (_OK, results), words=o)
    finally:
        heap.free()
