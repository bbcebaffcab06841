"""Process closure model and its word-level wire codec.

A closure bundles everything a remote core needs to run a procedure:
the argument values, and the images of the procedure plus its callees,
keyed by globally consistent jump-table indices.

Wire layout (32-bit words)::

    [ |args|, |procs| ]
    per argument:  [tag, value]                    single / const
                   [tag, length, data...]          array
    per procedure: [index, length_bytes, payload words...]

Array payloads are padded to whole words.  The layout is normative: the
golden fixtures under tests/fixtures freeze the two worked examples.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

WORD_BYTES = 4
WORD_MASK = 0xFFFFFFFF

TAG_SINGLE = 0
TAG_CONST = 1
TAG_ARRAY = 2
_VALID_TAGS = (TAG_SINGLE, TAG_CONST, TAG_ARRAY)


class ArgKind(IntEnum):
    SINGLE = TAG_SINGLE
    CONST = TAG_CONST
    ARRAY = TAG_ARRAY


class InvalidClosureError(ValueError):
    """The closure violates its own invariants (e.g. no procedures)."""


class MalformedClosureError(ValueError):
    """A word sequence does not parse as a closure."""


def _check_word(w) -> int:
    if not isinstance(w, int) or isinstance(w, bool) or not 0 <= w <= WORD_MASK:
        raise InvalidClosureError(f"value {w!r} is not a 32-bit word")
    return w


@dataclass(frozen=True)
class Argument:
    """One argument slot.

    Singles and arrays are written back after remote execution; consts
    never are.  ``values`` holds one word for scalars, the array
    contents otherwise.
    """

    kind: ArgKind
    values: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(self.values))
        for w in self.values:
            _check_word(w)
        if self.kind is not ArgKind.ARRAY and len(self.values) != 1:
            raise InvalidClosureError(f"{self.kind.name} argument needs exactly one word")

    @classmethod
    def single(cls, value: int) -> "Argument":
        return cls(ArgKind.SINGLE, (value,))

    @classmethod
    def const(cls, value: int) -> "Argument":
        return cls(ArgKind.CONST, (value,))

    @classmethod
    def array(cls, values) -> "Argument":
        return cls(ArgKind.ARRAY, tuple(values))

    @property
    def wire_words(self) -> int:
        if self.kind is ArgKind.ARRAY:
            return 2 + len(self.values)
        return 2

    @property
    def result_words(self) -> int:
        if self.kind is ArgKind.CONST:
            return 0
        return len(self.values)


@dataclass(frozen=True)
class ProcedureImage:
    """An instruction blob to be installed in a remote jump table."""

    index: int
    payload: bytes

    def __post_init__(self):
        if self.index < 0:
            raise InvalidClosureError(f"negative procedure index {self.index}")
        if len(self.payload) < WORD_BYTES:
            raise InvalidClosureError("procedure image shorter than one instruction word")

    @property
    def length_bytes(self) -> int:
        return len(self.payload)

    @property
    def payload_words(self) -> int:
        return (len(self.payload) + WORD_BYTES - 1) // WORD_BYTES

    @property
    def wire_words(self) -> int:
        return 2 + self.payload_words


@dataclass(frozen=True)
class Closure:
    args: tuple[Argument, ...]
    procs: tuple[ProcedureImage, ...]

    def __post_init__(self):
        object.__setattr__(self, "args", tuple(self.args))
        object.__setattr__(self, "procs", tuple(self.procs))
        if not self.procs:
            raise InvalidClosureError("a closure carries at least one procedure")


def payload_sizes(c: Closure) -> tuple[int, int, int]:
    """Word counts (args n, procedure descriptions m, results o).

    Headers count toward the section they describe, so the encoded
    length is exactly n + m + 2.  Results cover singles and array
    contents only, hence o <= n.
    """
    n = sum(a.wire_words for a in c.args)
    m = sum(p.wire_words for p in c.procs)
    o = sum(a.result_words for a in c.args)
    return n, m, o


def _payload_to_words(payload: bytes) -> list[int]:
    padded = payload + b"\x00" * (-len(payload) % WORD_BYTES)
    return [int.from_bytes(padded[i:i + WORD_BYTES], "little") for i in range(0, len(padded), WORD_BYTES)]


def _words_to_payload(words, length_bytes: int) -> bytes:
    raw = b"".join(w.to_bytes(WORD_BYTES, "little") for w in words)
    if any(b != 0 for b in raw[length_bytes:]):
        raise MalformedClosureError("nonzero padding after procedure payload")
    return raw[:length_bytes]


def encode(c: Closure) -> list[int]:
    """Serialise a closure into its wire word sequence."""
    out = [len(c.args), len(c.procs)]
    for a in c.args:
        out.append(int(a.kind))
        if a.kind is ArgKind.ARRAY:
            out.append(len(a.values))
        out.extend(a.values)
    for p in c.procs:
        out.append(p.index)
        out.append(p.length_bytes)
        out.extend(_payload_to_words(p.payload))
    return out


class _Reader:
    def __init__(self, words):
        self.words = list(words)
        self.pos = 0

    def take(self, what: str) -> int:
        if self.pos >= len(self.words):
            raise MalformedClosureError(f"truncated closure: expected {what}")
        w = self.words[self.pos]
        self.pos += 1
        if not isinstance(w, int) or isinstance(w, bool) or not 0 <= w <= WORD_MASK:
            raise MalformedClosureError(f"{what} {w!r} is not a 32-bit word")
        return w

    def take_many(self, count: int, what: str) -> list[int]:
        return [self.take(what) for _ in range(count)]


def decode(words) -> Closure:
    """Parse a wire word sequence back into a closure.

    Rejects truncated input, unknown argument tags, an empty procedure
    set and trailing words, so encode/decode round-trips both ways.
    """
    r = _Reader(words)
    n_args = r.take("argument count")
    n_procs = r.take("procedure count")
    if n_procs == 0:
        raise MalformedClosureError("closure without procedures")

    args = []
    for _ in range(n_args):
        tag = r.take("argument tag")
        if tag not in _VALID_TAGS:
            raise MalformedClosureError(f"unknown argument tag {tag}")
        if tag == TAG_ARRAY:
            length = r.take("array length")
            args.append(Argument.array(r.take_many(length, "array word")))
        else:
            args.append(Argument(ArgKind(tag), (r.take("argument value"),)))

    procs = []
    for _ in range(n_procs):
        index = r.take("procedure index")
        length_bytes = r.take("procedure length")
        if length_bytes < WORD_BYTES:
            raise MalformedClosureError(f"procedure image of {length_bytes} bytes")
        n_words = (length_bytes + WORD_BYTES - 1) // WORD_BYTES
        payload = _words_to_payload(r.take_many(n_words, "payload word"), length_bytes)
        procs.append(ProcedureImage(index, payload))

    if r.pos != len(r.words):
        raise MalformedClosureError(f"{len(r.words) - r.pos} trailing words after closure")
    return Closure(tuple(args), tuple(procs))


def heap_bytes(c: Closure) -> int:
    """Host heap space a closure occupies: argument values plus images,
    word-aligned.  Tags and headers live in the receive path, not the heap.
    """
    total = 0
    for a in c.args:
        total += WORD_BYTES * len(a.values)
    for p in c.procs:
        total += WORD_BYTES * p.payload_words
    return total


def dump_hex(words) -> str:
    """Hex-dump fixture format: one 8-digit word per line."""
    return "".join(f"{w:08x}\n" for w in words)


def load_hex(text: str) -> list[int]:
    return [int(line, 16) for line in text.split() if line]
