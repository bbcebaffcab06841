"""Analytical cost model for remote process creation and parallel mergesort.

All times are nanoseconds.  Evaluations stay in exact integer arithmetic
whenever the operands allow it (powers of two, integer constants), so
golden values reproduce bit-for-bit across platforms.

Measured defaults: 150ns per transferred word, 18.4us per bare spawn,
60ns sequential overhead per recursion level, 28us per sorting spawn,
merge cost 90n + 830, sequential sort cost n(200 log2 n + 1200).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

Number = int | float


class PowerOfTwoError(ValueError):
    """A processor count was not a positive power of two."""


class FitError(ValueError):
    """Least-squares fit on degenerate data."""


class BracketError(ValueError):
    """Root search bracket contains no sign change."""


def is_pow2(x: int) -> bool:
    return x >= 1 and (x & (x - 1)) == 0


def check_pow2(p: int, what: str = "p") -> int:
    if not is_pow2(p):
        raise PowerOfTwoError(f"{what} must be a positive power of two, got {p}")
    return p


def ilog2(p: int) -> int:
    return p.bit_length() - 1


def _log2(n: Number) -> Number:
    """Exact for integral powers of two, float otherwise."""
    if isinstance(n, int) and is_pow2(n):
        return ilog2(n)
    return math.log2(n)


@dataclass(frozen=True)
class CostConstants:
    """Every constant of the cost model, in nanoseconds.

    ``spawn_init_ns`` is the fixed per-spawn initialisation of the
    sorting program (closure carries the sort and merge images);
    ``bare_spawn_ns`` the cheaper one of the data-free distribution
    program.  ``link_factor`` is the dimensionless path-latency factor,
    normalised to 1.0 for a single off-chip hop.
    """

    word_send_ns: int = 150        # per word transferred
    spawn_init_ns: int = 28000     # per sorting spawn, fixed part
    bare_spawn_ns: int = 18400     # per distribution spawn, total
    level_overhead_ns: int = 60    # sequential overhead per recursion level
    link_factor: float = 1.0
    merge_word_ns: int = 90        # merge cost slope
    merge_call_ns: int = 830       # merge cost intercept
    sort_word_log_ns: int = 200    # sequential sort, n log n coefficient
    sort_word_ns: int = 1200       # sequential sort, linear coefficient

    FILE_KEYS = {
        "word_send_ns": "C_w_ns",
        "spawn_init_ns": "C_i_ns",
        "bare_spawn_ns": "C_j_ns",
        "level_overhead_ns": "C_o_ns",
        "link_factor": "C_l",
        "merge_word_ns": "C_a_ns",
        "merge_call_ns": "C_b_ns",
        "sort_word_log_ns": "C_c_ns",
        "sort_word_ns": "C_d_ns",
    }

    def __post_init__(self):
        for name in self.FILE_KEYS:
            if name == "level_overhead_ns":
                if getattr(self, name) < 0:
                    raise ValueError("level_overhead_ns must be >= 0")
            elif getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    def with_updates(self, **kwargs) -> "CostConstants":
        return replace(self, **kwargs)


DEFAULT_CONSTANTS = CostConstants()

SEQ_COST_CLOSED = "closed"
SEQ_COST_RECURRENCE = "recurrence"
SEQ_COST_MODES = (SEQ_COST_CLOSED, SEQ_COST_RECURRENCE)


def _scale(value: Number, mult: float) -> Number:
    if mult == 1.0:
        return value
    scaled = value * mult
    if isinstance(value, int) and scaled == int(scaled):
        return int(scaled)
    return scaled


def spawn_time(n: int, m: int, o: int, c: CostConstants = DEFAULT_CONSTANTS,
               mult: float = 1.0) -> Number:
    """Cost of one remote spawn moving n argument words, m procedure
    words and o result words over a path with latency factor ``mult``.
    """
    if min(n, m, o) < 0:
        raise ValueError("payload sizes must be non-negative")
    return _scale(c.spawn_init_ns + c.word_send_ns * (n + m + o), mult)


def sort_spawn_time(n_words: int, c: CostConstants = DEFAULT_CONSTANTS) -> int:
    """Spawn cost of the sorting program: the array travels down and the
    sorted result travels back, so the data term is 2 * word cost * n.
    """
    return c.spawn_init_ns + 2 * c.word_send_ns * n_words


def distribute_time(p: int, c: CostConstants = DEFAULT_CONSTANTS) -> int:
    """Total time to populate p cores: one bare spawn plus one level
    overhead per recursion level.
    """
    check_pow2(p)
    return (c.bare_spawn_ns + c.level_overhead_ns) * ilog2(p)


def merge_time(n: int, c: CostConstants = DEFAULT_CONSTANTS) -> int:
    """Linear cost of merging into an n-word result."""
    if n < 0:
        raise ValueError("merge size must be non-negative")
    return c.merge_word_ns * n + c.merge_call_ns


def seq_sort_closed(n: Number, c: CostConstants = DEFAULT_CONSTANTS) -> Number:
    """Closed-form sequential sort cost n(C log2 n + D)."""
    if n < 1:
        raise ValueError("sort size must be >= 1")
    return n * (c.sort_word_log_ns * _log2(n) + c.sort_word_ns)


def seq_sort_recurrence(n: int, base: int = 0, c: CostConstants = DEFAULT_CONSTANTS) -> int:
    """Direct evaluation of T(n) = 2 T(n/2) + merge_time(n), T(1) = base.

    Independent oracle for the merge-derived sequential cost; n must be
    a power of two so the halving is exact.
    """
    check_pow2(n, "n")
    total = n * base
    size = n
    while size > 1:
        copies = n // size
        total += copies * merge_time(size, c)
        size //= 2
    return total


def seq_sort_recurrence_closed(n: Number, base: int = 0,
                               c: CostConstants = DEFAULT_CONSTANTS) -> Number:
    """Closed solution of the merge recurrence: A n log2 n + B(n-1) + n*base.

    Unlike ``seq_sort_recurrence`` this accepts any n >= 1, using a real
    logarithm off powers of two.
    """
    if n < 1:
        raise ValueError("sort size must be >= 1")
    return c.merge_word_ns * n * _log2(n) + c.merge_call_ns * (n - 1) + n * base


def seq_sort_time(n: Number, mode: str = SEQ_COST_CLOSED,
                  c: CostConstants = DEFAULT_CONSTANTS) -> Number:
    if mode == SEQ_COST_CLOSED:
        return seq_sort_closed(n, c)
    if mode == SEQ_COST_RECURRENCE:
        return seq_sort_recurrence_closed(n, 0, c)
    raise ValueError(f"unknown sequential cost mode {mode!r}")


def parallel_sort_time(n: int, p: int, c: CostConstants = DEFAULT_CONSTANTS,
                       seq_mode: str = SEQ_COST_CLOSED) -> Number:
    """Parallel mergesort cost on p cores for n words:

        (2n/p)(p-1)(word + merge slopes) + (init + merge call) log2 p
        + sequential sort of the n/p leaf
    """
    check_pow2(p)
    if n < p:
        raise ValueError(f"need n >= p, got n={n} p={p}")
    leaf = n // p if n % p == 0 else n / p
    chunk = 2 * n // p if (2 * n) % p == 0 else 2 * n / p
    return (chunk * (p - 1) * (c.word_send_ns + c.merge_word_ns)
            + (c.spawn_init_ns + c.merge_call_ns) * ilog2(p)
            + seq_sort_time(leaf, seq_mode, c))


def lower_bound_time(n: int, p: int, c: CostConstants = DEFAULT_CONSTANTS) -> Number:
    """Parallel-overhead-only lower bound: spawning plus input movement.

    At n = 0 this is the cost of initiating the bare computations alone.
    """
    check_pow2(p)
    if n < 0:
        raise ValueError("n must be non-negative")
    chunk = 2 * n // p if (2 * n) % p == 0 else 2 * n / p
    return c.spawn_init_ns * ilog2(p) + c.word_send_ns * chunk * (p - 1)


def offload_break_even(c: CostConstants = DEFAULT_CONSTANTS,
                       lo: float = 1.0, hi: float = float(1 << 20),
                       tol: float = 0.01) -> float:
    """Array size (words) where one remote spawn costs exactly as much
    as sorting locally; found by bisection to ``tol`` words.
    """
    def gap(x: float) -> float:
        return (c.spawn_init_ns + 2 * c.word_send_ns * x) - seq_sort_closed(x, c)

    a, b = float(lo), float(hi)
    fa, fb = gap(a), gap(b)
    if fa == 0:
        return a
    if fb == 0:
        return b
    if (fa > 0) == (fb > 0):
        raise BracketError(f"no sign change in [{lo}, {hi}]")
    while b - a > tol:
        mid = (a + b) / 2
        fm = gap(mid)
        if fm == 0:
            return mid
        if (fm > 0) == (fa > 0):
            a, fa = mid, fm
        else:
            b = mid
    return (a + b) / 2


def best_processor_count(n: int, c: CostConstants = DEFAULT_CONSTANTS,
                         max_p: int | None = None,
                         seq_mode: str = SEQ_COST_CLOSED) -> tuple[int, Number]:
    """Power-of-two p <= n minimising the parallel sort cost.

    Ties resolve to the smaller p.  Returns (p, cost).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    best_p, best_t = 1, parallel_sort_time(n, 1, c, seq_mode)
    p = 2
    while p <= n and (max_p is None or p <= max_p):
        t = parallel_sort_time(n, p, c, seq_mode)
        if t < best_t:
            best_p, best_t = p, t
        p <<= 1
    return best_p, best_t


def fit_linear(points: Sequence[tuple[Number, Number]],
               through_origin: bool = False) -> tuple[float, float, float]:
    """Least-squares line t = slope*x + intercept.

    Returns (slope, intercept, residual_norm); ``through_origin`` pins
    the intercept at zero.  Raises FitError when the x values cannot
    determine a line.
    """
    if len(points) < (1 if through_origin else 2):
        raise FitError("not enough points to fit")
    xs = [float(x) for x, _ in points]
    ts = [float(t) for _, t in points]
    if through_origin:
        sxx = sum(x * x for x in xs)
        if sxx == 0:
            raise FitError("all x are zero in a through-origin fit")
        slope = sum(x * t for x, t in zip(xs, ts)) / sxx
        intercept = 0.0
    else:
        k = len(xs)
        mx = sum(xs) / k
        mt = sum(ts) / k
        sxx = sum((x - mx) ** 2 for x in xs)
        if sxx == 0:
            raise FitError("x values are all identical")
        slope = sum((x - mx) * (t - mt) for x, t in zip(xs, ts)) / sxx
        intercept = mt - slope * mx
    residual = math.sqrt(sum((slope * x + intercept - t) ** 2 for x, t in zip(xs, ts)))
    return slope, intercept, residual


# ---------------------------------------------------------------------------
# Constants file: flat key=value text, e.g. ``C_w_ns=150``.

def save_constants(c: CostConstants, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(format_constants(c))


def format_constants(c: CostConstants) -> str:
    lines = []
    for field_name, key in CostConstants.FILE_KEYS.items():
        value = getattr(c, field_name)
        lines.append(f"{key}={value:g}" if isinstance(value, float) else f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_constants(text: str, base: CostConstants = DEFAULT_CONSTANTS) -> CostConstants:
    key_to_field = {key: name for name, key in CostConstants.FILE_KEYS.items()}
    updates = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"constants file line {lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in key_to_field:
            raise ValueError(f"constants file line {lineno}: unknown key {key!r}")
        field_name = key_to_field[key]
        try:
            updates[field_name] = float(value) if field_name == "link_factor" else int(value)
        except ValueError as exc:
            raise ValueError(f"constants file line {lineno}: bad value {value!r}") from exc
    return base.with_updates(**updates)


def load_constants(path, base: CostConstants = DEFAULT_CONSTANTS) -> CostConstants:
    with open(path, encoding="ascii") as fh:
        return parse_constants(fh.read(), base)


# ---------------------------------------------------------------------------
# Calibration: recover constants from (size, time) measurements.

def calibrate(merge_points: Iterable[tuple[int, int]] = (),
              distribute_points: Iterable[tuple[int, int]] = (),
              seq_sort_points: Iterable[tuple[int, int]] = (),
              base: CostConstants = DEFAULT_CONSTANTS) -> tuple[CostConstants, dict[str, float]]:
    """Fit model constants from measurements.

    merge_points:      (result words, ns) -> merge slope and intercept
    distribute_points: (p, total ns)      -> bare spawn cost; the level
                       overhead cannot be separated from it, so the
                       current ``level_overhead_ns`` is held fixed
    seq_sort_points:   (n, ns)            -> sort coefficients via t/n
                       against log2 n

    Returns the updated constants and per-fit residual norms.
    """
    updates: dict = {}
    residuals: dict[str, float] = {}

    merge_points = list(merge_points)
    if merge_points:
        slope, intercept, res = fit_linear(merge_points)
        updates["merge_word_ns"] = round(slope)
        updates["merge_call_ns"] = round(intercept)
        residuals["merge"] = res

    distribute_points = list(distribute_points)
    if distribute_points:
        pts = [(ilog2(check_pow2(p)), t) for p, t in distribute_points]
        slope, _, res = fit_linear(pts, through_origin=True)
        updates["bare_spawn_ns"] = round(slope) - base.level_overhead_ns
        residuals["distribute"] = res

    seq_sort_points = list(seq_sort_points)
    if seq_sort_points:
        pts = [(_log2(n), t / n) for n, t in seq_sort_points]
        slope, intercept, res = fit_linear(pts)
        updates["sort_word_log_ns"] = round(slope)
        updates["sort_word_ns"] = round(intercept)
        residuals["seq_sort"] = res

    if not updates:
        raise FitError("no measurements supplied")
    return base.with_updates(**updates), residuals
