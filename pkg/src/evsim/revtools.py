"""Tools for locating actuation traffic in a recorded bus trace.

isolate_control_id finds which arbitration id triggers a physical
effect by replaying id subsets against a caller-supplied oracle,
halving the candidate set each round.  Only the first half of each
split is replayed; a negative result implies the effect lives in the
second half, which costs no oracle call, so the total is at most
1 + ceil(log2(n)) calls for n candidate ids (paths through the
smaller halves of odd splits finish sooner).  The saving has a blind
spot: when two ids only trigger the effect together, the inferred half
can be wrong.  confirm=True spends one extra call replaying the final
candidate alone and raises Ambiguous if it does not reproduce the
effect on its own.

correlate_bytes ranks every payload byte in a trace by the strength of
its linear relationship to the decoded speed broadcast, which surfaces
status bytes that mirror physical state.  Command bytes rank poorly
against a slow plant: the state they cause lags far behind them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import canbus
from .canbus import CanTrace
from .injection import select_ids


class EmptyTraceError(ValueError):
    """The trace has no frames usable for the requested analysis."""


class NoEffectError(ValueError):
    """Replaying the full trace does not trigger the oracle."""


class AmbiguousError(ValueError):
    """The isolated id does not trigger the effect alone."""


@dataclass(frozen=True)
class IsolationResult:
    arb_id: int
    oracle_calls: int
    confirmed: bool


def isolation_budget(n_ids: int) -> int:
    """Worst-case oracle calls for n candidate ids (excluding confirm)."""
    if n_ids < 1:
        raise ValueError("need at least one candidate id")
    return 1 + (n_ids - 1).bit_length()


def isolate_control_id(trace: CanTrace, oracle, confirm: bool = False) -> IsolationResult:
    """Bisect the trace's ids down to the one the oracle reacts to.

    oracle takes a CanTrace (a subset of the recording, timestamps
    preserved) and returns truthy when the physical effect appears.
    """
    ids = trace.ids()
    if not ids:
        raise EmptyTraceError("trace has no frames")
    calls = 0

    def probe(subset: list[int]) -> bool:
        nonlocal calls
        calls += 1
        return bool(oracle(select_ids(trace, subset)))

    if not probe(ids):
        raise NoEffectError("full recording does not trigger the effect")
    confirmed = len(ids) == 1
    current = ids
    while len(current) > 1:
        half = len(current) // 2
        first, second = current[:half], current[half:]
        if probe(first):
            current = first
            confirmed = len(first) == 1
        else:
            current = second
            confirmed = False
    winner = current[0]
    if confirm and not confirmed:
        if not probe([winner]):
            raise AmbiguousError(
                f"0x{winner:X} does not trigger the effect alone; "
                "the effect likely needs several ids together")
        confirmed = True
    return IsolationResult(winner, calls, confirmed)


# --- byte-vs-speed correlation ------------------------------------------------

@dataclass(frozen=True)
class ByteCorrelation:
    arb_id: int
    byte_index: int
    r: float
    n_samples: int
    rank: int


@dataclass(frozen=True)
class CorrelationReport:
    speed_id: int
    n_speed_samples: int
    ranked: tuple[ByteCorrelation, ...]
    excluded: tuple[tuple[int, int, str], ...]

    def top(self, n: int) -> tuple[ByteCorrelation, ...]:
        return self.ranked[:n]

    def find(self, arb_id: int, byte_index: int) -> ByteCorrelation | None:
        for c in self.ranked:
            if c.arb_id == arb_id and c.byte_index == byte_index:
                return c
        return None


def correlate_bytes(trace: CanTrace, speed_id: int = canbus.SPEED_ID,
                    signed: bool = False) -> CorrelationReport:
    """Rank every payload byte of every non-reference id against speed.

    Speed is resampled onto each frame's timestamp by holding the most
    recent broadcast (frames before the first broadcast take its value).
    Bytes beyond a frame's dlc count as zero.  Bytes with no variation,
    and every byte when the speed never changes, are reported in
    ``excluded`` instead of being ranked.  The default ranking uses
    |r| so inverse relationships surface too; signed=True ranks by the
    signed coefficient, most positive first.
    """
    by_id = trace.by_id()
    speed_frames = by_id.pop(speed_id, None)
    if not speed_frames:
        raise EmptyTraceError(f"no frames of the speed id 0x{speed_id:X} in the trace")
    if not by_id:
        raise EmptyTraceError("no candidate ids besides the speed reference")
    speed_t = np.array([f.timestamp_us for f in speed_frames], dtype=np.int64)
    speed_v = np.array([canbus.decode_speed(f, speed_id) for f in speed_frames])
    flat_speed = bool(np.all(speed_v == speed_v[0]))

    ranked: list[ByteCorrelation] = []
    excluded: list[tuple[int, int, str]] = []
    for arb_id, frames in by_id.items():
        t = np.array([f.timestamp_us for f in frames], dtype=np.int64)
        data = np.zeros((len(frames), 8), dtype=np.float64)
        for i, f in enumerate(frames):
            data[i, :f.dlc] = list(f.data)
        idx = np.clip(np.searchsorted(speed_t, t, side="right") - 1, 0, len(speed_t) - 1)
        v = speed_v[idx]
        for b in range(8):
            series = data[:, b]
            if np.all(series == series[0]):
                excluded.append((arb_id, b, "constant byte"))
                continue
            if flat_speed:
                excluded.append((arb_id, b, "speed reference is constant"))
                continue
            r = float(np.corrcoef(series, v)[0, 1])
            ranked.append(ByteCorrelation(arb_id, b, r, len(frames), rank=0))

    if signed:
        ranked.sort(key=lambda c: (-c.r, c.arb_id, c.byte_index))
    else:
        ranked.sort(key=lambda c: (-abs(c.r), c.arb_id, c.byte_index))
    ranked = [ByteCorrelation(c.arb_id, c.byte_index, c.r, c.n_samples, i + 1)
              for i, c in enumerate(ranked)]
    return CorrelationReport(speed_id, len(speed_frames), tuple(ranked), tuple(excluded))
