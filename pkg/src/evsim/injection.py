"""Frame injection, filtering, replay, and dominance measurement.

Two ways to override a broadcast:

* FilterRule sits between a producing module and the wire and rewrites
  matching frames in place (a man-in-the-middle tap).  Receivers never
  see the genuine payload.
* ShadowInjector leaves genuine frames alone and schedules a forged
  copy a fixed delay after each one.  Receivers that act on the most
  recent frame then spend delay/period of each cycle on the genuine
  value and the rest on the forged one.

Dominance is that duty cycle measured on a receiver's delivery
timeline, kept exact as a Fraction of integer microseconds.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Sequence

from . import canbus
from .canbus import CanBus, CanFrame, CanTrace


class UnknownIdError(ValueError):
    """Requested arbitration id never appears in the trace."""


@dataclass(frozen=True)
class FilterRule:
    """Rewrite one payload byte of every matching frame at the tap point."""

    arb_id: int
    byte_index: int
    value: int

    def __post_init__(self):
        if not 0 <= self.byte_index <= 7:
            raise ValueError(f"byte_index {self.byte_index} outside 0..7")
        if not 0 <= self.value <= 0xFF:
            raise ValueError(f"value {self.value} outside one byte")

    def apply(self, frame: CanFrame) -> CanFrame:
        if frame.arbitration_id != self.arb_id:
            return frame
        if self.byte_index >= frame.dlc:
            return frame
        data = bytearray(frame.data)
        if data[self.byte_index] == self.value:
            return frame
        data[self.byte_index] = self.value
        return CanFrame(frame.timestamp_us, frame.arbitration_id, frame.dlc, bytes(data))


PayloadSource = Callable[[int, bytes], bytes]


def byte_override(byte_index: int, value_fn: Callable[[int], int]) -> PayloadSource:
    """Payload source that copies the genuine frame and rewrites one byte.

    value_fn maps the genuine frame's timestamp to the forged byte, so a
    ramp can be expressed as a function of time.
    """
    def src(now_us: int, genuine: bytes) -> bytes:
        data = bytearray(genuine)
        if byte_index >= len(data):
            raise ValueError(f"byte_index {byte_index} outside dlc {len(data)}")
        data[byte_index] = value_fn(now_us)
        return bytes(data)
    return src


class ShadowInjector:
    """Forge a copy of each genuine target frame a fixed delay later.

    The delay must be shorter than the genuine period or the forged
    frame would land after (or with) the next genuine one and lose the
    last-writer race it is meant to win.  The injector tags its own
    frames and skips them when listening, so it never chases itself.
    """

    SOURCE = "shadow"

    def __init__(self, bus: CanBus, target_id: int, payload_source: PayloadSource,
                 delay_us: int = 250, period_us: int | None = None,
                 source: str = SOURCE):
        if delay_us <= 0:
            raise ValueError("delay must be positive")
        if period_us is not None and delay_us >= period_us:
            raise ValueError(
                f"delay {delay_us} us must be shorter than the genuine period {period_us} us")
        self.bus = bus
        self.target_id = target_id
        self.payload_source = payload_source
        self.delay_us = delay_us
        self.source = source
        self.injected = 0
        bus.add_listener(self._on_frame)

    def _on_frame(self, frame: CanFrame, source: str) -> None:
        if frame.arbitration_id != self.target_id or source == self.source:
            return
        due = frame.timestamp_us + self.delay_us
        payload = bytes(self.payload_source(frame.timestamp_us, frame.data))
        forged = CanFrame(due, frame.arbitration_id, len(payload), payload)
        self.bus.inject_at(due, forged, source=self.source)
        self.injected += 1


# --- receiver-side bookkeeping ---------------------------------------------------

class ThrottleReceiver:
    """Drive-module view of the throttle command: last frame wins.

    Keeps the full delivery log so dominance can be measured afterwards.
    """

    def __init__(self, arb_id: int = canbus.THROTTLE_ID,
                 byte_index: int = canbus.THROTTLE_BYTE_INDEX):
        self.arb_id = arb_id
        self.byte_index = byte_index
        self.app_pct = 0.0
        self.deliveries: list[tuple[int, str, float]] = []

    def __call__(self, frame: CanFrame, source: str) -> None:
        if frame.arbitration_id != self.arb_id or frame.dlc <= self.byte_index:
            return
        self.app_pct = frame.data[self.byte_index] / canbus.PCT_TO_BYTE
        self.deliveries.append((frame.timestamp_us, source, self.app_pct))


def dominance_fraction(deliveries: Sequence[tuple[int, str]], start_us: int,
                       end_us: int, source: str = ShadowInjector.SOURCE) -> Fraction:
    """Fraction of [start, end) during which the last delivery came from source.

    Time before the first delivery counts as not dominated.  Exact
    integer-microsecond arithmetic; returns a Fraction.
    """
    if end_us <= start_us:
        raise ValueError("end must be after start")
    total = end_us - start_us
    dominated = 0
    current: str | None = None
    prev = start_us
    for t, src in deliveries:
        if t >= end_us:
            break
        if t > prev:
            if current == source:
                dominated += t - prev
            prev = t
        # multiple deliveries in the same microsecond: last one wins
        current = src
    if current == source and end_us > prev:
        dominated += end_us - prev
    return Fraction(dominated, total)


# --- record and replay ------------------------------------------------------------

def select_ids(trace: CanTrace, ids: Iterable[int]) -> CanTrace:
    """Subset of a trace containing only the given ids, order preserved."""
    wanted = set(ids)
    present = set(trace.ids())
    missing = wanted - present
    if missing:
        raise UnknownIdError(
            "ids not in trace: " + ", ".join(f"0x{i:X}" for i in sorted(missing)))
    return CanTrace([f for f in trace if f.arbitration_id in wanted])


def merge_traces(*traces: CanTrace) -> CanTrace:
    """Merge traces by timestamp; ties keep the argument order (stable)."""
    frames = [f for tr in traces for f in tr]
    frames.sort(key=lambda f: f.timestamp_us)
    return CanTrace(frames)


def playback(bus: CanBus, trace: CanTrace, ids: Iterable[int] | None = None,
             source: str = "replay") -> int:
    """Queue trace frames (optionally an id subset) at their recorded times."""
    subset = trace if ids is None else select_ids(trace, ids)
    bus.feed_replay(subset, source=source)
    return len(subset)
