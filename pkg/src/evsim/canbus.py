"""CAN frame model, trace text format, speed codec, and the bus scheduler.

Arbitration IDs are 11-bit; payloads are at most 8 bytes.  Timestamps are
integer microseconds since scenario start.  Byte positions are stored
0-indexed internally; user-facing text (CLI, reports) counts bytes 1-8 the
way the vehicle documentation does, and every seam that converts says so.

The road-speed broadcast (default ID 0x75) carries speed in bytes 7 and 8
of the 1-indexed convention, i.e. ``data[6]`` high / ``data[7]`` low:

    speed_mph = ((data[6] << 8) + data[7] - 45268) / 54

so 0 mph sits at 0xB0D4 and each count is 1/54 mph.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator

SPEED_ID = 0x75
SPEED_OFFSET = 45268
SPEED_COUNTS_PER_MPH = 54

THROTTLE_ID = 0x11A
APP_ID = 0x204
BPP_ID = 0x7D
STEERING_ID = 0x10

# Throttle command scaling on 0x11A byte 4 (1-indexed): percent * 2.55 -> 0..255.
THROTTLE_BYTE_INDEX = 3  # 0-indexed position of "byte 4"
PCT_TO_BYTE = 2.55


class WrongIdError(ValueError):
    """Frame has a different arbitration ID than the codec expects."""


class ShortFrameError(ValueError):
    """Frame payload is too short for the field being decoded."""


class OutOfRangeError(ValueError):
    """Encoded value does not fit the field."""


class TraceParseError(ValueError):
    def __init__(self, line_no: int, reason: str):
        self.line_no = line_no
        self.reason = reason
        super().__init__(f"line {line_no}: {reason}")


@dataclass(frozen=True)
class CanFrame:
    """One classical CAN data frame as seen on the wire."""

    timestamp_us: int
    arbitration_id: int
    dlc: int
    data: bytes

    def __post_init__(self):
        if self.timestamp_us < 0:
            raise ValueError(f"negative timestamp {self.timestamp_us}")
        if not 0 <= self.arbitration_id <= 0x7FF:
            raise ValueError(f"arbitration id 0x{self.arbitration_id:X} outside 11-bit range")
        if not 0 <= self.dlc <= 8:
            raise ValueError(f"dlc {self.dlc} outside 0..8")
        if len(self.data) != self.dlc:
            raise ValueError(f"dlc {self.dlc} does not match {len(self.data)} data bytes")
        if not isinstance(self.data, bytes):
            object.__setattr__(self, "data", bytes(self.data))


def make_frame(timestamp_us: int, arbitration_id: int, data: bytes) -> CanFrame:
    data = bytes(data)
    return CanFrame(timestamp_us, arbitration_id, len(data), data)


@dataclass
class BroadcastSchedule:
    """Periodic emission table: arbitration id -> period in microseconds."""

    periods_us: dict[int, int] = field(default_factory=dict)

    def __post_init__(self):
        for arb_id, period in self.periods_us.items():
            if period <= 0:
                raise ValueError(f"period for 0x{arb_id:X} must be positive, got {period}")


#: Default broadcast periods. The throttle command is slower than the
#: status broadcasts; all of it is scenario-configurable.
DEFAULT_SCHEDULE = {
    SPEED_ID: 10_000,
    STEERING_ID: 10_000,
    APP_ID: 10_000,
    BPP_ID: 10_000,
    THROTTLE_ID: 100_000,
}


@dataclass
class CanTrace:
    """A time-ordered list of frames."""

    frames: list[CanFrame] = field(default_factory=list)

    def __post_init__(self):
        last = -1
        for f in self.frames:
            if f.timestamp_us < last:
                raise ValueError("trace timestamps must be non-decreasing")
            last = f.timestamp_us

    def __len__(self):
        return len(self.frames)

    def __iter__(self) -> Iterator[CanFrame]:
        return iter(self.frames)

    def ids(self) -> list[int]:
        """Distinct arbitration ids in first-seen order."""
        seen: dict[int, None] = {}
        for f in self.frames:
            seen.setdefault(f.arbitration_id, None)
        return list(seen)

    def by_id(self) -> dict[int, list[CanFrame]]:
        """Group frames by arbitration id, preserving first-seen id order."""
        groups: dict[int, list[CanFrame]] = {}
        for f in self.frames:
            groups.setdefault(f.arbitration_id, []).append(f)
        return groups


# --- speed codec -----------------------------------------------------------

def decode_speed_raw(raw: int) -> float:
    """Road speed in mph from the 16-bit field value."""
    return (raw - SPEED_OFFSET) / SPEED_COUNTS_PER_MPH


def decode_speed(frame: CanFrame, arb_id: int = SPEED_ID) -> float:
    """Road speed in mph from a speed broadcast frame.

    arb_id overrides the expected id for recordings whose speed
    broadcast lives elsewhere; the field layout is unchanged.
    """
    if frame.arbitration_id != arb_id:
        raise WrongIdError(f"expected 0x{arb_id:X}, got 0x{frame.arbitration_id:X}")
    if frame.dlc < 8:
        raise ShortFrameError(f"speed frame needs 8 bytes, got {frame.dlc}")
    return decode_speed_raw((frame.data[6] << 8) + frame.data[7])


def encode_speed(speed_mph: float, timestamp_us: int = 0) -> CanFrame:
    """Build a full speed broadcast frame; bytes other than 7/8 are zero."""
    raw = round(SPEED_OFFSET + SPEED_COUNTS_PER_MPH * speed_mph)
    if not 0 <= raw <= 0xFFFF:
        raise OutOfRangeError(f"speed {speed_mph} mph does not fit the 16-bit field")
    data = bytes([0, 0, 0, 0, 0, 0, (raw >> 8) & 0xFF, raw & 0xFF])
    return CanFrame(timestamp_us, SPEED_ID, 8, data)


# --- trace text format ------------------------------------------------------

def serialize_trace(trace: CanTrace) -> str:
    """Candump-like text: ``<timestamp_us> <ID hex> <dlc> <bytes...>`` per line.

    IDs are uppercase hex without prefix; data bytes are two uppercase hex
    digits each.
    """
    lines = []
    for f in trace:
        body = " ".join(f"{b:02X}" for b in f.data)
        line = f"{f.timestamp_us} {f.arbitration_id:X} {f.dlc}"
        lines.append(f"{line} {body}" if body else line)
    return "\n".join(lines) + ("\n" if lines else "")


def parse_trace(text: str | bytes) -> CanTrace:
    """Parse the text trace format; blank lines and '#' comments are skipped.

    Raises TraceParseError with the 1-indexed line number on malformed
    input, including timestamps that go backwards.
    """
    if isinstance(text, bytes):
        text = text.decode("ascii")
    frames: list[CanFrame] = []
    last_t = -1
    for line_no, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        tokens = stripped.split()
        if len(tokens) < 3:
            raise TraceParseError(line_no, "expected '<timestamp> <id> <dlc> <bytes...>'")
        try:
            t = int(tokens[0])
        except ValueError:
            raise TraceParseError(line_no, f"bad timestamp {tokens[0]!r}") from None
        try:
            arb_id = int(tokens[1], 16)
        except ValueError:
            raise TraceParseError(line_no, f"bad arbitration id {tokens[1]!r}") from None
        try:
            dlc = int(tokens[2])
        except ValueError:
            raise TraceParseError(line_no, f"bad dlc {tokens[2]!r}") from None
        byte_tokens = tokens[3:]
        if len(byte_tokens) != dlc:
            raise TraceParseError(line_no, f"dlc {dlc} but {len(byte_tokens)} data bytes")
        try:
            data = bytes(int(tok, 16) for tok in byte_tokens)
        except ValueError:
            raise TraceParseError(line_no, "bad data byte") from None
        if t < last_t:
            raise TraceParseError(line_no, f"timestamp {t} goes backwards")
        last_t = t
        try:
            frames.append(CanFrame(t, arb_id, dlc, data))
        except ValueError as exc:
            raise TraceParseError(line_no, str(exc)) from None
    return CanTrace(frames)


def load_trace(path) -> CanTrace:
    with open(path, "r", encoding="ascii") as fh:
        return parse_trace(fh.read())


def save_trace(trace: CanTrace, path) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write(serialize_trace(trace))


# --- bus scheduler -----------------------------------------------------------

PayloadFn = Callable[[int], bytes]
Listener = Callable[[CanFrame, str], None]


class CanBus:
    """Single-threaded bus scheduler with deterministic arbitration.

    Periodic sources emit at k*period for k >= 1. Frames that fall due in
    the window covered by one ``step`` call are delivered sorted by
    (timestamp, arbitration id, enqueue sequence): lower IDs win
    simultaneous arbitration, and an injected frame scheduled at the same
    microsecond as an observed one lands after it because its sequence
    number is larger.  Tap rules rewrite periodic-source frames between
    the producing module and the wire; injected and replayed frames enter
    at the connector and are not tapped.
    """

    def __init__(self):
        self._periodic: list[dict] = []  # insertion-ordered sources
        self._taps: list = []  # FilterRule-like objects with .apply(frame)
        self._listeners: list[Listener] = []
        # heap entries: (due, arb_id, origin, seq, frame, source); origin 1
        # ranks injected frames after periodic ones on a timestamp+id tie
        self._pending: list[tuple[int, int, int, int, CanFrame, str]] = []
        self._seq = 0
        self._now = 0
        self._trace: list[CanFrame] = []

    # -- wiring --------------------------------------------------------------

    def add_periodic(self, arb_id: int, period_us: int, payload_fn: PayloadFn,
                     source: str = "ecu") -> None:
        if period_us <= 0:
            raise ValueError("period must be positive")
        self._periodic.append({
            "id": arb_id,
            "period": period_us,
            "payload": payload_fn,
            "source": source,
            "next_due": period_us,
        })

    def add_schedule(self, schedule: dict[int, int],
                     payload_fns: dict[int, PayloadFn], source: str = "ecu") -> None:
        for arb_id, period in schedule.items():
            self.add_periodic(arb_id, period, payload_fns[arb_id], source)

    def add_tap(self, rule) -> None:
        self._taps.append(rule)

    def add_listener(self, fn: Listener) -> None:
        self._listeners.append(fn)

    def inject_at(self, due_us: int, frame: CanFrame, source: str = "inject") -> None:
        """Queue a frame for delivery once the bus reaches due_us."""
        heapq.heappush(self._pending, (due_us, frame.arbitration_id, 1, self._seq, frame, source))
        self._seq += 1

    def feed_replay(self, frames: Iterable[CanFrame], source: str = "replay") -> None:
        for f in frames:
            self.inject_at(f.timestamp_us, f, source)

    # -- time ------------------------------------------------------------------

    def next_due_us(self) -> int | None:
        """Earliest pending emission time, or None when nothing is scheduled."""
        candidates = [src["next_due"] for src in self._periodic]
        if self._pending:
            candidates.append(self._pending[0][0])
        return min(candidates) if candidates else None

    def step(self, now_us: int) -> list[CanFrame]:
        """Deliver every frame due in (previous now, now_us]."""
        if now_us < self._now:
            raise ValueError("bus time must not go backwards")
        batch: list[tuple[int, int, int, int, CanFrame, str]] = []
        for src in self._periodic:
            while src["next_due"] <= now_us:
                due = src["next_due"]
                payload = bytes(src["payload"](due))
                frame = CanFrame(due, src["id"], len(payload), payload)
                for tap in self._taps:
                    frame = tap.apply(frame)
                batch.append((due, frame.arbitration_id, 0, self._seq, frame, src["source"]))
                self._seq += 1
                src["next_due"] = due + src["period"]
        while self._pending and self._pending[0][0] <= now_us:
            batch.append(heapq.heappop(self._pending))
        batch.sort(key=lambda item: item[:4])
        delivered = []
        for _, _, _, _, frame, source in batch:
            self._trace.append(frame)
            for listener in self._listeners:
                listener(frame, source)
            delivered.append(frame)
        self._now = now_us
        return delivered

    def trace(self) -> CanTrace:
        return CanTrace(list(self._trace))
