"""Fixed-point serial protocol between the planner host and the microcontroller.

Wire frame: 0xFA start byte, payload length byte, payload, CRC16 big-endian.
The command payload is three big-endian 16-bit fixed-point fields in
(accelerator, brake, steering) order, each round(x * 65535) for x in [0, 1],
so a command frame is always 10 bytes.  The CRC covers the payload only.
"""

from __future__ import annotations

from dataclasses import dataclass

START_BYTE = 0xFA
COMMAND_PAYLOAD_LEN = 6
FIXED_POINT_FULL_SCALE = 65535


class FrameError(ValueError):
    pass


class BadStartError(FrameError):
    pass


class BadLengthError(FrameError):
    pass


class BadCrcError(FrameError):
    pass


@dataclass(frozen=True)
class CommandPacket:
    """Normalized actuator command, every field in [0, 1]."""

    app: float
    bpp: float
    steer: float

    def __post_init__(self):
        for name in ("app", "bpp", "steer"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")


@dataclass(frozen=True)
class Frame:
    """Decoded wire frame before payload interpretation."""

    length: int
    payload: bytes
    crc: int


_CRC_INIT = {"ccitt-false": 0xFFFF, "xmodem": 0x0000}


def _crc_table(poly: int = 0x1021) -> list[int]:
    table = []
    for byte in range(256):
        crc = byte << 8
        for _ in range(8):
            crc = ((crc << 1) ^ poly) & 0xFFFF if crc & 0x8000 else (crc << 1) & 0xFFFF
        table.append(crc)
    return table


_TABLE = _crc_table()


def crc16_ccitt(data: bytes, variant: str = "ccitt-false") -> int:
    """CRC16 with polynomial 0x1021, MSB first, no reflection, no final xor.

    The default variant starts from 0xFFFF (check value of b"123456789"
    is 0x29B1); "xmodem" starts from zero.
    """
    try:
        crc = _CRC_INIT[variant]
    except KeyError:
        raise ValueError(f"unknown CRC variant {variant!r}") from None
    for byte in data:
        crc = ((crc << 8) & 0xFFFF) ^ _TABLE[(crc >> 8) ^ byte]
    return crc


def _encode_fixed(value: float, name: str) -> int:
    if not 0.0 <= value <= 1.0:
        raise ValueError(f"{name}={value} outside [0, 1]")
    return round(value * FIXED_POINT_FULL_SCALE)


def encode_packet(app: float, bpp: float, steer: float) -> bytes:
    """Serialize a command into the 10-byte wire frame."""
    payload = b"".join(
        _encode_fixed(v, n).to_bytes(2, "big")
        for v, n in ((app, "app"), (bpp, "bpp"), (steer, "steer"))
    )
    crc = crc16_ccitt(payload)
    return bytes([START_BYTE, len(payload)]) + payload + crc.to_bytes(2, "big")


def parse_frame(buf: bytes) -> Frame:
    """Validate framing and CRC; the payload is not interpreted."""
    if len(buf) < 2:
        raise BadLengthError(f"frame truncated at {len(buf)} bytes")
    if buf[0] != START_BYTE:
        raise BadStartError(f"expected start byte 0x{START_BYTE:02X}, got 0x{buf[0]:02X}")
    length = buf[1]
    if len(buf) != length + 4:
        raise BadLengthError(f"length byte {length} but frame is {len(buf)} bytes")
    payload = buf[2:2 + length]
    crc = int.from_bytes(buf[2 + length:], "big")
    if crc != crc16_ccitt(payload):
        raise BadCrcError(f"crc mismatch: frame 0x{crc:04X}, computed 0x{crc16_ccitt(payload):04X}")
    return Frame(length, payload, crc)


def decode_packet(buf: bytes) -> CommandPacket:
    """Parse and interpret a command frame.

    Raises BadStartError / BadLengthError / BadCrcError so the caller can
    tell framing noise from corruption.
    """
    frame = parse_frame(buf)
    if frame.length != COMMAND_PAYLOAD_LEN:
        raise BadLengthError(f"command payload must be {COMMAND_PAYLOAD_LEN} bytes, got {frame.length}")
    fields = [
        int.from_bytes(frame.payload[i:i + 2], "big") / FIXED_POINT_FULL_SCALE
        for i in (0, 2, 4)
    ]
    return CommandPacket(*fields)


class StreamDecoder:
    """Byte-at-a-time resynchronizing decoder for a raw serial stream.

    Single-owner: feed() is not reentrant. Garbage before a start byte is
    discarded; a frame failing its length or CRC check costs one byte of
    progress and the scan resumes, so a corrupted stream re-locks on the
    next genuine frame boundary.
    """

    def __init__(self):
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[CommandPacket]:
        self._buf.extend(data)
        out: list[CommandPacket] = []
        while True:
            start = self._buf.find(START_BYTE)
            if start < 0:
                self._buf.clear()
                return out
            if start:
                del self._buf[:start]
            if len(self._buf) < 2:
                return out
            length = self._buf[1]
            total = length + 4
            if length != COMMAND_PAYLOAD_LEN:
                del self._buf[0]
                continue
            if len(self._buf) < total:
                return out
            candidate = bytes(self._buf[:total])
            try:
                out.append(decode_packet(candidate))
            except FrameError:
                del self._buf[0]
                continue
            del self._buf[:total]
