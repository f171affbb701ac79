"""Synthetic bus recordings for exercising the analysis tools.

Both generators run the vehicle plant behind the stock broadcast set
and bury it in filler traffic, producing the kind of capture the
analysis tools are meant to chew through: a pedal-press capture for id
isolation, and a longer drive with planted speed mirrors for byte
correlation.  Fixed seeds make the traces reproducible.
"""

from __future__ import annotations

import math
import random
from typing import Callable

from . import canbus
from .canbus import CanBus, CanFrame, CanTrace
from .injection import ThrottleReceiver
from .plant import VehiclePlant, SimulatedEcus

REAL_IDS = (canbus.STEERING_ID, canbus.SPEED_ID, canbus.BPP_ID,
            canbus.APP_ID, canbus.THROTTLE_ID)

_FILLER_PERIODS_US = (5_000, 10_000, 20_000, 25_000, 50_000, 100_000)


def _filler_ids(rng: random.Random, count: int) -> list[int]:
    pool = [i for i in range(0x20, 0x800) if i not in REAL_IDS]
    return rng.sample(pool, count)


def _walker_payload(rng: random.Random) -> Callable[[int], bytes]:
    """Payload with a few random-walking bytes and the rest constant."""
    state = bytearray(rng.randrange(256) for _ in range(8))
    moving = rng.sample(range(8), rng.randrange(1, 4))

    def payload(now_us: int) -> bytes:
        for b in moving:
            state[b] = (state[b] + rng.choice((-1, 0, 1))) % 256
        return bytes(state)

    return payload


def press_recording(duration_s: float = 6.0,
                    press_start_s: float = 2.0,
                    press_end_s: float = 5.0,
                    app_pct: float = 15.0,
                    n_filler: int = 97,
                    seed: int = 2024) -> CanTrace:
    """Capture of a single accelerator press among heavy filler traffic.

    The five stock broadcasts run against a live plant while 97 filler
    ids chatter, so the capture holds 102 distinct ids and only one of
    them actually moves the car.
    """
    rng = random.Random(seed)
    plant = VehiclePlant()
    pedal = {"app": 0.0}
    bus = CanBus()
    ecus = SimulatedEcus(plant, pedal_fn=lambda: (pedal["app"], 0.0))
    ecus.attach(bus)
    for arb_id in _filler_ids(rng, n_filler):
        bus.add_periodic(arb_id, rng.choice(_FILLER_PERIODS_US),
                         _walker_payload(rng), source="filler")
    n_ticks = round(duration_s * 1000.0)
    lo = round(press_start_s * 1000.0)
    hi = round(press_end_s * 1000.0)
    for ms in range(1, n_ticks + 1):
        pedal["app"] = app_pct if lo <= ms < hi else 0.0
        plant.advance(pedal["app"], 0.0, 50.0, 1, 0.001)
        bus.step(ms * 1000)
    return bus.trace()


def throttle_effect_oracle(min_gain_mph: float = 1.0,
                           settle_s: float = 1.0) -> Callable[[CanTrace], bool]:
    """Replay oracle: does this traffic make a fresh test rig gain speed?

    The rig is a plant whose accelerator obeys the last throttle
    command seen on the bus.  The replayed frames keep their recorded
    timestamps; the rig runs a little past the last frame so a press at
    the end still shows up in the speed.
    """
    def oracle(subset: CanTrace) -> bool:
        rig = VehiclePlant()
        bus = CanBus()
        rx = ThrottleReceiver()
        bus.add_listener(rx)
        bus.feed_replay(subset)
        last_us = subset.frames[-1].timestamp_us if len(subset) else 0
        n_ticks = (last_us // 1000) + round(settle_s * 1000.0)
        top_speed = 0.0
        for ms in range(1, n_ticks + 1):
            bus.step(ms * 1000)
            rig.advance(rx.app_pct, 0.0, 50.0, 1, 0.001)
            if rig.state.speed_mph > top_speed:
                top_speed = rig.state.speed_mph
        return top_speed >= min_gain_mph
    return oracle


def _ema_status_payload(statuses: list[dict], ema: list[float]) -> Callable[[int], bytes]:
    def payload(now_us: int) -> bytes:
        data = bytearray(8)
        for spot, st in enumerate(statuses):
            raw = round(st["scale"] * ema[st["ema"]] + st["offset"])
            data[spot] = max(0, min(255, raw))
        return bytes(data)
    return payload


def correlation_recording(duration_s: float = 60.0,
                          square_period_s: float = 20.0,
                          app_lo_pct: float = 10.0,
                          app_hi_pct: float = 20.0,
                          n_walkers: int = 6,
                          seed: int = 77) -> tuple[CanTrace, dict]:
    """Drive capture with speed mirrors planted for the correlator.

    The accelerator follows a square wave, so the command byte and the
    lagging speed decorrelate.  One filler byte carries a fine-grained
    affine copy of the true speed (the needle the correlator should
    rank first), 16 status bytes carry coarser lightly filtered affine
    copies, a couple of ids never change, and the walkers are noise.

    Returns the trace plus a key describing what was planted where.
    """
    rng = random.Random(seed)
    plant = VehiclePlant()
    pedal = {"app": app_lo_pct}
    bus = CanBus()
    ecus = SimulatedEcus(plant, pedal_fn=lambda: (pedal["app"], 0.0))
    ecus.attach(bus)

    ids = _filler_ids(rng, n_walkers + 7)
    walker_ids, rest = ids[:n_walkers], ids[n_walkers:]
    planted_id, const_a, const_b = rest[0], rest[1], rest[2]
    status_ids = rest[3:7]
    for arb_id in walker_ids:
        bus.add_periodic(arb_id, rng.choice(_FILLER_PERIODS_US),
                         _walker_payload(rng), source="filler")
    bus.add_periodic(const_a, 20_000, lambda now: bytes([0x42] * 8), source="filler")
    bus.add_periodic(const_b, 50_000, lambda now: b"\x10\x20\x30\x40\x00\x00\x00\x00",
                     source="filler")

    # lightly filtered speed copies: 4 status ids x 4 affine bytes each
    taus = [0.05, 0.08, 0.12, 0.2]
    ema = [0.0, 0.0, 0.0, 0.0]
    status_key = []
    for i, arb_id in enumerate(status_ids):
        statuses = []
        for b in range(4):
            statuses.append({"ema": i, "scale": 2.0 + 0.5 * (4 * i + b) / 4.0,
                             "offset": rng.randrange(0, 20)})
            status_key.append((arb_id, b))
        bus.add_periodic(arb_id, rng.choice((10_000, 20_000, 25_000)),
                         _ema_status_payload(statuses, ema), source="filler")

    # finest affine scale that stays inside one byte at the speeds this
    # drive reaches (~56 mph), so the copy never clips
    planted_byte = 2
    planted_scale = 4.0

    def planted_payload(now_us: int) -> bytes:
        data = bytearray(8)
        data[planted_byte] = max(0, min(255, round(plant.state.speed_mph * planted_scale)))
        data[5] = 0x7F
        return bytes(data)

    bus.add_periodic(planted_id, 10_000, planted_payload, source="filler")

    half_ms = round(square_period_s * 500.0)
    n_ticks = round(duration_s * 1000.0)
    for ms in range(1, n_ticks + 1):
        pedal["app"] = app_hi_pct if (ms // half_ms) % 2 == 1 else app_lo_pct
        plant.advance(pedal["app"], 0.0, 50.0, 1, 0.001)
        for i, tau in enumerate(taus):
            ema[i] += (plant.state.speed_mph - ema[i]) * (1.0 - math.exp(-0.001 / tau))
        bus.step(ms * 1000)

    key = {
        "planted": (planted_id, planted_byte),
        "actuator": (canbus.THROTTLE_ID, canbus.THROTTLE_BYTE_INDEX),
        "status": status_key,
        "constant_ids": (const_a, const_b),
        "walkers": tuple(walker_ids),
    }
    return bus.trace(), key
