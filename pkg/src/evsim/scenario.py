"""Closed-loop scenario runner and injection rigs.

A scenario wires the full stack together on one clock hierarchy:

  physics tick (1 kHz)  plant integration and bus event grid
  control period (100 Hz)  the three PI loops and the serial hop
  follower period (10 Hz)  target replay and the flatness law

Each control period the loops read the true plant state, their duties
ride the serial link (encode, CRC, decode) exactly as they would to the
gateway board, the steering duty passes through deadband compensation,
and the plant integrates to the next boundary.  Bus broadcasts fall due
on their own schedule; due times between physics ticks take effect at
the next tick.  Everything is integer-microsecond bookkeeping, so runs
are deterministic and replays byte-identical.

The injection rigs run a receiver that obeys the last throttle command
seen on the wire, against either live broadcasts plus a shadow/tap
override or a recorded trace.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

from . import canbus
from . import follower as fl
from . import injection as inj
from . import lowlevel as ll
from . import serial_link
from .plant import (DEFAULT_PARAMS, MPH_TO_MPS, MPS_TO_MPH, PlantParams,
                    SimulatedEcus, VehiclePlant)


class ConfigError(ValueError):
    """Scenario description is inconsistent or incomplete."""


def follower_defaults() -> dict:
    """Packaged follower gain defaults (heading gain is rig-calibrated)."""
    raw = resources.files("evsim").joinpath("data/follower_defaults.json").read_text()
    return json.loads(raw)


def _to_us(seconds: float, name: str) -> int:
    us = seconds * 1e6
    rounded = round(us)
    if rounded <= 0 or abs(us - rounded) > 1e-3:
        raise ConfigError(f"{name} must be a positive whole number of microseconds, got {seconds}")
    return rounded


@dataclass(frozen=True)
class OvalSpec:
    straight_m: float = 100.0
    radius_m: float = 20.0
    speed_mph: float = 20.0


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce one closed-loop run."""

    name: str
    duration_s: float
    physics_dt_s: float = 0.001
    control_period_s: float = 0.01
    follower_period_s: float = 0.1
    oval: OvalSpec | None = None
    path_file: str | None = None
    speed_ref_mph: float | None = None
    heading_mode: str = "relative"
    q: float = 1.0
    r: float = 1.0
    k_heading: float | None = None
    preview_s: float | None = None

    def validate(self) -> None:
        if self.duration_s <= 0:
            raise ConfigError("duration must be positive")
        phys = _to_us(self.physics_dt_s, "physics_dt_s")
        ctl = _to_us(self.control_period_s, "control_period_s")
        hl = _to_us(self.follower_period_s, "follower_period_s")
        if ctl % phys:
            raise ConfigError(
                f"control period {ctl} us must be a multiple of the physics tick {phys} us")
        if hl % ctl:
            raise ConfigError(
                f"follower period {hl} us must be a multiple of the control period {ctl} us")
        sources = sum(x is not None for x in (self.oval, self.path_file, self.speed_ref_mph))
        if sources != 1:
            raise ConfigError("exactly one of oval, path_file, speed_ref_mph is required")
        if self.heading_mode not in ("relative", "absolute"):
            raise ConfigError(f"heading_mode must be 'relative' or 'absolute', got {self.heading_mode!r}")

    @classmethod
    def from_dict(cls, raw: dict) -> "Scenario":
        raw = dict(raw)
        oval = raw.pop("oval", None)
        defaults = follower_defaults()
        fields = {
            "name": raw.pop("name", "scenario"),
            "duration_s": raw.pop("duration_s", None),
            "physics_dt_s": raw.pop("physics_dt_s", 0.001),
            "control_period_s": raw.pop("control_period_s", 0.01),
            "follower_period_s": raw.pop("follower_period_s", 0.1),
            "path_file": raw.pop("path_file", None),
            "speed_ref_mph": raw.pop("speed_ref_mph", None),
            "heading_mode": raw.pop("heading_mode", "relative"),
            "q": raw.pop("q", defaults.get("q", 1.0)),
            "r": raw.pop("r", defaults.get("r", 1.0)),
            "k_heading": raw.pop("k_heading", None),
            "preview_s": raw.pop("preview_s", None),
        }
        if raw:
            raise ConfigError(f"unknown scenario keys: {sorted(raw)}")
        if fields["duration_s"] is None:
            raise ConfigError("duration_s is required")
        if oval is not None:
            oval = OvalSpec(**oval)
        scn = cls(oval=oval, **fields)
        scn.validate()
        return scn

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "duration_s": self.duration_s,
            "physics_dt_s": self.physics_dt_s,
            "control_period_s": self.control_period_s,
            "follower_period_s": self.follower_period_s,
            "heading_mode": self.heading_mode,
            "q": self.q,
            "r": self.r,
        }
        if self.oval is not None:
            out["oval"] = {"straight_m": self.oval.straight_m,
                           "radius_m": self.oval.radius_m,
                           "speed_mph": self.oval.speed_mph}
        if self.path_file is not None:
            out["path_file"] = self.path_file
        if self.speed_ref_mph is not None:
            out["speed_ref_mph"] = self.speed_ref_mph
        if self.k_heading is not None:
            out["k_heading"] = self.k_heading
        if self.preview_s is not None:
            out["preview_s"] = self.preview_s
        return out


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return Scenario.from_dict(json.load(fh))


def save_scenario(scn: Scenario, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scn.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


LOG_COLUMNS = (
    "t_s", "speed_mph", "steer_counts", "heading_rad", "p_n", "p_e",
    "app_pct", "bpp_pct", "steer_duty_raw", "steer_duty_plant",
    "speed_ref_mph", "counts_ref", "target_n", "target_e",
    "path_err_m", "speed_err_mph",
)


@dataclass
class ScenarioResult:
    scenario: Scenario
    rows: list[tuple]
    trace: canbus.CanTrace
    metrics: dict
    path: fl.TargetPath | None = None


def _build_path(scn: Scenario) -> fl.TargetPath | None:
    if scn.oval is not None:
        return fl.make_oval(scn.oval.straight_m, scn.oval.radius_m,
                            scn.oval.speed_mph * MPH_TO_MPS)
    if scn.path_file is not None:
        return fl.load_path(scn.path_file)
    return None


def run_scenario(scn: Scenario, params: PlantParams = DEFAULT_PARAMS) -> ScenarioResult:
    scn.validate()
    phys_us = _to_us(scn.physics_dt_s, "physics_dt_s")
    ctl_us = _to_us(scn.control_period_s, "control_period_s")
    hl_us = _to_us(scn.follower_period_s, "follower_period_s")
    n_ctl = int(round(scn.duration_s * 1e6)) // ctl_us
    dt = scn.physics_dt_s

    plant = VehiclePlant(params)
    bus = canbus.CanBus()
    ecus = SimulatedEcus(plant)
    ecus.attach(bus)

    lon = ll.LongitudinalController(params)
    lat = ll.LateralController(params)
    decoder = serial_link.StreamDecoder()

    path = _build_path(scn)
    pilot = None
    if path is not None:
        defaults = follower_defaults()
        k_heading = scn.k_heading if scn.k_heading is not None else defaults["k_heading"]
        preview = scn.preview_s if scn.preview_s is not None else defaults.get("preview_s", 0.0)
        gains = fl.FollowerGains.from_weights(scn.q, scn.r, k_heading, preview)
        pilot = fl.PathFollower(path, gains, scn.heading_mode,
                                counts_limits=lat.achievable_counts(),
                                pose=params.pose)

    rows: list[tuple] = []
    t_us = 0
    speed_ref = scn.speed_ref_mph or 0.0
    counts_ref = 0.0
    serial_roundtrips = 0
    follower_steps = 0
    physics_ticks = 0

    for c in range(n_ctl):
        start_us = c * ctl_us
        if pilot is not None and start_us % hl_us == 0:
            cmd = pilot.step(start_us / 1e6, plant.state.p_n, plant.state.p_e,
                             plant.state.heading_rad)
            speed_ref, counts_ref = cmd.speed_mph, cmd.steer_counts
            follower_steps += 1

        app_pct, bpp_pct = lon.step(speed_ref, plant.state.speed_mph, scn.control_period_s)
        duty_raw = lat.step(counts_ref, plant.state.steer_counts, scn.control_period_s)

        # the command hop to the actuation board and back
        wire = serial_link.encode_packet(app_pct / 100.0, bpp_pct / 100.0, duty_raw / 100.0)
        packets = decoder.feed(wire)
        if len(packets) != 1:
            raise RuntimeError("serial link dropped a command frame")
        pkt = packets[0]
        serial_roundtrips += 1
        app_rx, bpp_rx = pkt.app * 100.0, pkt.bpp * 100.0
        duty_plant = ll.deadband_compensate(pkt.steer * 100.0)

        end_us = start_us + ctl_us
        while t_us < end_us:
            due = bus.next_due_us()
            if due is not None and due <= t_us:
                bus.step(t_us)
                continue
            if due is None or due >= end_us:
                boundary = end_us
            else:
                boundary = min(end_us, ((due + phys_us - 1) // phys_us) * phys_us)
            n = (boundary - t_us) // phys_us
            plant.advance(app_rx, bpp_rx, duty_plant, n, dt)
            physics_ticks += n
            t_us = boundary
            if due is not None and due <= t_us:
                bus.step(t_us)

        t_s = end_us / 1e6
        st = plant.state
        if path is not None:
            tgt_n, tgt_e = path.position_at(t_s, held=False)
            path_err = math.hypot(st.p_n - tgt_n, st.p_e - tgt_e)
        else:
            tgt_n = tgt_e = path_err = None
        rows.append((t_s, st.speed_mph, st.steer_counts, st.heading_rad, st.p_n,
                     st.p_e, app_pct, bpp_pct, duty_raw, duty_plant, speed_ref,
                     counts_ref, tgt_n, tgt_e, path_err,
                     speed_ref - st.speed_mph))

    metrics = _scenario_metrics(scn, rows, path, bus, physics_ticks, n_ctl,
                                follower_steps, serial_roundtrips)
    return ScenarioResult(scn, rows, bus.trace(), metrics, path)


def _scenario_metrics(scn: Scenario, rows, path, bus, physics_ticks, n_ctl,
                      follower_steps, serial_roundtrips) -> dict:
    metrics: dict = {
        "name": scn.name,
        "duration_s": scn.duration_s,
        "physics_ticks": physics_ticks,
        "control_steps": n_ctl,
        "follower_steps": follower_steps,
        "serial_roundtrips": serial_roundtrips,
        "frames_on_bus": len(bus.trace()),
    }
    if rows:
        last = rows[-1]
        metrics["final_speed_mph"] = last[1]
        metrics["final_p_n"] = last[4]
        metrics["final_p_e"] = last[5]
    if path is not None:
        period = path.period_s
        metrics["lap_period_s"] = period
        metrics["laps_completed"] = int(rows[-1][0] / period) if rows else 0
        per_lap: dict[int, list[float]] = {}
        for row in rows:
            lap = int(row[0] / period)
            per_lap.setdefault(lap, []).append(row[14])
        laps = {}
        for lap, errs in sorted(per_lap.items()):
            laps[str(lap + 1)] = {
                "samples": len(errs),
                "mean_err_m": sum(errs) / len(errs),
                "max_err_m": max(errs),
            }
        metrics["lap_errors"] = laps
        all_errs = [row[14] for row in rows]
        metrics["mean_err_m"] = sum(all_errs) / len(all_errs)
        metrics["max_err_m"] = max(all_errs)
    return metrics


def emit_logs(result: ScenarioResult, outdir) -> dict[str, Path]:
    """Write state.csv, trace.txt, and metrics.json; returns the paths.

    Floats go through repr so reruns of a deterministic scenario produce
    byte-identical files.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "state": outdir / "state.csv",
        "trace": outdir / "trace.txt",
        "metrics": outdir / "metrics.json",
    }
    with open(paths["state"], "w", newline="", encoding="ascii") as fh:
        writer = csv.writer(fh)
        writer.writerow(LOG_COLUMNS)
        for row in result.rows:
            writer.writerow(["" if v is None else repr(v) for v in row])
    canbus.save_trace(result.trace, paths["trace"])
    with open(paths["metrics"], "w", encoding="ascii") as fh:
        json.dump(result.metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return paths


# --- injection rigs ---------------------------------------------------------------

def ramp_bytes(start: int, end: int, step: int):
    """Byte value advancing by step per call, clamped at end (inclusive)."""
    if not (0 <= start <= 255 and 0 <= end <= 255):
        raise ValueError("ramp endpoints must fit one byte")
    if step == 0:
        raise ValueError("ramp step must be nonzero")
    if (end - start) * step < 0:
        raise ValueError("ramp step points away from its end value")
    counter = {"n": 0}

    def value_fn(now_us: int) -> int:
        value = start + step * counter["n"]
        counter["n"] += 1
        if step > 0:
            return min(value, end)
        return max(value, end)

    return value_fn


@dataclass
class InjectionResult:
    trace: canbus.CanTrace
    dominance: Fraction | None
    injected: int
    deliveries: list[tuple[int, str, float]]
    speed_series: list[tuple[int, float]] = field(default_factory=list)
    final_speed_mph: float = 0.0

    def metrics(self) -> dict:
        out = {
            "injected_frames": self.injected,
            "frames_on_bus": len(self.trace),
            "final_speed_mph": self.final_speed_mph,
        }
        if self.dominance is not None:
            out["dominance"] = {
                "exact": f"{self.dominance.numerator}/{self.dominance.denominator}",
                "value": float(self.dominance),
            }
        if self.speed_series:
            out["speed_first_mph"] = self.speed_series[0][1]
            out["speed_last_mph"] = self.speed_series[-1][1]
        return out


def _rig_loop(bus: canbus.CanBus, rig: VehiclePlant, rx: inj.ThrottleReceiver,
              n_ms: int) -> None:
    for ms in range(1, n_ms + 1):
        bus.step(ms * 1000)
        rig.advance(rx.app_pct, 0.0, 50.0, 1, 0.001)


def run_live_injection(duration_s: float, value_fn, target_id: int = canbus.THROTTLE_ID,
                       byte_index: int = canbus.THROTTLE_BYTE_INDEX,
                       mode: str = "shadow", delay_us: int = 250,
                       schedule: dict[int, int] | None = None,
                       params: PlantParams = DEFAULT_PARAMS) -> InjectionResult:
    """Live broadcasts with an override riding on the throttle command id.

    The rig plant obeys the last 0x11A byte it saw, the driver pedal
    stays released, and the stock modules keep broadcasting, so the
    rig's own speed frames show the override taking physical effect.
    schedule overrides the broadcast periods (microseconds per id).
    """
    if mode not in ("shadow", "tap"):
        raise ValueError(f"mode must be 'shadow' or 'tap', got {mode!r}")
    rig = VehiclePlant(params)
    bus = canbus.CanBus()
    ecus = SimulatedEcus(rig, pedal_fn=lambda: (0.0, 0.0), schedule=schedule)
    ecus.attach(bus)
    rx = inj.ThrottleReceiver(target_id, byte_index)
    bus.add_listener(rx)
    period_us = ecus.schedule.get(target_id)
    injector = None
    if mode == "shadow":
        injector = inj.ShadowInjector(bus, target_id,
                                      inj.byte_override(byte_index, value_fn),
                                      delay_us=delay_us, period_us=period_us)
    else:
        # a tap rewrites at the source, so the forged value must be known
        # per frame; reuse the ramp by sampling it on the genuine schedule
        class _TapRule:
            arb_id = target_id

            def apply(self, frame: canbus.CanFrame) -> canbus.CanFrame:
                if frame.arbitration_id != target_id:
                    return frame
                data = bytearray(frame.data)
                data[byte_index] = value_fn(frame.timestamp_us)
                return canbus.CanFrame(frame.timestamp_us, frame.arbitration_id,
                                       frame.dlc, bytes(data))
        bus.add_tap(_TapRule())

    _rig_loop(bus, rig, rx, round(duration_s * 1000.0))

    trace = bus.trace()
    genuine = [t for t, src, _ in rx.deliveries if src != inj.ShadowInjector.SOURCE]
    dominance = None
    if injector is not None and len(genuine) >= 2:
        dominance = inj.dominance_fraction([(t, s) for t, s, _ in rx.deliveries],
                                           genuine[0], genuine[-1])
    speed_series = [(f.timestamp_us, canbus.decode_speed(f))
                    for f in trace if f.arbitration_id == canbus.SPEED_ID]
    return InjectionResult(trace, dominance, injector.injected if injector else 0,
                           list(rx.deliveries), speed_series, rig.state.speed_mph)


def run_replay_injection(trace: canbus.CanTrace, value_fn,
                         target_id: int = canbus.THROTTLE_ID,
                         byte_index: int = canbus.THROTTLE_BYTE_INDEX,
                         mode: str = "shadow", delay_us: int = 250,
                         settle_s: float = 1.0,
                         params: PlantParams = DEFAULT_PARAMS) -> InjectionResult:
    """Replay a recording into the rig with the override applied.

    Shadow mode forges delayed copies of the replayed target frames; tap
    mode rewrites them up front, as if the tap had been in place when
    the recording was made.
    """
    if mode not in ("shadow", "tap"):
        raise ValueError(f"mode must be 'shadow' or 'tap', got {mode!r}")
    rig = VehiclePlant(params)
    bus = canbus.CanBus()
    rx = inj.ThrottleReceiver(target_id, byte_index)
    bus.add_listener(rx)
    injector = None
    if mode == "shadow":
        target_times = [f.timestamp_us for f in trace if f.arbitration_id == target_id]
        period = None
        if len(target_times) >= 2:
            deltas = sorted(b - a for a, b in zip(target_times, target_times[1:]))
            period = deltas[len(deltas) // 2]
        injector = inj.ShadowInjector(bus, target_id,
                                      inj.byte_override(byte_index, value_fn),
                                      delay_us=delay_us, period_us=period)
        bus.feed_replay(trace, source="replay")
    else:
        rule = _replay_tap(trace, target_id, byte_index, value_fn)
        bus.feed_replay(rule, source="replay")

    last_us = trace.frames[-1].timestamp_us if len(trace) else 0
    _rig_loop(bus, rig, rx, last_us // 1000 + round(settle_s * 1000.0))

    out = bus.trace()
    genuine = [t for t, src, _ in rx.deliveries if src != inj.ShadowInjector.SOURCE]
    dominance = None
    if injector is not None and len(genuine) >= 2:
        dominance = inj.dominance_fraction([(t, s) for t, s, _ in rx.deliveries],
                                           genuine[0], genuine[-1])
    return InjectionResult(out, dominance, injector.injected if injector else 0,
                           list(rx.deliveries), [], rig.state.speed_mph)


def _replay_tap(trace: canbus.CanTrace, target_id: int, byte_index: int, value_fn):
    for f in trace:
        if f.arbitration_id == target_id and byte_index < f.dlc:
            data = bytearray(f.data)
            data[byte_index] = value_fn(f.timestamp_us)
            yield canbus.CanFrame(f.timestamp_us, f.arbitration_id, f.dlc, bytes(data))
        else:
            yield f
