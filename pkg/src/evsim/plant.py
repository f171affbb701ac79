"""Vehicle plant: first-order actuator channels, pose, sensors, stock ECUs.

Each actuated channel was identified as a first-order lag toward a
steady-state map K of the command:

  accelerator  K(app%)  = 3.65*app - 9.7        [mph]   tau = 7 s
  brake        K(bpp%)  = -0.0018*bpp^2 + 0.029*bpp - 0.3768  tau = 0.3 s
  steering     K(duty%) = 59.4*d^2 - 6802.7*d + 195084.5 [counts] tau = 0.2 s

The accelerator map clamps at zero (settle speed cannot be negative); the
brake map is a deceleration, independent of current speed; the steering
map is the fit above the torque deadband, valid from its vertex
(duty ~57.26) to 64, and the plant mirrors it for duties below the
deadband since the two PWM torque signals are complementary.  Commanded
duty inside the deadband [45, 55] holds the current angle.

State integrates on a fixed physics tick with the exact discretization
x += (1 - exp(-dt/tau)) * (K(u) - x), so constant-input trajectories
match the analytic exponential to rounding error at any tick size.

Pose is a kinematic bicycle: road-wheel angle = counts / counts_per_rad
/ steer_ratio, heading rate = v * tan(delta) / wheelbase.  The counts
scale defaults to 2000 counts per half-turn of the steering wheel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, asdict, replace
from typing import Callable

from . import canbus
from . import _kernels

log = logging.getLogger(__name__)

MPH_TO_MPS = 0.44704
MPS_TO_MPH = 1.0 / MPH_TO_MPS


class OutOfDomainError(ValueError):
    """Input outside the identified curve's valid region."""


class OutOfRangeError(ValueError):
    """Sensor input outside its physical range."""


@dataclass(frozen=True)
class PoseParams:
    wheelbase_m: float = 2.7
    steer_ratio: float = 15.0
    counts_per_rad: float = 2000.0 / math.pi


@dataclass(frozen=True)
class PlantParams:
    """Calibration constants; defaults are the identified test-vehicle values."""

    app_gain: float = 3.65
    app_offset: float = -9.7
    app_tau_s: float = 7.0

    bpp_quad: float = -0.0018
    bpp_lin: float = 0.029
    bpp_const: float = -0.3768
    bpp_tau_s: float = 0.3

    steer_quad: float = 59.4
    steer_lin: float = -6802.7
    steer_const: float = 195084.5
    steer_tau_s: float = 0.2
    steer_duty_max: float = 64.0

    deadband_lo: float = 45.0
    deadband_hi: float = 55.0
    brake_active_pct: float = 1.0
    decel_units: str = "mps2"  # "mps2" or "mph_s"

    pose: PoseParams = field(default_factory=PoseParams)

    def __post_init__(self):
        if self.decel_units not in ("mps2", "mph_s"):
            raise ValueError(f"decel_units must be 'mps2' or 'mph_s', got {self.decel_units!r}")

    @property
    def steer_duty_min(self) -> float:
        """Vertex of the steering curve; below it the fit is not monotone."""
        return -self.steer_lin / (2.0 * self.steer_quad)

    @property
    def decel_to_mph_s(self) -> float:
        return MPS_TO_MPH if self.decel_units == "mps2" else 1.0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, raw: dict) -> "PlantParams":
        raw = dict(raw)
        pose = raw.pop("pose", None)
        params = cls(**raw) if not pose else cls(**raw, pose=PoseParams(**pose))
        return params


DEFAULT_PARAMS = PlantParams()


@dataclass
class VehicleState:
    speed_mph: float = 0.0
    decel: float = 0.0
    steer_counts: float = 0.0
    heading_rad: float = 0.0
    p_n: float = 0.0
    p_e: float = 0.0

    @classmethod
    def at_rest(cls, params: PlantParams = DEFAULT_PARAMS) -> "VehicleState":
        """Rest state: pedals released long enough for the channels to settle."""
        return cls(decel=bpp_k(0.0, params))

    def as_tuple(self) -> tuple:
        return (self.speed_mph, self.decel, self.steer_counts,
                self.heading_rad, self.p_n, self.p_e)


# --- steady-state maps -------------------------------------------------------

def app_k(app_pct: float, params: PlantParams = DEFAULT_PARAMS) -> float:
    """Settle speed in mph for a held accelerator position, clamped at 0."""
    v = params.app_gain * app_pct + params.app_offset
    return v if v > 0.0 else 0.0


def bpp_k(bpp_pct: float, params: PlantParams = DEFAULT_PARAMS) -> float:
    """Settle deceleration for a held brake position (speed-independent)."""
    return (params.bpp_quad * bpp_pct) * bpp_pct + params.bpp_lin * bpp_pct + params.bpp_const


def steer_k(duty_pct: float, params: PlantParams = DEFAULT_PARAMS) -> float:
    """Settle steering angle in counts for a held torque duty.

    Valid only on the monotone branch of the identified curve, from the
    vertex (~57.26%) to the calibration maximum.
    """
    lo = params.steer_duty_min
    if not lo <= duty_pct <= params.steer_duty_max:
        raise OutOfDomainError(
            f"steer duty {duty_pct} outside identified branch [{lo:.4f}, {params.steer_duty_max}]")
    return (params.steer_quad * duty_pct) * duty_pct + params.steer_lin * duty_pct + params.steer_const


class FirstOrderChannel:
    """One first-order lag x -> K(u) with exact per-step discretization.

    Deliberately plain: this is the reference the fused kernel is checked
    against in the tests.
    """

    def __init__(self, k_map: Callable[[float], float], tau_s: float, state: float = 0.0):
        if tau_s <= 0:
            raise ValueError("tau must be positive")
        self.k_map = k_map
        self.tau_s = tau_s
        self.state = state

    def step(self, u: float, dt: float) -> float:
        alpha = -math.expm1(-dt / self.tau_s)
        self.state = self.state + alpha * (self.k_map(u) - self.state)
        return self.state


# --- integrated plant ---------------------------------------------------------

class VehiclePlant:
    """Holds calibration + state and advances them on the physics tick.

    The per-tick arithmetic lives in the kernel backend (compiled when
    available); dynamics_step/pose_step expose the two halves separately
    for callers that want them, built on the same kernel so the split and
    fused paths cannot drift apart.
    """

    def __init__(self, params: PlantParams = DEFAULT_PARAMS,
                 state: VehicleState | None = None):
        self.params = params
        self.state = state if state is not None else VehicleState.at_rest(params)
        self.last_inputs = (0.0, 0.0, 50.0)
        self._alpha_cache: dict[float, tuple] = {}

    def reset(self, state: VehicleState | None = None) -> None:
        self.state = state if state is not None else VehicleState.at_rest(self.params)
        self.last_inputs = (0.0, 0.0, 50.0)

    def _kernel_params(self, dt: float) -> tuple:
        cached = self._alpha_cache.get(dt)
        if cached is not None:
            return cached
        p = self.params
        packed = (
            p.app_gain, p.app_offset,
            p.bpp_quad, p.bpp_lin, p.bpp_const,
            p.steer_quad, p.steer_lin, p.steer_const,
            p.steer_duty_min, p.steer_duty_max,
            p.deadband_lo, p.deadband_hi,
            p.brake_active_pct,
            -math.expm1(-dt / p.app_tau_s),
            -math.expm1(-dt / p.bpp_tau_s),
            -math.expm1(-dt / p.steer_tau_s),
            p.decel_to_mph_s,
            dt,
            p.pose.counts_per_rad, p.pose.steer_ratio, p.pose.wheelbase_m,
            MPH_TO_MPS,
        )
        self._alpha_cache[dt] = packed
        return packed

    def _clamped_inputs(self, app_pct: float, bpp_pct: float, steer_duty: float) -> tuple:
        clamped = []
        for name, value in (("app_pct", app_pct), ("bpp_pct", bpp_pct),
                            ("steer_duty", steer_duty)):
            if not 0.0 <= value <= 100.0:
                fixed = min(100.0, max(0.0, value))
                log.warning("%s=%g outside [0, 100], clamped to %g", name, value, fixed)
                value = fixed
            clamped.append(value)
        return tuple(clamped)

    def advance(self, app_pct: float, bpp_pct: float, steer_duty: float,
                n_ticks: int, dt: float) -> VehicleState:
        """Advance n physics ticks with held inputs (the hot path)."""
        app_pct, bpp_pct, steer_duty = self._clamped_inputs(app_pct, bpp_pct, steer_duty)
        out = _kernels.advance(self.state.as_tuple(), app_pct, bpp_pct, steer_duty,
                               n_ticks, self._kernel_params(dt))
        self.state = VehicleState(*out)
        self.last_inputs = (app_pct, bpp_pct, steer_duty)
        return self.state

    def step(self, app_pct: float, bpp_pct: float, steer_duty: float,
             dt: float) -> VehicleState:
        """Single full tick: actuator dynamics then pose."""
        return self.advance(app_pct, bpp_pct, steer_duty, 1, dt)

    def dynamics_step(self, app_pct: float, bpp_pct: float, steer_duty: float,
                      dt: float) -> VehicleState:
        """Actuator channels only; position and heading stay put."""
        pose = (self.state.heading_rad, self.state.p_n, self.state.p_e)
        self.step(app_pct, bpp_pct, steer_duty, dt)
        self.state.heading_rad, self.state.p_n, self.state.p_e = pose
        return self.state

    def pose_step(self, dt: float) -> VehicleState:
        """Pose only, using current speed and steering angle."""
        p = self.params.pose
        v_ms = self.state.speed_mph * MPH_TO_MPS
        delta = self.state.steer_counts / p.counts_per_rad / p.steer_ratio
        self.state.heading_rad = self.state.heading_rad + v_ms / p.wheelbase_m * math.tan(delta) * dt
        self.state.p_n = self.state.p_n + v_ms * math.cos(self.state.heading_rad) * dt
        self.state.p_e = self.state.p_e + v_ms * math.sin(self.state.heading_rad) * dt
        return self.state


# --- pedal and steering sensors ----------------------------------------------

@dataclass(frozen=True)
class SensorCalibration:
    """Emulated sensor spans; rest values match the unpressed pedals."""

    app_v2_rest: float = 0.4
    app_v2_full: float = 2.0
    bpp_duty_rest: float = 89.0
    bpp_duty_slope: float = 0.7
    bpp_freq1_hz: float = 533.0
    bpp_freq2_hz: float = 482.0
    steer_freq_hz: float = 2150.0


DEFAULT_SENSORS = SensorCalibration()


@dataclass(frozen=True)
class SensorSignals:
    """Electrical picture the stock modules see for one command set."""

    app_v1: float
    app_v2: float
    bpp_duty1: float
    bpp_duty2: float
    steer_duty1: float
    steer_duty2: float
    bpp_freq1_hz: float
    bpp_freq2_hz: float
    steer_freq_hz: float


def sensors_from_inputs(app_pct: float, bpp_pct: float, steer_duty: float,
                        calib: SensorCalibration = DEFAULT_SENSORS) -> SensorSignals:
    """Emulated sensor outputs for a command set.

    The accelerator is two DC voltages with channel 1 exactly twice
    channel 2; the brake is a complementary PWM pair resting at 89/11;
    steering torque is a complementary PWM pair resting at 50/50.  Both
    duty pairs sum to exactly 100 by construction.
    """
    for name, value in (("app_pct", app_pct), ("bpp_pct", bpp_pct),
                        ("steer_duty", steer_duty)):
        if not 0.0 <= value <= 100.0:
            raise OutOfRangeError(f"{name}={value} outside [0, 100]")
    v2 = calib.app_v2_rest + app_pct / 100.0 * (calib.app_v2_full - calib.app_v2_rest)
    bpp_duty1 = calib.bpp_duty_rest - calib.bpp_duty_slope * bpp_pct
    return SensorSignals(
        app_v1=2.0 * v2,
        app_v2=v2,
        bpp_duty1=bpp_duty1,
        bpp_duty2=100.0 - bpp_duty1,
        steer_duty1=steer_duty,
        steer_duty2=100.0 - steer_duty,
        bpp_freq1_hz=calib.bpp_freq1_hz,
        bpp_freq2_hz=calib.bpp_freq2_hz,
        steer_freq_hz=calib.steer_freq_hz,
    )


# --- stock ECU broadcasts ------------------------------------------------------

def _pct_byte(pct: float) -> int:
    return max(0, min(255, round(pct * canbus.PCT_TO_BYTE)))


class SimulatedEcus:
    """Payload builders for the periodic broadcasts of the stock modules.

    The throttle command frame carries the driver pedal position, not the
    value the drive module ends up applying, so injected traffic never
    echoes back into the genuine broadcast.
    """

    def __init__(self, plant: VehiclePlant,
                 pedal_fn: Callable[[], tuple[float, float]] | None = None,
                 schedule: dict[int, int] | None = None):
        self.plant = plant
        self.pedal_fn = pedal_fn or (lambda: (plant.last_inputs[0], plant.last_inputs[1]))
        self.schedule = dict(schedule) if schedule is not None else dict(canbus.DEFAULT_SCHEDULE)

    # payload builders (now_us argument keeps the bus source signature)

    def speed_payload(self, now_us: int) -> bytes:
        return encode_speed_payload(self.plant.state.speed_mph)

    def steering_payload(self, now_us: int) -> bytes:
        counts = round(self.plant.state.steer_counts)
        counts = max(-32768, min(32767, counts))
        return (counts & 0xFFFF).to_bytes(2, "big") + bytes(6)

    def app_payload(self, now_us: int) -> bytes:
        return bytes([_pct_byte(self.pedal_fn()[0])]) + bytes(7)

    def bpp_payload(self, now_us: int) -> bytes:
        return bytes([_pct_byte(self.pedal_fn()[1])]) + bytes(7)

    def throttle_payload(self, now_us: int) -> bytes:
        data = bytearray(8)
        data[canbus.THROTTLE_BYTE_INDEX] = _pct_byte(self.pedal_fn()[0])
        return bytes(data)

    def payload_fns(self) -> dict[int, Callable[[int], bytes]]:
        return {
            canbus.SPEED_ID: self.speed_payload,
            canbus.STEERING_ID: self.steering_payload,
            canbus.APP_ID: self.app_payload,
            canbus.BPP_ID: self.bpp_payload,
            canbus.THROTTLE_ID: self.throttle_payload,
        }

    def attach(self, bus: canbus.CanBus) -> None:
        fns = self.payload_fns()
        for arb_id, period in self.schedule.items():
            bus.add_periodic(arb_id, period, fns[arb_id], source="ecu")

    def publish_due(self, now_us: int) -> list[canbus.CanFrame]:
        """Frames whose period divides now_us (none at t=0)."""
        frames = []
        fns = self.payload_fns()
        for arb_id, period in self.schedule.items():
            if now_us > 0 and now_us % period == 0:
                payload = fns[arb_id](now_us)
                frames.append(canbus.CanFrame(now_us, arb_id, len(payload), payload))
        frames.sort(key=lambda f: f.arbitration_id)
        return frames


def encode_speed_payload(speed_mph: float) -> bytes:
    return canbus.encode_speed(speed_mph).data


def decode_throttle_byte(raw: int) -> float:
    """Invert the percent scaling of the throttle command byte."""
    return raw / canbus.PCT_TO_BYTE
