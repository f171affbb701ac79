"""Throughput comparison between the compiled and pure vehicle kernels.

Runs the same mixed-maneuver workload through both ``advance``
implementations and reports ticks per second plus the speedup ratio.
The workload alternates accelerate / brake / steer phases so every
branch in the kernel stays warm, and results are cross-checked for
bit-identical final states before any numbers are printed.

Usage:
    python3 benchmarks/bench_kernels.py [--ticks N] [--repeats K]
"""

import argparse
import time

from evsim._kernels import pure
from evsim.plant import DEFAULT_PARAMS, VehiclePlant

# (app_pct, bpp_pct, steer_duty) held for one span each, cycled
PHASES = [
    (40.0, 0.0, 50.0),   # straight acceleration
    (60.0, 0.0, 60.0),   # accelerating right turn
    (0.0, 30.0, 50.0),   # braking straight
    (15.0, 0.0, 42.0),   # gentle left turn
    (0.0, 0.0, 50.0),    # coast
]


def _params(dt):
    return VehiclePlant(DEFAULT_PARAMS)._kernel_params(dt)


def run_workload(advance, ticks, span, dt):
    params = _params(dt)
    state = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    done = 0
    phase = 0
    while done < ticks:
        n = min(span, ticks - done)
        app, bpp, duty = PHASES[phase % len(PHASES)]
        state = advance(state, app, bpp, duty, n, params)
        done += n
        phase += 1
    return state


def best_time(advance, ticks, span, dt, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        run_workload(advance, ticks, span, dt)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--ticks", type=int, default=2_000_000,
                    help="physics ticks per timed run")
    ap.add_argument("--span", type=int, default=1000,
                    help="ticks per advance() call (1000 = one control period batch)")
    ap.add_argument("--dt", type=float, default=0.001, help="tick length, seconds")
    ap.add_argument("--repeats", type=int, default=3, help="timed runs, best kept")
    args = ap.parse_args()

    try:
        from evsim._kernels import _speedups as compiled
    except ImportError:
        compiled = None

    ref = run_workload(pure.advance, 10_000, args.span, args.dt)
    if compiled is not None:
        got = run_workload(compiled.advance, 10_000, args.span, args.dt)
        if got != ref:
            raise SystemExit(f"backends disagree: pure={ref} compiled={got}")
        print("cross-check: final states bit-identical over 10000 ticks")
    else:
        print("compiled extension not built; timing the pure kernel only")

    t_pure = best_time(pure.advance, args.ticks, args.span, args.dt, args.repeats)
    print(f"pure:     {args.ticks / t_pure:12.0f} ticks/s  "
          f"({t_pure * 1e3:7.1f} ms for {args.ticks} ticks)")

    if compiled is not None:
        t_comp = best_time(compiled.advance, args.ticks, args.span, args.dt,
                           args.repeats)
        print(f"compiled: {args.ticks / t_comp:12.0f} ticks/s  "
              f"({t_comp * 1e3:7.1f} ms for {args.ticks} ticks)")
        print(f"speedup:  {t_pure / t_comp:.1f}x")


if __name__ == "__main__":
    main()
