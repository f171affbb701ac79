# cython: language_level=3
"""Compiled vehicle-update kernel.

Expression-for-expression twin of pure.py; see the warning there before
touching any arithmetic.  Compiled with -ffp-contract=off so the C
results round exactly like the interpreted ones.
"""

from libc.math cimport tan, sin, cos


def advance(state, double app_pct, double bpp_pct, double steer_duty,
            Py_ssize_t n, params):
    """Advance the six-element vehicle state by n physics ticks."""
    cdef double speed = state[0]
    cdef double decel = state[1]
    cdef double counts = state[2]
    cdef double heading = state[3]
    cdef double p_n = state[4]
    cdef double p_e = state[5]

    cdef double app_gain = params[0]
    cdef double app_offset = params[1]
    cdef double bpp_quad = params[2]
    cdef double bpp_lin = params[3]
    cdef double bpp_const = params[4]
    cdef double steer_quad = params[5]
    cdef double steer_lin = params[6]
    cdef double steer_const = params[7]
    cdef double steer_duty_lo = params[8]
    cdef double steer_duty_hi = params[9]
    cdef double deadband_lo = params[10]
    cdef double deadband_hi = params[11]
    cdef double brake_active = params[12]
    cdef double alpha_app = params[13]
    cdef double alpha_bpp = params[14]
    cdef double alpha_steer = params[15]
    cdef double decel_to_mph_s = params[16]
    cdef double dt = params[17]
    cdef double counts_per_rad = params[18]
    cdef double steer_ratio = params[19]
    cdef double wheelbase = params[20]
    cdef double mph_to_ms = params[21]

    cdef double k_app = app_gain * app_pct + app_offset
    if k_app < 0.0:
        k_app = 0.0
    cdef double k_bpp = (bpp_quad * bpp_pct) * bpp_pct + bpp_lin * bpp_pct + bpp_const
    cdef bint braking = bpp_pct > brake_active

    cdef double steer_target
    cdef int steer_mode
    cdef double d
    if steer_duty > deadband_hi:
        d = steer_duty
        if d < steer_duty_lo:
            d = steer_duty_lo
        if d > steer_duty_hi:
            d = steer_duty_hi
        steer_target = (steer_quad * d) * d + steer_lin * d + steer_const
        steer_mode = 1
    elif steer_duty < deadband_lo:
        d = 100.0 - steer_duty
        if d < steer_duty_lo:
            d = steer_duty_lo
        if d > steer_duty_hi:
            d = steer_duty_hi
        steer_target = -((steer_quad * d) * d + steer_lin * d + steer_const)
        steer_mode = 1
    else:
        steer_target = 0.0
        steer_mode = 0

    cdef double v_ms, delta
    cdef Py_ssize_t i
    for i in range(n):
        decel = decel + alpha_bpp * (k_bpp - decel)
        if braking:
            speed = speed + decel * decel_to_mph_s * dt
        else:
            speed = speed + alpha_app * (k_app - speed)
        if speed < 0.0:
            speed = 0.0
        if steer_mode:
            counts = counts + alpha_steer * (steer_target - counts)
        v_ms = speed * mph_to_ms
        delta = counts / counts_per_rad / steer_ratio
        heading = heading + v_ms / wheelbase * tan(delta) * dt
        p_n = p_n + v_ms * cos(heading) * dt
        p_e = p_e + v_ms * sin(heading) * dt

    return (speed, decel, counts, heading, p_n, p_e)
