"""Deterministic software testbed for a CAN-actuated electric vehicle.

The package simulates the control stack of a drive-by-wire conversion:
a CAN bus with periodic broadcast traffic, first-order pedal/steering
plant models identified from step tests, message injection at a module
tap point or at the diagnostic port, PI speed and steering loops with
deadband compensation, a differential-flatness path follower, and the
fixed-point serial link that carries actuation commands.

Everything is reproducible: given the same scenario file, two runs
produce byte-identical logs.
"""

__version__ = "0.1.0"
