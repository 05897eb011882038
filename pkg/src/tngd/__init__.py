"""Thermodynamic natural gradient descent, simulated.

Natural-gradient training where the damped curvature system is solved by
an Ornstein-Uhlenbeck process, next to exact, CG and Woodbury baselines,
a circuit-level device emulator and a runtime cost model.
"""

__version__ = "0.1.0"
