"""Per-iteration runtime and memory model for the optimizers.

Digital work is an operation count from the asymptotic complexity of each
optimizer times a per-kernel coefficient (seconds per op, optionally with
an exponent fitted by :func:`calibrate`). TNGD adds the transfer of the
resistor and vector values to and from the device and the analog
evolution time t * RC as separate summands.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData

KINDS = ("sgd", "adam", "ngd", "ngd-cg", "ngd-woodbury", "tngd")
BYTES_PER_FLOAT = 8


@dataclass
class KernelFit:
    coefficient: float
    exponent: float = 1.0
    residual: float = 0.0

    def seconds(self, ops):
        return self.coefficient * float(ops) ** self.exponent


@dataclass
class HardwareAssumptions:
    bits_per_value: int = 16
    transfer_rate_bits_per_sec: float = 50e9
    rc_seconds: float = 1e-6
    seconds_per_op: float = 1e-11
    kernels: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.bits_per_value <= 0 or self.transfer_rate_bits_per_sec <= 0:
            raise ValueError("transfer parameters must be positive")
        if self.rc_seconds <= 0 or self.seconds_per_op <= 0:
            raise ValueError("time constants must be positive")

    def kernel_seconds(self, kind, ops):
        fit = self.kernels.get(kind)
        if fit is None:
            return self.seconds_per_op * float(ops)
        return fit.seconds(ops)

    def transfer_seconds(self, n_values):
        return float(n_values) * self.bits_per_value / self.transfer_rate_bits_per_sec


@dataclass
class TimingEstimate:
    build_seconds: float
    transfer_seconds: float = 0.0
    analog_seconds: float = 0.0
    memory_bytes: float = 0.0

    @property
    def total_seconds(self):
        return self.build_seconds + self.transfer_seconds + self.analog_seconds


def operation_count(kind, n, b, d_z, c=200):
    """Digital operation count per iteration, leading terms only."""
    bd = b * d_z
    if kind in ("sgd", "adam"):
        return b * n
    if kind == "ngd":
        return n**3 + bd * n**2
    if kind == "ngd-cg":
        return c * b * n
    if kind == "ngd-woodbury":
        return bd**2 * n + bd**3
    if kind == "tngd":
        return bd * n
    raise ValueError(f"unknown optimizer kind {kind!r}")


def memory_values(kind, n, b, d_z):
    bd = b * d_z
    if kind in ("sgd", "adam", "ngd-cg"):
        return n
    if kind == "ngd":
        return n**2
    if kind in ("ngd-woodbury", "tngd"):
        return bd * n + bd**2
    raise ValueError(f"unknown optimizer kind {kind!r}")


def tngd_transfer_values(n, b, d_z):
    """Resistor settings b*d_z*(b*d_z + 2N), the N gradient inputs and the N readouts."""
    bd = b * d_z
    return bd * (bd + 2 * n) + 2 * n


def estimate_iteration(kind, n, b, d_z, c=200, t=0.0, hw=None):
    if min(n, b, d_z) <= 0:
        raise ValueError("dimensions must be positive")
    hw = hw or HardwareAssumptions()
    build = hw.kernel_seconds(kind, operation_count(kind, n, b, d_z, c))
    mem = memory_values(kind, n, b, d_z) * BYTES_PER_FLOAT
    if kind != "tngd":
        return TimingEstimate(build, memory_bytes=mem)
    return TimingEstimate(
        build,
        transfer_seconds=hw.transfer_seconds(tngd_transfer_values(n, b, d_z)),
        analog_seconds=t * hw.rc_seconds,
        memory_bytes=mem,
    )


def fit_power_law(sizes, seconds):
    """Least-squares fit of log(seconds) = log(coef) + exponent * log(size)."""
    sizes = np.asarray(sizes, dtype=np.float64)
    seconds = np.asarray(seconds, dtype=np.float64)
    if sizes.size < 3 or sizes.shape != seconds.shape:
        raise InsufficientData("need at least three (size, seconds) pairs")
    if np.any(sizes <= 0) or np.any(seconds <= 0):
        raise ValueError("sizes and timings must be positive")
    x, y = np.log(sizes), np.log(seconds)
    design = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = float(np.sqrt(np.mean((design @ coef - y) ** 2)))
    return KernelFit(float(np.exp(coef[0])), float(coef[1]), resid)


def calibrate(measurements, base=None):
    """Fit per-kernel cost laws from ``{kind: [(ops, seconds), ...]}``."""
    base = base or HardwareAssumptions()
    kernels = dict(base.kernels)
    for kind, pairs in measurements.items():
        if len(pairs) < 3:
            raise InsufficientData(f"kernel {kind!r} has {len(pairs)} measurements, need 3")
        ops, secs = zip(*pairs)
        kernels[kind] = fit_power_law(ops, secs)
    return HardwareAssumptions(
        base.bits_per_value, base.transfer_rate_bits_per_sec, base.rc_seconds, base.seconds_per_op, kernels
    )


def loglog_slope(xs, ys):
    return fit_power_law(xs, ys).exponent
