"""Circuit-level emulator of the stochastic processing unit.

Single array: Kirchhoff's current law at the integrator nodes gives

    C dV/dt = -G V + R^-1 V_in + I_noise,   G[i, j] = 1 / R[j, i].

The TNGD device composes three arrays holding J (b*d_z x N), H_L
(b*d_z x b*d_z) and J^T (N x b*d_z). Only the last one feeds capacitors;
the other two act as instantaneous linear maps, so the node voltages obey

    dV = -(J^T H_L J + lambda I) V dt + g dt + N(0, 2 kappa0 dt)

with time in units of RC. Signed matrix entries are handled abstractly
(no differential-pair modelling), and op-amps are ideal integrators.

Quantization is a uniform quantizer with step 2*FS / 2**bits, codes
-2**(bits-1) .. 2**(bits-1) - 1, so zero is a code and the error inside
the range is at most FS / 2**bits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFinite, Overflow
from .thermo_solver import DampedLowRankSystem, n_steps_for


@dataclass
class ResistorArray:
    resistances: np.ndarray  # R[i, j], shape (n_out, n_in)
    input_resistances: np.ndarray
    capacitances: np.ndarray

    def __post_init__(self):
        self.resistances = np.asarray(self.resistances, dtype=np.float64)
        self.input_resistances = np.asarray(self.input_resistances, dtype=np.float64)
        self.capacitances = np.asarray(self.capacitances, dtype=np.float64)
        for name in ("resistances", "input_resistances", "capacitances"):
            v = getattr(self, name)
            if not (np.all(np.isfinite(v)) and np.all(v > 0)):
                raise ValueError(f"{name} must be finite and strictly positive")
        n = self.resistances.shape[0]
        if self.resistances.shape != (n, n) or self.input_resistances.shape != (n,) or self.capacitances.shape != (n,):
            raise DimensionMismatch("a single array needs an n x n resistor grid and n input resistors and capacitors")

    @property
    def conductance(self):
        return 1.0 / self.resistances.T


@dataclass
class CircuitConfig:
    dac_bits: int = 16
    adc_bits: int = 16
    resistor_bits: int = 16
    transfer_rate_bits_per_sec: float = 50e9
    rc_seconds: float = 1e-6
    noise_variance: float = 0.0
    voltage_full_scale: float = 1.0
    step_size: float = 0.1
    window_fraction: float = 0.1

    def __post_init__(self):
        if min(self.dac_bits, self.adc_bits, self.resistor_bits) < 1:
            raise ValueError("bit depths must be at least 1")
        if self.rc_seconds <= 0 or self.voltage_full_scale <= 0:
            raise ValueError("RC and full scale must be positive")


def quantize(values, bits, full_scale):
    """Round to the nearest code of a ``bits``-bit converter over +-full_scale (saturating)."""
    step = 2.0 * full_scale / 2**bits
    codes = np.clip(np.rint(np.asarray(values, dtype=np.float64) / step), -(2 ** (bits - 1)), 2 ** (bits - 1) - 1)
    return codes * step


def top_code(bits, full_scale):
    return full_scale - 2.0 * full_scale / 2**bits


def conductance_dynamics_step(v, array, v_in, dt, kappa0, rng=None):
    """Euler-Maruyama step of one array; noise current variance 2 kappa0."""
    v = np.asarray(v, dtype=np.float64)
    v_in = np.asarray(v_in, dtype=np.float64)
    n = array.resistances.shape[0]
    if v.shape != (n,) or v_in.shape != (n,):
        raise DimensionMismatch(f"voltages must have length {n}")
    current = -array.conductance @ v + v_in / array.input_resistances
    out = v + dt * current / array.capacitances
    if kappa0 > 0:
        out = out + math.sqrt(2.0 * kappa0 * dt) * rng.normal(n) / array.capacitances
    if not np.all(np.isfinite(out)):
        raise NonFinite("node voltages diverged")
    return out


@dataclass
class SpuProgram:
    """Quantized device settings plus the scale factors to undo them.

    ``jacobian``/``loss_hessian``/``damping``/``v_in`` hold quantized values
    already divided by their scale, i.e. the operators the hardware realizes.
    """

    jacobian: np.ndarray
    loss_hessian: np.ndarray
    damping: float
    v_in: np.ndarray
    scales: dict

    def __post_init__(self):
        m, n = self.jacobian.shape
        if self.loss_hessian.shape != (m, m) or self.v_in.shape != (n,):
            raise DimensionMismatch("inconsistent SPU array shapes")

    @property
    def array_shapes(self):
        m, n = self.jacobian.shape
        return [(m, n), (m, m), (n, m)]

    @property
    def resistor_count(self):
        m, n = self.jacobian.shape
        return m * (m + 2 * n)

    @property
    def n(self):
        return self.jacobian.shape[1]

    @property
    def rank_dim(self):
        return self.jacobian.shape[0]

    @property
    def rhs(self):
        return self.v_in

    def matvec(self, x):
        # array 1 then array 2 then array 3, summed at the capacitor nodes with the damping resistors
        out = self.damping * x
        if self.rank_dim:
            out = out + self.jacobian.T @ (self.loss_hessian @ (self.jacobian @ x))
        return out

    def as_system(self):
        return DampedLowRankSystem(self.jacobian, self.loss_hessian, self.damping, self.v_in)


def _auto_scale(values, bits, full_scale):
    peak = float(np.max(np.abs(values), initial=0.0))
    return 1.0 if peak == 0 else top_code(bits, full_scale) / peak


def _program_values(values, bits, full_scale, scale):
    scaled = np.asarray(values, dtype=np.float64) * scale
    if np.any(np.abs(scaled) > full_scale):
        raise Overflow(f"value {np.max(np.abs(scaled)):.4g} exceeds full scale {full_scale:g}; rescale")
    return quantize(scaled, bits, full_scale) / scale


def program_spu(system, config, scales=None):
    """Quantize ``system`` onto the device.

    Each operand is scaled so its largest magnitude lands on the top
    converter code unless ``scales`` gives explicit factors for any of
    ``jacobian``, ``loss_hessian``, ``damping``, ``rhs``.
    """
    scales = dict(scales or {})
    fs = config.voltage_full_scale
    rb, db = config.resistor_bits, config.dac_bits
    operands = {
        "jacobian": (system.jacobian, rb),
        "loss_hessian": (system.loss_hessian, rb),
        "damping": (np.array([system.damping]), rb),
        "rhs": (system.rhs, db),
    }
    out = {}
    for name, (values, bits) in operands.items():
        scales.setdefault(name, _auto_scale(values, bits, fs))
        out[name] = _program_values(values, bits, fs, scales[name])
    h = 0.5 * (out["loss_hessian"] + out["loss_hessian"].T)
    return SpuProgram(out["jacobian"], h, float(out["damping"][0]), out["rhs"], scales)


def run_spu(program, config, duration, rng=None, x0=None, return_raw=False):
    """Let the device evolve for ``duration`` (units of RC) and read it out.

    Returns ``(v_out, elapsed_seconds)``. ``v_out`` is the trailing-window
    average after an auto-ranging ADC: the readout gain puts the largest
    magnitude on the top code. ``return_raw`` adds the pre-ADC average, the
    final node voltages and the ADC step in solution units.
    """
    n = program.n
    v = np.array(program.v_in if x0 is None else x0, dtype=np.float64)
    dt = config.step_size
    steps = n_steps_for(duration, dt)
    window = max(1, int(math.ceil(config.window_fraction * steps))) if steps else 0
    acc = np.zeros(n)
    sigma = math.sqrt(2.0 * config.noise_variance * dt) if config.noise_variance > 0 else 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(steps):
            v = v - dt * (program.matvec(v) - program.v_in)
            if sigma:
                v = v + sigma * rng.normal(n)
            if i >= steps - window:
                acc += v
    if not (np.all(np.isfinite(v)) and np.all(np.isfinite(acc))):
        raise NonFinite("node voltages diverged; reduce the step size")
    avg = acc / window if steps else v.copy()
    fs = config.voltage_full_scale
    gain = _auto_scale(avg, config.adc_bits, fs)
    v_out = quantize(avg * gain, config.adc_bits, fs) / gain
    elapsed = steps * dt * config.rc_seconds
    if return_raw:
        return v_out, elapsed, avg, v, 2.0 * fs / 2**config.adc_bits / gain
    return v_out, elapsed
