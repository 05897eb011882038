"""
Programming the resistor arrays
===============================

A damped curvature system is quantized onto three resistor arrays, the
node voltages relax, and an ADC reads the result. The answer is compared
with a float64 solve.
"""

import numpy as np

from tngd.circuit import CircuitConfig, program_spu, run_spu
from tngd.numerics import RngStream, cholesky_solve
from tngd.thermo_solver import DampedLowRankSystem

rng = np.random.default_rng(0)
n, m = 10, 4
j = rng.standard_normal((m, n)) / np.sqrt(n)
h = np.eye(m)
system = DampedLowRankSystem(j, h, 0.3, rng.standard_normal(n))
exact = cholesky_solve(system.dense(), system.rhs)

for bits in (4, 8, 12, 16):
    cfg = CircuitConfig(dac_bits=bits, adc_bits=bits, resistor_bits=bits)
    program = program_spu(system, cfg)
    v_out, seconds = run_spu(program, cfg, duration=100.0)
    err = np.linalg.norm(v_out - exact) / np.linalg.norm(exact)
    print(f"{bits:>2} bits: {program.resistor_count} resistors, relative error {err:.1e}, "
          f"{seconds * 1e6:.0f} us of analog time")

# thermal noise only blurs the readout; averaging the trailing window recovers the mean
noisy = CircuitConfig(noise_variance=1e-3)
v_out, _ = run_spu(program_spu(system, noisy), noisy, 100.0, rng=RngStream(1))
print(f"with kappa0 = 1e-3: relative error {np.linalg.norm(v_out - exact) / np.linalg.norm(exact):.1e}")
