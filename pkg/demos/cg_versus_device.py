"""
Truncated CG and the relaxing device on an ill-conditioned system
=================================================================

CG's residual can climb far above where it started before it falls, so
stopping early may leave a worse residual than doing nothing. The
device's mean relaxes monotonically toward the solution.
"""

import numpy as np

from tngd.numerics import RngStream
from tngd.second_order import solve_cg
from tngd.thermo_solver import DampedLowRankSystem, OuState, ou_step

n = 48
i = np.arange(1, n + 1)
d = 1e-10 + (i - 1) / (n - 1) * (1 - 1e-10) * 0.9 ** (n - i)
system = DampedLowRankSystem(np.diag(np.sqrt(d / 2)), np.eye(n), d[0] / 2, np.ones(n))
x_star = np.ones(n) / d

iterates = solve_cg(system, 2 * n, return_iterates=True).iterates
res = [np.linalg.norm(system.matvec(x) - system.rhs) for x in iterates]
err = [np.linalg.norm(x - x_star) for x in iterates]
print(f"CG residual: start {res[0]:.2e}, peak {max(res):.2e} at k = {int(np.argmax(res))}")
print(f"CG error:    start {err[0]:.3e}, smallest {min(err):.3e}, largest after start {max(err[1:]):.3e}")

state = OuState(np.zeros(n), RngStream(0))
errs = []
for _ in range(5000):
    state = ou_step(state, system, 1.0, 0.0)
    errs.append(np.linalg.norm(state.x - x_star))
print("device error never increases:", bool(np.all(np.diff(errs) <= 0)))
