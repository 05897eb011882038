"""Backends for the damped natural-gradient system (G + lambda I) x = grad.

Every backend returns a :class:`SolveReport`. ``model_calls`` follows the
model-call accounting of the standard complexity table: building the
Jacobian costs b*d_z calls, each GGN-vector product costs two (one JVP, one
VJP), so c CG iterations cost 2c.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import thermo_solver
from .errors import BreakdownDetected, SingularInner, TooLarge
from .numerics import cholesky_solve
from .thermo_solver import OuState, TlsConfig

SOLVER_KINDS = ("exact", "cg", "woodbury", "thermodynamic")
MAX_DENSE_N = 5000
DEFAULT_RC_SECONDS = 1e-6


@dataclass
class SolverChoice:
    kind: str = "thermodynamic"
    cg_iterations: int = 200
    tls: TlsConfig = field(default_factory=TlsConfig)

    def __post_init__(self):
        if self.kind not in SOLVER_KINDS:
            raise ValueError(f"unknown solver kind {self.kind!r}")
        if self.cg_iterations < 1:
            raise ValueError("cg_iterations must be at least 1")


@dataclass
class SolveReport:
    solution: np.ndarray
    residual_norm: float
    model_calls: int
    wall_seconds_digital: float = 0.0
    analog_seconds_estimated: float = 0.0
    iterates: list | None = None


def _residual(system, x):
    return float(np.linalg.norm(system.matvec(x) - system.rhs))


def solve_exact(system):
    """Form G + lambda I explicitly and solve by Cholesky."""
    if system.n > MAX_DENSE_N:
        raise TooLarge(f"N={system.n} is too large for an explicit solve")
    start = time.perf_counter()
    x = cholesky_solve(system.dense(), system.rhs)
    wall = time.perf_counter() - start
    return SolveReport(x, _residual(system, x), system.model_calls, wall)


def solve_cg(system, c, x0=None, return_iterates=False):
    """Plain conjugate gradient, exactly ``c`` iterations, no early exit.

    ``system`` only needs ``matvec``/``rhs``/``n``; the matrix-free
    :class:`tngd.curvature.GGNOperator` is the intended input.
    """
    if c < 1:
        raise ValueError("c must be at least 1")
    start = time.perf_counter()
    g = system.rhs
    products = 0
    if x0 is None:
        x = np.zeros_like(g)
        r = g.copy()
    else:
        x = np.array(x0, dtype=np.float64)
        r = g - system.matvec(x)
        products += 1
    p = r.copy()
    rs = float(r @ r)
    iterates = [x.copy()] if return_iterates else None
    for _ in range(c):
        if rs == 0.0:
            break
        ap = system.matvec(p)
        products += 1
        pap = float(p @ ap)
        if not pap > 0.0:
            raise BreakdownDetected(f"curvature p^T A p = {pap:.3e} is not positive")
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(r @ r)
        p = r + (rs_new / rs) * p
        rs = rs_new
        if return_iterates:
            iterates.append(x.copy())
    wall = time.perf_counter() - start
    return SolveReport(x, float(np.sqrt(rs)), 2 * products, wall, iterates=iterates)


def solve_woodbury(system):
    """x = g/lam - U (I + V U / lam)^-1 V g / lam^2 with U = J^T, V = H_L J."""
    lam = system.damping
    if lam <= 0:
        raise ValueError("Woodbury needs a positive damping")
    m = system.rank_dim
    if m > MAX_DENSE_N:
        raise TooLarge(f"b*d_z={m} is too large for the inner solve")
    start = time.perf_counter()
    g = system.rhs
    if m == 0:
        x = g / lam
    else:
        u = system.jacobian.T
        v = system.loss_hessian @ system.jacobian
        inner = np.eye(m) + (v @ u) / lam
        lu, piv = scipy.linalg.lu_factor(inner, check_finite=True)
        pivots = np.abs(np.diag(lu))
        if pivots.min() <= np.finfo(float).eps * m * max(pivots.max(), 1.0):
            raise SingularInner("I + V U / lambda is numerically singular")
        x = g / lam - u @ scipy.linalg.lu_solve((lu, piv), v @ g) / lam**2
    wall = time.perf_counter() - start
    return SolveReport(x, _residual(system, x), system.model_calls, wall)


def initial_state(policy, rhs, warm_start, rng):
    if policy == "reset-to-rhs":
        x0 = rhs.copy()
    elif policy == "reset-to-zero":
        x0 = np.zeros_like(rhs)
    elif warm_start is not None:
        x0 = warm_start.x.copy()
    else:
        x0 = rhs.copy()
    if warm_start is not None:
        return OuState(x0, warm_start.rng, warm_start.elapsed)
    return OuState(x0, rng)


def solve_thermo(system, config, warm_start=None, rng=None, stale=None, rc_seconds=DEFAULT_RC_SECONDS):
    """Simulated SPU solve.

    ``stale`` is an optional ``(system, duration)``: the device first runs
    that long under the previous iteration's system before the fresh one
    takes over, all within the total analog time ``config.analog_time``.
    """
    if warm_start is not None and warm_start.x.shape[0] != system.n:
        raise ValueError("warm start dimension does not match the system")
    start = time.perf_counter()
    state = initial_state(config.warm_start, system.rhs, warm_start, rng)
    total = config.n_steps
    n_stale = 0
    segments = []
    if stale is not None and total:
        stale_system, duration = stale
        n_stale = min(total, thermo_solver.n_steps_for(duration, config.step_size))
        if n_stale:
            segments.append((stale_system, n_stale))
    segments.append((system, total - n_stale))
    estimate, state = thermo_solver.evolve_segments(
        state, segments, config.step_size, config.noise_variance, config.window_fraction
    )
    wall = time.perf_counter() - start
    analog = total * config.step_size * rc_seconds
    report = SolveReport(estimate, _residual(system, estimate), system.model_calls, wall, analog)
    return report, state


def solve(system, choice, warm_start=None, rng=None, stale=None):
    """Dispatch on ``choice.kind``; returns ``(report, ou_state_or_None)``."""
    if choice.kind == "exact":
        return solve_exact(system), None
    if choice.kind == "cg":
        return solve_cg(system, choice.cg_iterations), None
    if choice.kind == "woodbury":
        return solve_woodbury(system), None
    return solve_thermo(system, choice.tls, warm_start, rng, stale)
