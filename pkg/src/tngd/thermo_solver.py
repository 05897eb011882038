"""Simulated stochastic processing unit (SPU).

The device state x follows the Ornstein-Uhlenbeck process

    dx = -(A x - g) dt + N(0, 2 kappa0 dt),   A = J^T H_L J + lambda I,

whose stationary law is N(A^-1 g, kappa0 A^-1). Time is measured in units
of the device time constant tau (tau = 1 here); physical seconds only
appear in :mod:`tngd.costs`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonFinite, NotPositiveDefinite
from .numerics import RngStream, as_matrix, as_vector, cholesky_factor, symmetrize

WARM_START_POLICIES = ("reset-to-rhs", "reset-to-zero", "keep-previous")


@dataclass
class DampedLowRankSystem:
    """The linear system ``(J^T H_L J + lambda I) x = g`` kept in factored form.

    ``jacobian`` is (b*d_z, N), ``loss_hessian`` is (b*d_z, b*d_z). The
    product with a vector never forms the N x N matrix.
    """

    jacobian: np.ndarray
    loss_hessian: np.ndarray
    damping: float
    rhs: np.ndarray
    model_calls: int = 0

    def __post_init__(self):
        self.jacobian = as_matrix(self.jacobian, "jacobian")
        self.loss_hessian = as_matrix(self.loss_hessian, "loss_hessian")
        self.rhs = as_vector(self.rhs, "rhs")
        self.damping = float(self.damping)
        m, n = self.jacobian.shape
        if self.loss_hessian.shape != (m, m):
            raise DimensionMismatch(f"loss Hessian {self.loss_hessian.shape} does not match J {self.jacobian.shape}")
        if self.rhs.shape[0] != n:
            raise DimensionMismatch(f"rhs length {self.rhs.shape[0]} does not match N={n}")
        if self.damping < 0:
            raise ValueError("damping must be non-negative")
        if m:
            self.loss_hessian = symmetrize(self.loss_hessian)

    @property
    def n(self):
        return self.jacobian.shape[1]

    @property
    def rank_dim(self):
        return self.jacobian.shape[0]

    def matvec(self, x):
        out = self.damping * x
        if self.rank_dim:
            out = out + self.jacobian.T @ (self.loss_hessian @ (self.jacobian @ x))
        return out

    def dense(self):
        a = self.jacobian.T @ self.loss_hessian @ self.jacobian
        a = 0.5 * (a + a.T)
        a[np.diag_indices_from(a)] += self.damping
        return a


@dataclass
class OuState:
    x: np.ndarray
    rng: RngStream
    elapsed: float = 0.0


@dataclass
class TlsConfig:
    noise_variance: float = 0.0
    step_size: float = 0.1
    analog_time: float = 50.0
    window_fraction: float = 0.1
    warm_start: str = "keep-previous"

    def __post_init__(self):
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be non-negative")
        if self.step_size <= 0:
            raise ValueError("step_size must be positive")
        if self.analog_time < 0:
            raise ValueError("analog_time must be non-negative")
        if self.analog_time > 0 and self.step_size > self.analog_time + 1e-12:
            raise ValueError("step_size must not exceed analog_time")
        if not 0 < self.window_fraction <= 1:
            raise ValueError("window_fraction must lie in (0, 1]")
        if self.warm_start not in WARM_START_POLICIES:
            raise ValueError(f"unknown warm start policy {self.warm_start!r}")

    @property
    def n_steps(self):
        return n_steps_for(self.analog_time, self.step_size)


def n_steps_for(duration, dt):
    if duration <= 0:
        return 0
    # tolerate t/dt landing a hair above an integer
    return int(math.ceil(duration / dt - 1e-9))


def ou_step(state, system, dt, kappa0):
    """One Euler-Maruyama step with the stable (negative) drift."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = state.x
    with np.errstate(over="ignore", invalid="ignore"):
        x_new = x - dt * (system.matvec(x) - system.rhs)
        if kappa0 > 0:
            x_new = x_new + math.sqrt(2.0 * kappa0 * dt) * state.rng.normal(x.shape[0])
    if not np.all(np.isfinite(x_new)):
        raise NonFinite(
            f"OU state diverged after {state.elapsed + dt:g} tau; "
            "dt must satisfy dt < 2 / lambda_max(A)"
        )
    return OuState(x_new, state.rng, state.elapsed + dt)


def evolve_segments(state, segments, dt, kappa0, window_fraction):
    """Integrate through consecutive ``(system, n_steps)`` segments.

    Returns the trailing-window average of the visited states and the final
    state. With no steps at all the estimate is the initial state. The loop
    is :func:`ou_step` inlined; both produce identical iterates.
    """
    total = sum(k for _, k in segments)
    if total == 0:
        return state.x.copy(), state
    window = max(1, int(math.ceil(window_fraction * total)))
    sigma = math.sqrt(2.0 * kappa0 * dt) if kappa0 > 0 else 0.0
    x = state.x
    n = x.shape[0]
    acc = np.zeros_like(x)
    step = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for system, k in segments:
            if system.n != n:
                raise DimensionMismatch(f"state has length {n}, system has N={system.n}")
            matvec, rhs = system.matvec, system.rhs
            for _ in range(k):
                x = x - dt * (matvec(x) - rhs)
                if sigma:
                    x = x + sigma * state.rng.normal(n)
                step += 1
                if step > total - window:
                    acc += x
                if step % 256 == 0 and not np.all(np.isfinite(x)):
                    break
    if not np.all(np.isfinite(x)) or not np.all(np.isfinite(acc)):
        raise NonFinite("OU state diverged; dt must satisfy dt < 2 / lambda_max(A)")
    return acc / window, OuState(x, state.rng, state.elapsed + total * dt)


def evolve(state, system, config):
    """Run the device for ``config.analog_time`` and read out the estimate."""
    return evolve_segments(
        state, [(system, config.n_steps)], config.step_size, config.noise_variance, config.window_fraction
    )


def _eig(system):
    a = system.dense()
    w, q = np.linalg.eigh(a)
    if w[0] <= 0:
        raise NotPositiveDefinite(f"smallest eigenvalue {w[0]:.3e} is not positive")
    return w, q


def analytic_mean(system, x0, t):
    """Closed-form mean trajectory exp(-A t)(x0 - A^-1 g) + A^-1 g."""
    w, q = _eig(system)
    x0 = as_vector(x0)
    sol = q @ ((q.T @ system.rhs) / w)
    return sol + q @ (np.exp(-w * t) * (q.T @ (x0 - sol)))


def equilibrium_covariance(system, kappa0):
    a = system.dense()
    factor = cholesky_factor(a)
    inv = scipy.linalg.cho_solve(factor, np.eye(a.shape[0]))
    return kappa0 * 0.5 * (inv + inv.T)


def smallest_eigenvalue(system):
    return float(np.linalg.eigvalsh(system.dense())[0])
