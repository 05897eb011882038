"""Training loops: SGD, Adam, exact/CG/Woodbury NGD and thermodynamic NGD.

A run is a sequence of iterations over seeded, epoch-shuffled mini-batches.
Each iteration computes the gradient, optionally turns it into a natural
gradient through one of the :mod:`tngd.second_order` backends, and feeds
that direction to the SGD or Adam update rule. Thermodynamic NGD with the
Adam rule is the TNGD-Adam hybrid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import costs
from .curvature import Batch, CallCounter, GGNOperator, evaluate, jacobian, loss_and_gradient, loss_hessian
from .errors import DegenerateModel, NotPositiveDefinite
from .numerics import RngStream
from .second_order import SolverChoice, solve, solve_exact
from .thermo_solver import DampedLowRankSystem

log = logging.getLogger(__name__)

UPDATE_RULES = ("sgd", "adam")
GRADIENT_SOURCES = ("raw-gradient", "natural-gradient")
LAMBDA_MIN, LAMBDA_MAX = 1e-8, 1e8

# stream indices under a run seed
INIT_STREAM, SHUFFLE_STREAM, NOISE_STREAM = 0, 1, 2


@dataclass
class OptimizerConfig:
    update_rule: str = "sgd"
    learning_rate: float = 0.01
    momentum: float = 0.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    gradient_source: str = "natural-gradient"
    solver: SolverChoice = field(default_factory=SolverChoice)
    damping: float = 0.01
    lm_schedule: tuple | None = None  # (a, alpha)
    delay_time: float = 0.0
    track_direction_cosine: bool = False

    def __post_init__(self):
        if self.update_rule not in UPDATE_RULES:
            raise ValueError(f"unknown update rule {self.update_rule!r}")
        if self.gradient_source not in GRADIENT_SOURCES:
            raise ValueError(f"unknown gradient source {self.gradient_source!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        for name in ("momentum", "adam_beta1", "adam_beta2"):
            if not 0 <= getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        if self.damping <= 0:
            raise ValueError("damping must be positive")
        if self.delay_time < 0:
            raise ValueError("delay time must be non-negative")
        if self.solver.kind == "thermodynamic" and self.delay_time > self.solver.tls.analog_time:
            raise ValueError("delay time cannot exceed the analog time")
        if self.lm_schedule is not None:
            a, alpha = self.lm_schedule
            if not (0.5 < a < 1 and 0 < alpha < 1):
                raise ValueError("LM schedule needs 0.5 < a < 1 and 0 < alpha < 1")

    @property
    def cost_kind(self):
        if self.gradient_source == "raw-gradient":
            return self.update_rule
        return {"exact": "ngd", "cg": "ngd-cg", "woodbury": "ngd-woodbury", "thermodynamic": "tngd"}[self.solver.kind]

    @property
    def analog_time(self):
        if self.gradient_source == "natural-gradient" and self.solver.kind == "thermodynamic":
            return self.solver.tls.analog_time
        return 0.0

    @property
    def noise_variance(self):
        if self.gradient_source == "natural-gradient" and self.solver.kind == "thermodynamic":
            return self.solver.tls.noise_variance
        return 0.0


@dataclass
class TrainState:
    theta: np.ndarray
    damping: float
    k: int = 0
    velocity: np.ndarray | None = None
    adam_m: np.ndarray | None = None
    adam_v: np.ndarray | None = None
    previous_estimate: np.ndarray | None = None
    ou_state: object = None
    stale_system: DampedLowRankSystem | None = None

    def __post_init__(self):
        n = self.theta.shape[0]
        if self.velocity is None:
            self.velocity = np.zeros(n)
        if self.adam_m is None:
            self.adam_m = np.zeros(n)
        if self.adam_v is None:
            self.adam_v = np.zeros(n)


@dataclass
class IterationRecord:
    k: int
    epoch: int
    train_loss: float
    test_loss: float
    train_acc: float
    test_acc: float
    damping: float
    est_wall_seconds: float
    model_calls: int
    direction_cosine: float = float("nan")


@dataclass
class TrainHistory:
    seed: int
    records: list = field(default_factory=list)
    thetas: list = field(default_factory=list)
    final_theta: np.ndarray | None = None
    final_train_loss: float = float("nan")
    final_train_acc: float = float("nan")

    def column(self, name):
        return np.array([getattr(r, name) for r in self.records])


def sgd_update(state, direction, lr, momentum=0.0):
    state.velocity = momentum * state.velocity + direction
    state.theta = state.theta - lr * state.velocity
    return state


def adam_update(state, direction, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam driven by ``direction`` instead of the raw gradient."""
    t = state.k + 1
    state.adam_m = beta1 * state.adam_m + (1 - beta1) * direction
    state.adam_v = beta2 * state.adam_v + (1 - beta2) * direction * direction
    m_hat = state.adam_m / (1 - beta1**t)
    v_hat = state.adam_v / (1 - beta2**t)
    state.theta = state.theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return state


def reduction_ratio(loss_new, loss_old, gradient, system, step):
    """Actual over predicted decrease under q(p) = l + g.p + p.G.p / 2.

    ``G`` is the undamped curvature; one product with ``system`` gives it.
    """
    step = np.asarray(step, dtype=np.float64)
    curv = float(step @ system.matvec(step)) - system.damping * float(step @ step)
    predicted = float(gradient @ step) + 0.5 * curv
    if abs(predicted) <= 1e-12:
        raise DegenerateModel(f"predicted change {predicted:.3e} is too small")
    return (loss_new - loss_old) / predicted


def lm_update(rho, damping, a=0.75, alpha=2.0 / 3.0):
    if not (0.5 < a < 1 and 0 < alpha < 1):
        raise ValueError("need 0.5 < a < 1 and 0 < alpha < 1")
    if rho > a:
        damping = alpha * damping
    elif rho < 1 - a:
        damping = damping / alpha
    return min(max(damping, LAMBDA_MIN), LAMBDA_MAX)


def _cosine(a, b):
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return float("nan")
    return float(a @ b / (na * nb))


def _build_system(model, theta, batch, grad, damping, config, counter):
    if config.solver.kind == "cg":
        return GGNOperator(model, theta, batch, damping, grad, counter)
    before = counter.calls
    jac = jacobian(model, theta, batch, counter)
    return DampedLowRankSystem(jac, loss_hessian(model, theta, batch), damping, grad, counter.calls - before)


def natural_direction(state, model, batch, grad, config, noise_rng, counter):
    """Solve for the natural gradient, retrying once with 10x damping."""
    system = _build_system(model, state.theta, batch, grad, state.damping, config, counter)
    kind = config.solver.kind
    tls = config.solver.tls
    stale = None
    warm = None
    if kind == "thermodynamic":
        persistent = config.delay_time > 0 or tls.warm_start == "keep-previous"
        if persistent:
            warm = state.ou_state
        if config.delay_time > 0 and state.stale_system is not None:
            stale = (state.stale_system, min(config.delay_time, tls.analog_time))
        if config.delay_time > 0 and tls.warm_start != "keep-previous":
            # the device is never reset while it runs under a stale system
            config = replace(config, solver=replace(config.solver, tls=replace(tls, warm_start="keep-previous")))
    try:
        report, ou = solve(system, config.solver, warm, noise_rng, stale)
    except NotPositiveDefinite:
        state.damping *= 10.0
        log.warning("curvature not positive definite; retrying with damping %.3g", state.damping)
        system.damping = state.damping
        report, ou = solve(system, config.solver, warm, noise_rng, stale)
    if kind == "thermodynamic":
        state.ou_state = ou
        state.stale_system = system
    return report, system


def tngd_step(state, model, batch, config, noise_rng=None, counter=None):
    """One iteration. Returns ``(state, info)`` where ``info`` holds the
    batch loss, the direction and bookkeeping for the record."""
    counter = counter if counter is not None else CallCounter()
    loss, grad = loss_and_gradient(model, state.theta, batch, counter)
    info = {"loss": loss, "gradient": grad, "direction_cosine": float("nan")}
    system = None
    if config.gradient_source == "raw-gradient":
        direction = grad
    else:
        report, system = natural_direction(state, model, batch, grad, config, noise_rng, counter)
        direction = report.solution
        if config.track_direction_cosine and isinstance(system, DampedLowRankSystem):
            info["direction_cosine"] = _cosine(direction, solve_exact(system).solution)
    state.previous_estimate = direction
    theta_old = state.theta
    if config.update_rule == "sgd":
        sgd_update(state, direction, config.learning_rate, config.momentum)
    else:
        adam_update(state, direction, config.learning_rate, config.adam_beta1, config.adam_beta2, config.adam_eps)
    if config.lm_schedule is not None and system is not None:
        loss_new, _ = loss_and_gradient(model, state.theta, batch)
        try:
            rho = reduction_ratio(loss_new, loss, grad, system, state.theta - theta_old)
        except DegenerateModel:
            pass
        else:
            state.damping = lm_update(rho, state.damping, *config.lm_schedule)
    state.k += 1
    info["direction"] = direction
    info["model_calls"] = counter.calls
    return state, info


def batches_for(n, batch_size, epochs, rng):
    """Yield ``(epoch, indices)``; each epoch is a fresh permutation, the ragged tail is dropped."""
    per_epoch = n // batch_size
    for epoch in range(epochs):
        order = rng.permutation(n)
        for i in range(per_epoch):
            yield epoch, order[i * batch_size:(i + 1) * batch_size]


def train_one(model, dataset, config, seed, epochs=1, batch_size=64, max_iterations=None,
              hardware=None, keep_thetas=False, theta0=None):
    n = dataset.train_x.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    if not 1 <= batch_size <= n:
        raise ValueError(f"batch size {batch_size} must lie in [1, {n}]")
    root = RngStream(seed)
    theta = model.init_params(root.split(INIT_STREAM)) if theta0 is None else np.array(theta0, dtype=np.float64)
    state = TrainState(theta, config.damping)
    shuffle_rng = root.split(SHUFFLE_STREAM)
    noise_rng = root.split(NOISE_STREAM)
    hw = hardware or costs.HardwareAssumptions()
    history = TrainHistory(seed)
    if keep_thetas:
        history.thetas.append(state.theta.copy())
    wall = 0.0
    for epoch, idx in batches_for(n, batch_size, epochs, shuffle_rng):
        if max_iterations is not None and state.k >= max_iterations:
            break
        batch = Batch(dataset.train_x[idx], dataset.train_y[idx])
        _, train_acc = evaluate(model, state.theta, batch.inputs, batch.targets)
        k = state.k
        state, info = tngd_step(state, model, batch, config, noise_rng)
        est = costs.estimate_iteration(
            config.cost_kind, model.n_params, batch_size, model.output_dim,
            config.solver.cg_iterations, config.analog_time, hw,
        )
        wall += est.total_seconds
        test_loss, test_acc = evaluate(model, state.theta, dataset.test_x, dataset.test_y)
        history.records.append(IterationRecord(
            k, epoch, info["loss"], test_loss, train_acc, test_acc, state.damping,
            wall, info["model_calls"], info["direction_cosine"],
        ))
        if keep_thetas:
            history.thetas.append(state.theta.copy())
    history.final_theta = state.theta
    history.final_train_loss, history.final_train_acc = evaluate(model, state.theta, dataset.train_x, dataset.train_y)
    return history


def train(model, dataset, config, seeds, **kwargs):
    """One :class:`TrainHistory` per seed, in seed order."""
    return [train_one(model, dataset, config, s, **kwargs) for s in seeds]
