import math

import numpy as np
import pytest

from tngd.bench.data import least_squares_optimum, synth_dataset
from tngd.bench.desk import desk_dataset, desk_model, desk_optimizer
from tngd.curvature import Batch, Layer, ModelSpec, loss_and_gradient
from tngd.errors import DegenerateModel
from tngd.optim import (
    LAMBDA_MAX, LAMBDA_MIN, OptimizerConfig, TrainState, adam_update, lm_update, reduction_ratio, sgd_update,
    train, train_one,
)
from tngd.second_order import SolverChoice
from tngd.thermo_solver import DampedLowRankSystem


def test_sgd_update_cases():
    s = sgd_update(TrainState(np.array([1.0, 2.0]), 0.1), np.array([0.5, -1.0]), 0.1)
    np.testing.assert_allclose(s.theta, [0.95, 2.1])
    s = sgd_update(TrainState(np.array([1.0, 2.0]), 0.1), np.zeros(2), 0.1)
    np.testing.assert_array_equal(s.theta, [1.0, 2.0])
    # v1 = d1, v2 = 0.9 d1 + d2
    s = TrainState(np.zeros(1), 0.1)
    sgd_update(s, np.array([1.0]), 0.5, 0.9)
    sgd_update(s, np.array([2.0]), 0.5, 0.9)
    assert s.theta[0] == pytest.approx(-0.5 * 1.0 - 0.5 * (0.9 + 2.0))


def test_adam_zero_betas_is_sign_like():
    d = np.array([2.0, -0.5, 0.0])
    s = adam_update(TrainState(np.zeros(3), 0.1), d, 0.1, 0.0, 0.0, 1e-8)
    np.testing.assert_allclose(s.theta, -0.1 * d / (np.abs(d) + 1e-8), rtol=1e-15)


def test_adam_zero_direction_leaves_theta():
    s = adam_update(TrainState(np.ones(2), 0.1), np.zeros(2), 0.1)
    np.testing.assert_array_equal(s.theta, np.ones(2))


def test_adam_three_steps_by_hand():
    s = TrainState(np.zeros(1), 0.1)
    theta, m, v = 0.0, 0.0, 0.0
    for k in range(1, 4):
        s = adam_update(s, np.array([1.0]), 0.1, 0.9, 0.999, 1e-8)
        s.k += 1
        m = 0.9 * m + 0.1
        v = 0.999 * v + 0.001
        theta -= 0.1 * (m / (1 - 0.9**k)) / (math.sqrt(v / (1 - 0.999**k)) + 1e-8)
    # a constant unit direction gives bias-corrected moments of exactly 1
    assert s.theta[0] == pytest.approx(theta, rel=1e-14)
    assert s.theta[0] == pytest.approx(-0.3 / (1 + 1e-8), rel=1e-12)


def test_lm_update_branches():
    assert lm_update(0.9, 0.01) == pytest.approx(0.01 * 2 / 3)
    assert lm_update(0.1, 0.01) == pytest.approx(0.015)
    assert lm_update(0.5, 0.01) == 0.01
    assert lm_update(0.75, 0.01) == 0.01 and lm_update(0.25, 0.01) == 0.01
    assert lm_update(0.9, LAMBDA_MIN) == LAMBDA_MIN
    assert lm_update(-5.0, LAMBDA_MAX) == LAMBDA_MAX
    with pytest.raises(ValueError):
        lm_update(0.9, 0.01, a=0.4)


def linear_regression_batch(rng, n=30, d=2):
    x = rng.standard_normal((n, d))
    y = (x @ np.array([1.5, -0.5]) + 0.3 + 0.1 * rng.standard_normal(n))[:, None]
    return ModelSpec([Layer(d, 1)], "mean-squared-error"), Batch(x, y)


def test_reduction_ratio_is_one_on_a_quadratic(rng):
    from tngd.curvature import jacobian, loss_hessian
    model, batch = linear_regression_batch(rng)
    theta = rng.standard_normal(model.n_params)
    loss, grad = loss_and_gradient(model, theta, batch)
    sys = DampedLowRankSystem(jacobian(model, theta, batch), loss_hessian(model, theta, batch), 1e-3, grad)
    step = -np.linalg.solve(sys.dense() - 1e-3 * np.eye(3), grad)
    new, _ = loss_and_gradient(model, theta + step, batch)
    assert reduction_ratio(new, loss, grad, sys, step) == pytest.approx(1.0, abs=1e-9)
    with pytest.raises(DegenerateModel):
        reduction_ratio(new, loss, grad, sys, np.zeros(3))


def test_reduction_ratio_quartic_toy():
    # f(a, b) = a^4 + a b + b^2 with a fixed curvature model G
    def f(a, b):
        return a**4 + a * b + b**2

    a0, b0, pa, pb = 0.7, -0.2, -0.3, 0.15
    ga, gb = 4 * a0**3 + b0, a0 + 2 * b0
    g11, g12, g22 = 12 * a0**2, 1.0, 2.0
    sys = DampedLowRankSystem(np.linalg.cholesky([[g11, g12], [g12, g22]]).T, np.eye(2), 0.4, [ga, gb])
    numerator = f(a0 + pa, b0 + pb) - f(a0, b0)
    denominator = ga * pa + gb * pb + 0.5 * (g11 * pa * pa + 2 * g12 * pa * pb + g22 * pb * pb)
    got = reduction_ratio(f(a0 + pa, b0 + pb), f(a0, b0), np.array([ga, gb]), sys, np.array([pa, pb]))
    assert got == pytest.approx(numerator / denominator, rel=1e-12)


def ls_config(**kw):
    return OptimizerConfig(**kw)


def test_exact_ngd_solves_quadratic_in_one_step():
    ds = synth_dataset("least-squares", 200, 3, noise=0.1, input_dim=3)
    model = ModelSpec([Layer(3, 1)], "mean-squared-error")
    cfg = ls_config(learning_rate=1.0, damping=1e-10, solver=SolverChoice("exact"))
    h = train_one(model, ds, cfg, seed=0, batch_size=200, max_iterations=1)
    np.testing.assert_allclose(h.final_theta, ds.info["optimum"].ravel(), atol=1e-8)


def test_sgd_converges_to_normal_equations():
    ds = synth_dataset("least-squares", 100, 4, noise=0.5, input_dim=3)
    model = ModelSpec([Layer(3, 1)], "mean-squared-error")
    cfg = ls_config(learning_rate=0.5, gradient_source="raw-gradient")
    h = train_one(model, ds, cfg, seed=0, epochs=400, batch_size=100)
    w, _ = least_squares_optimum(ds.train_x, ds.train_y)
    np.testing.assert_allclose(h.final_theta, w.ravel(), atol=1e-4)


def test_natural_direction_is_a_descent_direction():
    ds = synth_dataset("least-squares", 64, 5, input_dim=3)
    model = ModelSpec([Layer(3, 1)], "mean-squared-error")
    from tngd.optim import tngd_step
    state = TrainState(np.zeros(model.n_params), 0.01)
    _, info = tngd_step(state, model, Batch(ds.train_x, ds.train_y), ls_config(solver=SolverChoice("exact")))
    assert info["direction"] @ info["gradient"] > 0


def test_train_edge_cases():
    ds = desk_dataset()
    model = desk_model()
    cfg = desk_optimizer(analog_time=1.0)
    assert train_one(model, ds, cfg, 0, max_iterations=0).records == []
    assert train_one(model, ds, cfg, 0, epochs=0).records == []
    a, b = train(model, ds, cfg, [4, 4], max_iterations=5)
    assert repr(a.records) == repr(b.records)  # repr so NaN fields compare equal
    ks = [r.k for r in a.records]
    assert ks == sorted(set(ks)) and len(ks) == 5


def test_lm_schedule_keeps_damping_in_bounds_and_on_the_grid():
    cfg = desk_optimizer(solver="exact", damping=0.2, lm_schedule=(0.75, 2 / 3))
    h = train_one(desk_model(), desk_dataset(), cfg, 0, max_iterations=20)
    lams = np.concatenate([[0.2], h.column("damping")])
    assert np.all((lams >= LAMBDA_MIN) & (lams <= LAMBDA_MAX))
    for prev, cur in zip(lams, lams[1:]):
        assert any(math.isclose(cur, prev * f, rel_tol=1e-12) for f in (1.0, 2 / 3, 1.5))


def test_delay_run_stays_inside_the_seed_envelope():
    model, ds = desk_model(), desk_dataset()
    seeds = range(5)
    base = np.array([train_one(model, ds, desk_optimizer(analog_time=5.0), s).column("test_loss") for s in seeds])
    delayed = np.array([
        train_one(model, ds, desk_optimizer(analog_time=5.0, delay_time=2.0), s).column("test_loss") for s in seeds
    ])
    assert np.all(np.isfinite(delayed))
    spread = base.max(axis=0) - base.min(axis=0)
    lo, hi = base.min(axis=0) - spread, base.max(axis=0) + spread
    mean = delayed.mean(axis=0)
    assert np.all((mean >= lo) & (mean <= hi))


def test_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(learning_rate=0)
    with pytest.raises(ValueError):
        OptimizerConfig(momentum=1.0)
    with pytest.raises(ValueError):
        desk_optimizer(analog_time=1.0, delay_time=2.0)
    assert desk_optimizer(solver="cg").cost_kind == "ngd-cg"
    assert OptimizerConfig(update_rule="adam", gradient_source="raw-gradient").cost_kind == "adam"
