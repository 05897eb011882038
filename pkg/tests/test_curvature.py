import math

import numpy as np
import pytest

from tngd.curvature import (
    Batch, CallCounter, GGNOperator, Layer, ModelSpec, build_ggn, empirical_fisher, forward, ggn_vector_product,
    jacobian, loss_and_gradient, loss_hessian, loss_output_grad, per_sample_gradients, per_sample_loss,
)
from tngd.errors import DimensionMismatch, TooLarge
from tngd.numerics import RngStream

H = 1e-5


def tiny_net(loss="softmax-cross-entropy", activation="tanh", sizes=(4, 6, 3)):
    return ModelSpec.mlp(list(sizes), activation, loss)


def tiny_batch(model, rng, b=5):
    x = rng.standard_normal((b, model.input_dim))
    if model.loss == "softmax-cross-entropy":
        y = rng.integers(0, model.output_dim, b)
    else:
        y = rng.standard_normal((b, model.output_dim))
    return Batch(x, y)


def central(f, theta):
    out = []
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = H
        out.append((f(theta + e) - f(theta - e)) / (2 * H))
    return np.array(out)


def test_forward_simple_cases():
    model = ModelSpec([Layer(3, 2)], "mean-squared-error")
    np.testing.assert_array_equal(forward(model, np.zeros(model.n_params), [1.0, 2.0, 3.0]), [0.0, 0.0])
    square = ModelSpec([Layer(3, 3)], "mean-squared-error")
    theta = np.concatenate([np.eye(3).ravel(), np.zeros(3)])
    np.testing.assert_array_equal(forward(square, theta, [1.0, -2.0, 0.5]), [1.0, -2.0, 0.5])
    with pytest.raises(DimensionMismatch):
        forward(square, theta, [1.0, 2.0])


def test_forward_matches_scalar_reimplementation(rng):
    model = tiny_net(sizes=(3, 4, 2))
    theta = rng.standard_normal(model.n_params)
    x = rng.standard_normal(3)
    w1 = theta[:12]
    b1 = theta[12:16]
    w2 = theta[16:24]
    b2 = theta[24:26]
    hidden = []
    for i in range(4):
        s = b1[i]
        for j in range(3):
            s += w1[i * 3 + j] * x[j]
        hidden.append(math.tanh(s))
    expect = []
    for i in range(2):
        s = b2[i]
        for j in range(4):
            s += w2[i * 4 + j] * hidden[j]
        expect.append(s)
    np.testing.assert_allclose(forward(model, theta, x), expect, rtol=1e-14)


def test_loss_simple_cases():
    model = ModelSpec([Layer(2, 2)], "mean-squared-error")
    theta = np.concatenate([np.eye(2).ravel(), np.zeros(2)])
    x = np.array([[1.0, 2.0], [-1.0, 0.5]])
    loss, grad = loss_and_gradient(model, theta, Batch(x, x))
    assert loss == 0.0 and not grad.any()
    ce = ModelSpec([Layer(2, 2)], "softmax-cross-entropy")
    loss, _ = loss_and_gradient(ce, np.zeros(ce.n_params), Batch(np.ones((3, 2)), [0, 0, 0]))
    assert loss == pytest.approx(math.log(2.0), rel=1e-15)


@pytest.mark.parametrize("loss", ["softmax-cross-entropy", "mean-squared-error"])
@pytest.mark.parametrize("activation", ["tanh", "relu", "identity"])
def test_gradient_matches_finite_differences(loss, activation, rng):
    model = tiny_net(loss, activation)
    theta = rng.standard_normal(model.n_params)
    batch = tiny_batch(model, rng)
    _, grad = loss_and_gradient(model, theta, batch)
    fd = central(lambda t: loss_and_gradient(model, t, batch)[0], theta)
    np.testing.assert_allclose(grad, fd, rtol=1e-5, atol=1e-8)


def test_jacobian_matches_finite_differences(rng):
    model = tiny_net()
    theta = rng.standard_normal(model.n_params)
    batch = tiny_batch(model, rng, b=4)
    jac = jacobian(model, theta, batch)
    assert jac.shape == (4 * 3, model.n_params)
    fd = central(lambda t: forward(model, t, batch.inputs).ravel() / 2.0, theta).T
    np.testing.assert_allclose(jac, fd, rtol=1e-5, atol=1e-8)


def test_jacobian_linear_model_rows_hold_inputs():
    model = ModelSpec([Layer(3, 2)], "mean-squared-error")
    x = np.array([[1.5, -2.0, 0.25]])
    jac = jacobian(model, np.zeros(model.n_params), Batch(x, np.zeros((1, 2))))
    np.testing.assert_array_equal(jac[0, :3], x[0])
    np.testing.assert_array_equal(jac[1, 3:6], x[0])
    np.testing.assert_array_equal(jac[:, 6:], np.eye(2))


def test_duplicated_sample_duplicates_rows(rng):
    model = tiny_net()
    theta = rng.standard_normal(model.n_params)
    x = rng.standard_normal((1, 4))
    single = jacobian(model, theta, Batch(x, [1]))
    double = jacobian(model, theta, Batch(np.vstack([x, x]), [1, 1]))
    np.testing.assert_allclose(double[:3] * np.sqrt(2), single, rtol=1e-14)
    np.testing.assert_array_equal(double[:3], double[3:])


def test_loss_hessian_cases(rng):
    mse = tiny_net("mean-squared-error")
    theta = rng.standard_normal(mse.n_params)
    np.testing.assert_array_equal(loss_hessian(mse, theta, tiny_batch(mse, rng, 2)), np.eye(6))
    two = ModelSpec([Layer(2, 2)])
    h = loss_hessian(two, np.zeros(two.n_params), Batch(np.ones((1, 2)), [0]))
    np.testing.assert_allclose(h, [[0.25, -0.25], [-0.25, 0.25]], rtol=1e-15)


def test_loss_hessian_matches_finite_differences(rng):
    model = tiny_net()
    theta = rng.standard_normal(model.n_params)
    batch = tiny_batch(model, rng, 3)
    z = forward(model, theta, batch.inputs)
    h = loss_hessian(model, theta, batch)
    for i in range(3):
        zi, yi = z[i:i + 1], batch.targets[i:i + 1]

        def grad_at(v, zi=zi, yi=yi):
            return loss_output_grad(model, v.reshape(1, -1), yi)[0]
        fd = central(grad_at, zi[0].copy())
        np.testing.assert_allclose(h[3 * i:3 * i + 3, 3 * i:3 * i + 3], fd, rtol=1e-5, atol=1e-6)
        # and the gradient itself against the loss
        fdg = central(lambda v, yi=yi: per_sample_loss(model, v.reshape(1, -1), yi)[0], zi[0].copy())
        np.testing.assert_allclose(loss_output_grad(model, zi, yi)[0], fdg, rtol=1e-5, atol=1e-8)


def test_softmax_hessian_properties(rng):
    model = tiny_net()
    theta = 3 * rng.standard_normal(model.n_params)
    h = loss_hessian(model, theta, tiny_batch(model, rng, 6))
    np.testing.assert_allclose(h.sum(axis=1), 0.0, atol=1e-15)
    assert np.linalg.eigvalsh(h).min() >= -1e-10


def test_ggn_vector_product_matches_explicit_on_random_instances():
    for seed in range(20):
        r = np.random.default_rng(seed)
        model = tiny_net("softmax-cross-entropy" if seed % 2 else "mean-squared-error")
        theta = r.standard_normal(model.n_params)
        batch = tiny_batch(model, r, b=int(r.integers(1, 8)))
        v = r.standard_normal(model.n_params)
        lam = float(r.uniform(0, 1))
        j = jacobian(model, theta, batch)
        explicit = j.T @ (loss_hessian(model, theta, batch) @ (j @ v)) + lam * v
        got = ggn_vector_product(model, theta, batch, v, lam)
        np.testing.assert_allclose(got, explicit, rtol=1e-8, atol=1e-12)


def test_ggn_vector_product_properties(rng):
    model = tiny_net()
    theta = rng.standard_normal(model.n_params)
    batch = tiny_batch(model, rng)
    zero = np.zeros(model.n_params)
    np.testing.assert_array_equal(ggn_vector_product(model, theta, batch, zero, 0.3), zero)
    u, w = rng.standard_normal((2, model.n_params))
    np.testing.assert_allclose(
        ggn_vector_product(model, theta, batch, 2 * u - w, 0.1),
        2 * ggn_vector_product(model, theta, batch, u, 0.1) - ggn_vector_product(model, theta, batch, w, 0.1),
        rtol=1e-10, atol=1e-12,
    )
    assert u @ ggn_vector_product(model, theta, batch, u, 0.1) >= 0.1 * (u @ u) - 1e-12
    counter = CallCounter()
    ggn_vector_product(model, theta, batch, u, 0.1, counter)
    assert counter.calls == 2
    with pytest.raises(DimensionMismatch):
        ggn_vector_product(model, theta, batch, u[:-1])


def test_build_ggn_properties(rng):
    model = tiny_net()
    theta = rng.standard_normal(model.n_params)
    batch = tiny_batch(model, rng, 3)
    g = build_ggn(model, theta, batch, 0.05)
    assert np.max(np.abs(g - g.T)) <= 1e-10
    assert np.linalg.eigvalsh(g).min() >= 0.05 - 1e-8
    cols = np.column_stack([ggn_vector_product(model, theta, batch, e, 0.05) for e in np.eye(model.n_params)])
    np.testing.assert_allclose(g, cols, rtol=1e-10, atol=1e-13)


def test_linear_mse_ggn_is_input_gram():
    model = ModelSpec([Layer(2, 1)], "mean-squared-error")
    x = np.array([[1.0, 2.0], [3.0, -1.0], [0.5, 0.0], [-2.0, 4.0]])
    g = build_ggn(model, np.zeros(3), Batch(x, np.zeros((4, 1))))
    aug = np.column_stack([x, np.ones(4)])
    np.testing.assert_allclose(g, aug.T @ aug / 4, rtol=1e-15)


def test_empirical_fisher(rng):
    model = tiny_net()
    theta = rng.standard_normal(model.n_params)
    one = tiny_batch(model, rng, 1)
    _, grad = loss_and_gradient(model, theta, one)
    np.testing.assert_allclose(empirical_fisher(model, theta, one), np.outer(grad, grad), rtol=1e-12, atol=1e-15)
    batch = tiny_batch(model, rng, 6)
    f = empirical_fisher(model, theta, batch)
    per = per_sample_gradients(model, theta, batch)
    np.testing.assert_allclose(np.diag(f), np.mean(per**2, axis=0), rtol=1e-12)
    assert np.linalg.eigvalsh(f).min() >= -1e-12
    np.testing.assert_allclose(per.mean(axis=0), loss_and_gradient(model, theta, batch)[1], rtol=1e-10, atol=1e-14)


def test_dense_guard():
    big = ModelSpec.mlp([100, 60, 3])
    assert big.n_params > 5000
    with pytest.raises(TooLarge):
        build_ggn(big, np.zeros(big.n_params), Batch(np.zeros((1, 100)), [0]))


def test_counters_and_operator(rng):
    model = tiny_net()
    theta = rng.standard_normal(model.n_params)
    batch = tiny_batch(model, rng, 5)
    counter = CallCounter()
    loss_and_gradient(model, theta, batch, counter)
    assert counter.calls == 1
    jacobian(model, theta, batch, counter)
    assert counter.calls == 1 + 5 * 3
    op = GGNOperator(model, theta, batch, 0.1, np.zeros(model.n_params))
    op.matvec(np.ones(model.n_params))
    assert op.counter.calls == 2 and op.n == model.n_params


def test_relu_derivative_at_zero_is_zero():
    model = ModelSpec([Layer(1, 1, "relu"), Layer(1, 1)], "mean-squared-error")
    theta = np.array([1.0, 0.0, 1.0, 0.0])  # hidden pre-activation is exactly 0 at x = 0
    _, grad = loss_and_gradient(model, theta, Batch([[0.0]], [[1.0]]))
    assert grad[0] == 0.0 and grad[1] == 0.0


def test_init_params_is_seeded():
    model = tiny_net()
    a = model.init_params(RngStream(3))
    np.testing.assert_array_equal(a, model.init_params(RngStream(3)))
    w, b = model.unflatten(a)[0]
    assert w.shape == (6, 4) and not b.any()
