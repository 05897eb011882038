"""Small dense networks and the derivative quantities NGD needs.

Parameters are flattened per layer as the weight matrix (out_dim x in_dim,
row-major) followed by the bias. Forward mode gives J v, reverse mode gives
J^T u and the gradient; nothing here builds a general autodiff tape.

The Jacobian returned by :func:`jacobian` has shape (b*d_z, N) and carries
a 1/sqrt(b) factor on every row, so ``J.T @ H_L @ J`` is the batch-mean GGN.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, TooLarge

ACTIVATIONS = ("identity", "tanh", "relu")
LOSSES = ("softmax-cross-entropy", "mean-squared-error")
MAX_DENSE_N = 5000


@dataclass(frozen=True)
class Layer:
    in_dim: int
    out_dim: int
    activation: str = "identity"

    def __post_init__(self):
        if self.in_dim < 1 or self.out_dim < 1:
            raise ValueError("layer dimensions must be positive")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def n_params(self):
        return self.in_dim * self.out_dim + self.out_dim


@dataclass(frozen=True)
class ModelSpec:
    layers: tuple
    loss: str = "softmax-cross-entropy"

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ValueError("a model needs at least one layer")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss head {self.loss!r}")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.out_dim != b.in_dim:
                raise ValueError(f"layer dims do not chain: {a.out_dim} -> {b.in_dim}")

    @classmethod
    def mlp(cls, sizes, activation="tanh", loss="softmax-cross-entropy"):
        """Dense net through ``sizes``; hidden layers use ``activation``, the head is linear."""
        layers = []
        for i, (a, b) in enumerate(zip(sizes, sizes[1:])):
            act = "identity" if i == len(sizes) - 2 else activation
            layers.append(Layer(a, b, act))
        return cls(tuple(layers), loss)

    @property
    def n_params(self):
        return sum(layer.n_params for layer in self.layers)

    @property
    def input_dim(self):
        return self.layers[0].in_dim

    @property
    def output_dim(self):
        return self.layers[-1].out_dim

    def unflatten(self, theta):
        theta = np.asarray(theta, dtype=np.float64)
        if theta.shape != (self.n_params,):
            raise DimensionMismatch(f"expected {self.n_params} parameters, got shape {theta.shape}")
        out = []
        pos = 0
        for layer in self.layers:
            nw = layer.in_dim * layer.out_dim
            w = theta[pos:pos + nw].reshape(layer.out_dim, layer.in_dim)
            pos += nw
            b = theta[pos:pos + layer.out_dim]
            pos += layer.out_dim
            out.append((w, b))
        return out

    def init_params(self, rng):
        """LeCun-normal weights, zero biases."""
        parts = []
        for layer in self.layers:
            w = rng.normal(layer.in_dim * layer.out_dim) / np.sqrt(layer.in_dim)
            parts.extend([w, np.zeros(layer.out_dim)])
        return np.concatenate(parts)


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim != 2 or self.inputs.shape[0] < 1:
            raise DimensionMismatch("inputs must be a non-empty (b, input_dim) array")
        if len(self.targets) != self.inputs.shape[0]:
            raise DimensionMismatch("inputs and targets disagree on batch size")

    @property
    def size(self):
        return self.inputs.shape[0]


@dataclass
class CallCounter:
    """Counts model traversals. One forward or reverse pass over one
    sample-output slice counts as one model call."""

    calls: int = 0
    log: list = field(default_factory=list)

    def add(self, n, what):
        self.calls += int(n)
        self.log.append((what, int(n)))

    def reset(self):
        self.calls = 0
        self.log.clear()


def _count(counter, n, what):
    if counter is not None:
        counter.add(n, what)


def _act(name, pre):
    if name == "tanh":
        return np.tanh(pre)
    if name == "relu":
        return np.maximum(pre, 0.0)
    return pre


def _act_grad(name, pre, post):
    if name == "tanh":
        return 1.0 - post * post
    if name == "relu":
        return (pre > 0).astype(np.float64)  # derivative at 0 is 0
    return np.ones_like(pre)


def _check_batch(model, batch):
    if batch.inputs.shape[1] != model.input_dim:
        raise DimensionMismatch(f"inputs have {batch.inputs.shape[1]} features, model expects {model.input_dim}")
    if model.loss == "softmax-cross-entropy":
        t = np.asarray(batch.targets)
        if t.ndim != 1 or np.any(t < 0) or np.any(t >= model.output_dim):
            raise DimensionMismatch("class targets must be indices below the output dimension")
    else:
        t = np.asarray(batch.targets, dtype=np.float64)
        if t.shape != (batch.size, model.output_dim):
            raise DimensionMismatch(f"regression targets must have shape {(batch.size, model.output_dim)}")


def _forward_cache(model, theta, x):
    params = model.unflatten(theta)
    a = x
    cache = []
    for layer, (w, b) in zip(model.layers, params):
        pre = a @ w.T + b
        post = _act(layer.activation, pre)
        cache.append((a, pre, post))
        a = post
    return params, cache, a


def forward(model, theta, x):
    """Network output for a single input row, or for a (b, input_dim) batch."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != model.input_dim:
        raise DimensionMismatch(f"input of shape {x.shape} does not fit input_dim={model.input_dim}")
    _, _, z = _forward_cache(model, theta, xb)
    return z[0] if single else z


def _log_softmax(z):
    m = np.max(z, axis=-1, keepdims=True)
    s = z - m
    return s - np.log(np.sum(np.exp(s), axis=-1, keepdims=True))


def softmax(z):
    return np.exp(_log_softmax(z))


def per_sample_loss(model, z, targets):
    if model.loss == "softmax-cross-entropy":
        idx = np.asarray(targets, dtype=np.intp)
        return -_log_softmax(z)[np.arange(z.shape[0]), idx]
    r = z - np.asarray(targets, dtype=np.float64)
    return 0.5 * np.sum(r * r, axis=1)


def loss_output_grad(model, z, targets):
    """dL/dz per sample, shape (b, d_z)."""
    if model.loss == "softmax-cross-entropy":
        g = softmax(z)
        g[np.arange(z.shape[0]), np.asarray(targets, dtype=np.intp)] -= 1.0
        return g
    return z - np.asarray(targets, dtype=np.float64)


def _vjp(model, params, cache, cot):
    """Reverse pass. ``cot`` has shape (b, d_z); returns the batch-summed parameter gradient."""
    grads = []
    delta = cot
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        a_in, pre, post = cache[i]
        delta = delta * _act_grad(layer.activation, pre, post)
        w = params[i][0]
        grads.append(delta.sum(axis=0))
        grads.append((delta.T @ a_in).ravel())
        if i:
            delta = delta @ w
    return np.concatenate(grads[::-1])


def _per_sample_vjp(model, params, cache, cot):
    """Reverse pass without the batch sum. ``cot`` is (b, k, d_z); returns (b, k, N)."""
    b, k, _ = cot.shape
    pieces = []
    delta = cot
    for i in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[i]
        a_in, pre, post = cache[i]
        delta = delta * _act_grad(layer.activation, pre, post)[:, None, :]
        w = params[i][0]
        pieces.append(delta)
        pieces.append(np.einsum("bko,bi->bkoi", delta, a_in).reshape(b, k, -1))
        if i:
            delta = delta @ w
    return np.concatenate(pieces[::-1], axis=2)


def _jvp(model, params, cache, v):
    """Forward-mode pass: output tangents (b, d_z) for the parameter direction ``v``."""
    tangents = model.unflatten(v)
    dot = None
    for layer, (w, _), (dw, db), (a_in, pre, post) in zip(model.layers, params, tangents, cache):
        dpre = a_in @ dw.T + db
        if dot is not None:
            dpre = dpre + dot @ w.T
        dot = dpre * _act_grad(layer.activation, pre, post)
    return dot


def loss_and_gradient(model, theta, batch, counter=None):
    """Batch-mean loss and its gradient."""
    _check_batch(model, batch)
    params, cache, z = _forward_cache(model, theta, batch.inputs)
    loss = float(np.mean(per_sample_loss(model, z, batch.targets)))
    cot = loss_output_grad(model, z, batch.targets) / batch.size
    _count(counter, 1, "gradient")
    return loss, _vjp(model, params, cache, cot)


def evaluate(model, theta, inputs, targets):
    """Mean loss and accuracy (accuracy is NaN for regression heads)."""
    z = forward(model, theta, inputs)
    loss = float(np.mean(per_sample_loss(model, z, targets)))
    if model.loss == "softmax-cross-entropy":
        acc = float(np.mean(np.argmax(z, axis=1) == np.asarray(targets)))
    else:
        acc = float("nan")
    return loss, acc


def jacobian(model, theta, batch, counter=None):
    _check_batch(model, batch)
    params, cache, _ = _forward_cache(model, theta, batch.inputs)
    b, dz = batch.size, model.output_dim
    seeds = np.broadcast_to(np.eye(dz), (b, dz, dz))
    jac = _per_sample_vjp(model, params, cache, seeds)
    _count(counter, b * dz, "jacobian")
    return jac.reshape(b * dz, model.n_params) / np.sqrt(b)


def per_sample_gradients(model, theta, batch, counter=None):
    """Rows are the gradients of each sample's loss, shape (b, N)."""
    _check_batch(model, batch)
    params, cache, z = _forward_cache(model, theta, batch.inputs)
    cot = loss_output_grad(model, z, batch.targets)[:, None, :]
    _count(counter, batch.size, "per-sample gradient")
    return _per_sample_vjp(model, params, cache, cot)[:, 0, :]


def loss_hessian_blocks(model, theta, batch):
    """Per-sample Hessians of L w.r.t. the outputs, shape (b, d_z, d_z)."""
    _check_batch(model, batch)
    b, dz = batch.size, model.output_dim
    if model.loss == "mean-squared-error":
        return np.broadcast_to(np.eye(dz), (b, dz, dz)).copy()
    p = softmax(forward(model, theta, batch.inputs))
    return np.einsum("bi,ij->bij", p, np.eye(dz)) - p[:, :, None] * p[:, None, :]


def loss_hessian(model, theta, batch):
    return scipy.linalg.block_diag(*loss_hessian_blocks(model, theta, batch))


def ggn_vector_product(model, theta, batch, v, damping=0.0, counter=None):
    """(J^T H_L J + damping I) v from one forward-mode and one reverse-mode pass."""
    _check_batch(model, batch)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (model.n_params,):
        raise DimensionMismatch(f"v must have length {model.n_params}")
    params, cache, z = _forward_cache(model, theta, batch.inputs)
    jv = _jvp(model, params, cache, v)
    if model.loss == "softmax-cross-entropy":
        p = softmax(z)
        hjv = p * jv - p * np.sum(p * jv, axis=1, keepdims=True)
    else:
        hjv = jv
    _count(counter, 2, "ggn-vector product")
    return _vjp(model, params, cache, hjv / batch.size) + damping * v


def _guard(model):
    if model.n_params > MAX_DENSE_N:
        raise TooLarge(f"N={model.n_params} exceeds the dense limit {MAX_DENSE_N}")


def build_ggn(model, theta, batch, damping=0.0, counter=None):
    _guard(model)
    j = jacobian(model, theta, batch, counter)
    g = j.T @ loss_hessian(model, theta, batch) @ j
    g = 0.5 * (g + g.T)
    g[np.diag_indices_from(g)] += damping
    return g


def empirical_fisher(model, theta, batch, counter=None):
    _guard(model)
    grads = per_sample_gradients(model, theta, batch, counter)
    return grads.T @ grads / batch.size


class GGNOperator:
    """Matrix-free damped GGN system bound to one batch.

    Quacks like :class:`tngd.thermo_solver.DampedLowRankSystem` where only
    ``matvec``, ``n`` and ``rhs`` are needed (CG, the reduction ratio).
    """

    def __init__(self, model, theta, batch, damping, rhs, counter=None):
        self.model = model
        self.theta = np.asarray(theta, dtype=np.float64)
        self.batch = batch
        self.damping = float(damping)
        self.rhs = np.asarray(rhs, dtype=np.float64)
        self.counter = counter if counter is not None else CallCounter()

    @property
    def n(self):
        return self.model.n_params

    def matvec(self, v):
        return ggn_vector_product(self.model, self.theta, self.batch, v, self.damping, self.counter)
