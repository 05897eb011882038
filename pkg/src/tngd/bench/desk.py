"""The desk-scale classification task shared by tests and demos.

Three isotropic Gaussian clusters in 10 dimensions (Bayes accuracy about
0.87), a 10-16-3 tanh network (227 parameters) and SGD driven by the
natural gradient. Damping 0.2 keeps the smallest curvature eigenvalue large
enough that 50 tau of analog evolution is effectively converged.
"""

from __future__ import annotations

from ..curvature import ModelSpec
from ..optim import OptimizerConfig
from ..second_order import SolverChoice
from ..thermo_solver import TlsConfig
from .data import synth_dataset

N_TRAIN, N_TEST = 2000, 1000
BATCH_SIZE = 64
HIDDEN = 16
DAMPING = 0.2
LEARNING_RATE = 0.1


def desk_dataset(seed=0):
    return synth_dataset("blobs", N_TRAIN, seed, noise=1.5, n_test=N_TEST, input_dim=10, classes=3, separation=3.0)


def desk_model():
    return ModelSpec.mlp([10, HIDDEN, 3], "tanh", "softmax-cross-entropy")


def desk_optimizer(solver="thermodynamic", analog_time=50.0, noise_variance=0.0, warm_start="reset-to-rhs",
                   delay_time=0.0, gradient_source="natural-gradient", damping=DAMPING,
                   learning_rate=LEARNING_RATE, track_direction_cosine=False, **kw):
    tls = TlsConfig(noise_variance, 0.1, analog_time, 0.1, warm_start)
    return OptimizerConfig(
        learning_rate=learning_rate,
        gradient_source=gradient_source,
        solver=SolverChoice(solver, kw.pop("cg_iterations", 200), tls),
        damping=damping,
        delay_time=delay_time,
        track_direction_cosine=track_direction_cosine,
        **kw,
    )
