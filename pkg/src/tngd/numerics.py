"""Dense linear algebra kernels and reproducible random streams.

Everything here is float64. The kernels are thin wrappers over numpy that
add the dimensional checks the rest of the package relies on.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .errors import DimensionMismatch, NonFinite, NotPositiveDefinite

SYMMETRY_TOL = 1e-10


def as_vector(v, name="vector"):
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {v.shape}")
    return v


def as_matrix(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(x, what="array"):
    if not np.all(np.isfinite(x)):
        raise NonFinite(f"{what} contains NaN or Inf")
    return x


def matvec(a, v):
    a = as_matrix(a)
    v = as_vector(v)
    if a.shape[1] != v.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by vector of length {v.shape[0]}")
    return a @ v


def matmul(a, b):
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def transpose(a):
    return as_matrix(a).T.copy()


def add_scaled(x, y, alpha):
    """Return ``x + alpha * y``."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise DimensionMismatch(f"shape mismatch {x.shape} vs {y.shape}")
    return x + alpha * y


def symmetrize(a, tol=SYMMETRY_TOL):
    """Check symmetry to ``tol`` (relative to the largest entry) and return (A + A^T)/2."""
    a = as_matrix(a)
    if a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {a.shape}")
    scale = max(1.0, float(np.max(np.abs(a), initial=0.0)))
    if np.max(np.abs(a - a.T), initial=0.0) > tol * scale:
        raise ValueError("matrix is not symmetric within tolerance")
    return 0.5 * (a + a.T)


def cholesky_factor(a):
    a = symmetrize(a)
    try:
        return scipy.linalg.cho_factor(a, lower=True, check_finite=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc


def cholesky_solve(a, b):
    """Solve ``A x = b`` for symmetric positive definite ``A``.

    Raises NotPositiveDefinite when the factorization hits a non-positive
    pivot; callers are expected to add damping and retry.
    """
    b = as_vector(b)
    a = as_matrix(a)
    if a.shape != (b.shape[0], b.shape[0]):
        raise DimensionMismatch(f"matrix {a.shape} incompatible with rhs of length {b.shape[0]}")
    factor = cholesky_factor(a)
    return scipy.linalg.cho_solve(factor, b)


class RngStream:
    """A single-owner random stream backed by PCG64.

    Streams are addressed by ``(seed, path)``; ``path`` is a tuple of
    non-negative integers passed as the SeedSequence spawn key, so
    ``RngStream(7, (0, 3))`` is always the same stream and is statistically
    independent of ``RngStream(7, (0, 4))``. Share nothing: call
    :meth:`split` to hand a child stream to another worker.
    """

    algorithm = "PCG64"

    def __init__(self, seed, path=()):
        self.seed = int(seed)
        self.path = tuple(int(p) for p in path)
        seq = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.generator = np.random.Generator(np.random.PCG64(seq))

    def split(self, index):
        return RngStream(self.seed, self.path + (int(index),))

    def normal(self, size):
        return self.generator.standard_normal(size)

    def permutation(self, n):
        return self.generator.permutation(n)

    @property
    def position(self):
        return self.generator.bit_generator.state["state"]["state"]

    def __repr__(self):
        return f"RngStream(seed={self.seed}, path={self.path})"


def gaussian_vector(rng, length, mean=0.0, variance=1.0):
    if variance < 0:
        raise ValueError("variance must be non-negative")
    z = rng.normal(int(length))
    return mean + np.sqrt(variance) * z
