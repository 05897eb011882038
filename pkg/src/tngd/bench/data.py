"""Dataset ingestion: IDX (MNIST) files and seeded synthetic stand-ins."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from ..errors import BadMagic, CountMismatch, TruncatedFile
from ..numerics import RngStream

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    task: str = "classification"
    info: dict = field(default_factory=dict)

    @property
    def input_dim(self):
        return self.train_x.shape[1]

    @property
    def output_dim(self):
        if self.task == "classification":
            return int(max(self.train_y.max(), self.test_y.max() if len(self.test_y) else 0)) + 1
        return self.train_y.shape[1]


def _read(path):
    return Path(path).read_bytes()


def _header(data, magic, ndims, path):
    if len(data) < 4:
        raise TruncatedFile(f"{path}: too short for an IDX header")
    (found,) = struct.unpack(">I", data[:4])
    if found != magic:
        raise BadMagic(f"{path}: magic 0x{found:08x}, expected 0x{magic:08x}")
    end = 4 + 4 * ndims
    if len(data) < end:
        raise TruncatedFile(f"{path}: header truncated")
    return struct.unpack(f">{ndims}I", data[4:end]), end


def read_idx_images(path):
    data = _read(path)
    (count, rows, cols), off = _header(data, IDX_IMAGES_MAGIC, 3, path)
    need = count * rows * cols
    if len(data) - off < need:
        raise TruncatedFile(f"{path}: expected {need} pixel bytes, found {len(data) - off}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=need, offset=off)
    return pixels.reshape(count, rows, cols)


def read_idx_labels(path):
    data = _read(path)
    (count,), off = _header(data, IDX_LABELS_MAGIC, 1, path)
    if len(data) - off < count:
        raise TruncatedFile(f"{path}: expected {count} labels, found {len(data) - off}")
    return np.frombuffer(data, dtype=np.uint8, count=count, offset=off).copy()


def load_idx(images_path, labels_path):
    """Return ``(x, y)``: flattened pixels scaled to [0, 1] and integer labels."""
    images = read_idx_images(images_path)
    labels = read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise CountMismatch(f"{images.shape[0]} images but {labels.shape[0]} labels")
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    return x, labels.astype(np.int64)


def write_idx_images(path, images):
    images = np.asarray(images, dtype=np.uint8)
    header = struct.pack(">4I", IDX_IMAGES_MAGIC, *images.shape)
    Path(path).write_bytes(header + images.tobytes())


def write_idx_labels(path, labels):
    labels = np.asarray(labels, dtype=np.uint8)
    Path(path).write_bytes(struct.pack(">2I", IDX_LABELS_MAGIC, labels.shape[0]) + labels.tobytes())


def blobs_bayes_accuracy(classes, separation, noise):
    """Bayes accuracy for equal-prior isotropic clusters at ``separation * e_k``.

    Correct iff the own coordinate beats the other K-1, which integrates to
    int phi(u) Phi(u + separation/noise)^(K-1) du.
    """
    if noise == 0:
        return 1.0
    snr = separation / noise
    val, _ = integrate.quad(lambda u: stats.norm.pdf(u) * stats.norm.cdf(u + snr) ** (classes - 1), -np.inf, np.inf)
    return float(val)


def _blobs(rng, n, noise, input_dim, classes, separation):
    if input_dim < classes:
        raise ValueError("blobs need input_dim >= classes")
    y = np.arange(n) % classes
    y = y[rng.permutation(n)]
    x = np.zeros((n, input_dim))
    x[np.arange(n), y] = separation
    x += noise * rng.normal(n * input_dim).reshape(n, input_dim)
    return x, y


def _two_moons(rng, n, noise):
    y = np.arange(n) % 2
    y = y[rng.permutation(n)]
    angle = np.pi * rng.generator.uniform(size=n)
    x = np.where(
        (y == 0)[:, None],
        np.column_stack([np.cos(angle), np.sin(angle)]),
        np.column_stack([1.0 - np.cos(angle), 0.5 - np.sin(angle)]),
    )
    return x + noise * rng.normal(2 * n).reshape(n, 2), y


def least_squares_optimum(x, y):
    """Least-squares weights (with intercept, last entry) and the 0.5*mean-squared loss floor."""
    design = np.column_stack([x, np.ones(x.shape[0])])
    w, *_ = np.linalg.lstsq(design, y, rcond=None)
    r = design @ w - y
    return w, float(0.5 * np.mean(np.sum(r * r, axis=1)))


def synth_dataset(kind, n, seed, noise=1.0, n_test=None, input_dim=10, classes=3, separation=3.0):
    """Seeded synthetic task with ``n`` training and ``n_test`` test samples."""
    if n < 2:
        raise ValueError("need at least two samples")
    n_test = n // 2 if n_test is None else n_test
    rng = RngStream(seed, (7,))
    total = n + n_test
    info = {"kind": kind, "noise": noise}
    task = "classification"
    if kind == "blobs":
        x, y = _blobs(rng, total, noise, input_dim, classes, separation)
        info["bayes_accuracy"] = blobs_bayes_accuracy(classes, separation, noise)
    elif kind == "two-moons":
        x, y = _two_moons(rng, total, noise)
    elif kind == "least-squares":
        task = "regression"
        x = rng.normal(total * input_dim).reshape(total, input_dim)
        w = rng.normal(input_dim + 1)
        y = (x @ w[:-1] + w[-1] + noise * rng.normal(total))[:, None]
        info["true_weights"] = w
    else:
        raise ValueError(f"unknown synthetic dataset {kind!r}")
    ds = Dataset(x[:n], y[:n], x[n:], y[n:], task, info)
    if task == "regression":
        w_hat, floor = least_squares_optimum(ds.train_x, ds.train_y)
        info["optimum"] = w_hat
        info["loss_floor"] = floor
    return ds
