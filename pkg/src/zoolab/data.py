"""Synthetic Gaussian-blob classification datasets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .tensor import rng_for


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gaussian_blobs"
    input_dim: int = 32
    n_classes: int = 10
    n_train: int = 512
    n_test: int = 1000
    class_separation: float = 4.0
    seed: int = 0

    def validate(self):
        if self.kind != "gaussian_blobs":
            raise InvalidSpec(f"unknown dataset kind {self.kind!r}")
        if self.n_classes < 2:
            raise InvalidSpec("need at least two classes")
        if self.input_dim < 1 or self.n_train < 1 or self.n_test < 1:
            raise InvalidSpec("dimensions and split sizes must be positive")
        if self.class_separation <= 0:
            raise InvalidSpec("class_separation must be positive")


@dataclass(frozen=True, eq=False)
class Dataset:
    spec: DatasetSpec
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray

    def split(self, name):
        if name == "train":
            return self.x_train, self.y_train
        if name == "test":
            return self.x_test, self.y_test
        raise ValueError(f"unknown split {name!r}")

    @property
    def n_classes(self):
        return self.spec.n_classes


def _balanced_labels(rng, n, n_classes):
    labels = np.arange(n) % n_classes
    rng.shuffle(labels)
    return labels


def make_dataset(spec: DatasetSpec) -> Dataset:
    """Draw anisotropic Gaussian clusters, one per class.

    Class means are random directions scaled so neighbouring means sit
    roughly ``class_separation`` apart; each class gets its own random
    rotation and per-axis scales drawn log-uniformly from [0.5, 2].
    """
    spec.validate()
    d, c = spec.input_dim, spec.n_classes
    rng = rng_for(spec.seed, "dataset", spec.kind)
    dirs = rng.standard_normal((c, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    means = dirs * spec.class_separation / np.sqrt(2.0)
    transforms = []
    for _ in range(c):
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        scales = np.exp(rng.uniform(np.log(0.5), np.log(2.0), size=d))
        transforms.append(q * scales)

    def draw(n, stream):
        r = rng_for(spec.seed, "dataset", spec.kind, stream)
        y = _balanced_labels(r, n, c)
        z = r.standard_normal((n, d))
        x = np.empty((n, d))
        for k in range(c):
            idx = y == k
            x[idx] = means[k] + z[idx] @ transforms[k].T
        return x.astype(np.float32), y.astype(np.int64)

    x_tr, y_tr = draw(spec.n_train, "train")
    x_te, y_te = draw(spec.n_test, "test")
    for arr in (x_tr, y_tr, x_te, y_te):
        arr.flags.writeable = False
    return Dataset(spec, x_tr, y_tr, x_te, y_te)
