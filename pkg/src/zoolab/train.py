"""Mini-batch training of one stage (pretraining or fine-tuning)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from .data import Dataset
from .errors import DivergedTraining
from .losses import loss_cross_entropy, loss_infonce
from .nn import backward, forward, layer_names, params_of, snapshot
from .tensor import ModelCheckpoint, rng_for

TASKS = ("supervised", "contrastive")
OPTIMIZERS = ("adamw", "sgd")

ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
SGD_MOMENTUM = 0.99


@dataclass(frozen=True)
class StageHParams:
    task: str = "supervised"
    lr: float = 1e-3
    weight_decay: float = 0.0
    optimizer: str = "adamw"
    epochs: int = 10
    batch_size: int = 64
    momentum: float = SGD_MOMENTUM
    temperature: float = 0.5
    noise_sigma: float = 0.1
    dropout_p: float = 0.1

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")


@dataclass
class TrainTrajectory:
    checkpoints: list[ModelCheckpoint] = field(default_factory=list)
    per_epoch_metrics: list[dict] = field(default_factory=list)

    @property
    def final(self) -> ModelCheckpoint:
        return self.checkpoints[-1]


class _AdamW:
    def __init__(self, params, lr, weight_decay):
        self.lr, self.wd = lr, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        b1, b2 = ADAM_BETAS
        self.t += 1
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1.0 - b1) * g
            self.v[k] = b2 * self.v[k] + (1.0 - b2) * g * g
            p *= 1.0 - self.lr * self.wd
            p -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + ADAM_EPS)


class _SGD:
    def __init__(self, params, lr, weight_decay, momentum):
        self.lr, self.wd, self.mu = lr, weight_decay, momentum
        self.buf = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        for k, p in params.items():
            g = grads[k] + self.wd * p if self.wd else grads[k]
            self.buf[k] = self.mu * self.buf[k] + g
            p -= self.lr * self.buf[k]


def _augment(rng, x, sigma, p):
    noisy = x + sigma * rng.standard_normal(x.shape)
    return noisy * (rng.random(x.shape) >= p)


def _contrastive_loss(params, layers, x, rng, hp, with_grads=True):
    va = _augment(rng, x, hp.noise_sigma, hp.dropout_p)
    vb = _augment(rng, x, hp.noise_sigma, hp.dropout_p)
    za, ca = forward(params, layers, va)
    zb, cb = forward(params, layers, vb)
    loss, (ga, gb) = loss_infonce(za, zb, hp.temperature)
    if not with_grads:
        return loss, None
    grads, _ = backward(params, layers, ca, ga)
    grads_b, _ = backward(params, layers, cb, gb)
    for k in grads:
        grads[k] += grads_b[k]
    return loss, grads


def _supervised_eval(params, layers, x, y):
    out, _ = forward(params, layers, x)
    loss, _ = loss_cross_entropy(out, y)
    acc = float(np.mean(np.argmax(out, axis=1) == y))
    return acc, loss


def _contrastive_eval(params, layers, x, hp):
    # identical views for every model and epoch so losses are comparable
    rng = rng_for(0, "contrastive-eval")
    losses, weights = [], []
    for i in range(0, len(x), hp.batch_size):
        xb = x[i : i + hp.batch_size]
        loss, _ = _contrastive_loss(params, layers, xb, rng, hp, with_grads=False)
        losses.append(loss)
        weights.append(len(xb))
    return float(np.average(losses, weights=weights))


def train_stage(
    start: ModelCheckpoint, dataset: Dataset, hp: StageHParams, rng: np.random.Generator
) -> TrainTrajectory:
    """Train from ``start`` and return one checkpoint per epoch (epoch 0 = start).

    Parameters are kept in float64 between steps; emitted checkpoints are
    float32 snapshots.
    """
    layers = layer_names(start.names)
    params = params_of(start)
    if hp.optimizer == "adamw":
        opt = _AdamW(params, hp.lr, hp.weight_decay)
    else:
        opt = _SGD(params, hp.lr, hp.weight_decay, hp.momentum)
    x_tr = dataset.x_train.astype(np.float64)
    y_tr = dataset.y_train
    x_te = dataset.x_test.astype(np.float64)
    y_te = dataset.y_test
    traj = TrainTrajectory([start.replace(epoch=0)], [])
    n = len(x_tr)

    with threadpool_limits(limits=1), np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, hp.epochs + 1):
            order = rng.permutation(n)
            batch_losses = []
            for i in range(0, n, hp.batch_size):
                idx = order[i : i + hp.batch_size]
                with np.errstate(all="ignore"):
                    if hp.task == "supervised":
                        out, cache = forward(params, layers, x_tr[idx])
                        loss, gout = loss_cross_entropy(out, y_tr[idx])
                        grads = backward(params, layers, cache, gout)[0] if np.isfinite(loss) else None
                    else:
                        try:
                            loss, grads = _contrastive_loss(params, layers, x_tr[idx], rng, hp)
                        except ValueError:
                            loss = np.nan
                if not np.isfinite(loss):
                    raise DivergedTraining(epoch, traj)
                opt.step(params, grads)
                batch_losses.append(loss)
            with np.errstate(all="ignore"):
                if not all(np.all(np.isfinite(p)) for p in params.values()):
                    raise DivergedTraining(epoch, traj)
                if hp.task == "supervised":
                    train_acc, train_loss = _supervised_eval(params, layers, x_tr, y_tr)
                    test_acc, test_loss = _supervised_eval(params, layers, x_te, y_te)
                else:
                    train_acc = test_acc = None
                    train_loss = float(np.mean(batch_losses))
                    test_loss = _contrastive_eval(params, layers, x_te, hp)
            if not (np.isfinite(train_loss) and np.isfinite(test_loss)):
                raise DivergedTraining(epoch, traj)
            ckpt = snapshot(params, start, epoch)
            if not all(np.all(np.isfinite(t.data)) for t in ckpt.tensors):
                raise DivergedTraining(epoch, traj)
            traj.checkpoints.append(ckpt)
            traj.per_epoch_metrics.append(
                {
                    "epoch": epoch,
                    "train_acc": train_acc,
                    "test_acc": test_acc,
                    "train_loss": float(train_loss),
                    "test_loss": float(test_loss),
                }
            )
    return traj
