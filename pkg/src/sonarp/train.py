"""Mini-batch gradient descent over in-memory datasets."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from .losses import make_loss
from .netzoo import Network
from .optim import TrainingError, make_optimizer

log = logging.getLogger(__name__)


class DivergenceError(TrainingError):
    def __init__(self, msg, epoch):
        super().__init__(msg)
        self.epoch = epoch


@dataclass
class TrainConfig:
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    loss: str = "categorical_ce"
    gamma: float = 1.0
    lr: float = 0.01
    optimizer: str = "adam"

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class EpochLog:
    epoch: int
    train_loss: float
    val_loss: float | None = None
    val_metric: float | None = None


def take(y, idx):
    if isinstance(y, tuple):
        return tuple(v[idx] for v in y)
    return y[idx]


def n_samples(y) -> int:
    return len(y[0]) if isinstance(y, tuple) else len(y)


def batches(n: int, batch_size: int, rng: np.random.Generator):
    """Shuffled index batches covering every sample once.  A trailing batch of
    a single sample is folded into the previous one (batch norm needs two)."""
    perm = rng.permutation(n)
    bounds = list(range(0, n, batch_size)) + [n]
    if len(bounds) > 2 and bounds[-1] - bounds[-2] == 1:
        bounds.pop(-2)
    return [perm[a:b] for a, b in zip(bounds[:-1], bounds[1:])]


def accuracy_metric(pred, target) -> float:
    if isinstance(pred, tuple):
        pred, target = pred[1], target[1]
    target = np.asarray(target)
    if pred.ndim == 2 and pred.shape[1] > 1:
        labels = target if target.ndim == 1 else target.argmax(axis=1)
        return float(np.mean(pred.argmax(axis=1) == labels))
    return float(np.mean((pred.reshape(-1) >= 0.5) == (target.reshape(-1) >= 0.5)))


def train(net: Network, x: np.ndarray, y, config: TrainConfig,
          val: tuple | None = None,
          metric: Callable | None = accuracy_metric,
          loss_fn: Callable | None = None) -> list[EpochLog]:
    n = len(x)
    if n == 0:
        raise ValueError("empty training set")
    loss_fn = loss_fn or make_loss(config.loss, config.gamma)
    opt = make_optimizer(config.optimizer, config.lr)
    rng = np.random.default_rng(config.seed)
    net.seed_dropout(config.seed + 1)
    params = net.params()
    history = []
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for idx in batches(n, config.batch_size, rng):
            pred = net.forward(x[idx], train=True)
            value, grad = loss_fn(pred, take(y, idx))
            if not math.isfinite(value):
                raise DivergenceError(f"loss became {value} in epoch {epoch}", epoch)
            net.backward(grad)
            try:
                opt.step(params, net.grads())
            except TrainingError as exc:
                raise DivergenceError(f"{exc} (epoch {epoch})", epoch) from exc
            total += value * len(idx)
        row = EpochLog(epoch, total / n)
        if val is not None:
            vx, vy = val
            vpred = net.predict(vx)
            row.val_loss = float(loss_fn(vpred, vy)[0])
            if metric is not None:
                row.val_metric = metric(vpred, vy)
        log.info("epoch %d: %s", epoch, row)
        history.append(row)
    return history


def write_log(history: list[EpochLog], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "val_metric"])
        for r in history:
            w.writerow([r.epoch, f"{r.train_loss:.6g}",
                        "" if r.val_loss is None else f"{r.val_loss:.6g}",
                        "" if r.val_metric is None else f"{r.val_metric:.6g}"])


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
