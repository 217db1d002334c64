"""Gradient descent optimizers updating parameter arrays in place."""

from __future__ import annotations

import numpy as np


class TrainingError(RuntimeError):
    pass


class NonFiniteGradientError(TrainingError):
    pass


class Optimizer:
    kind = "base"

    def __init__(self, lr: float = 0.01):
        self.lr = float(lr)
        self.n = 0
        self.state: dict[str, dict[str, np.ndarray]] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for {name!r} at step {self.n + 1}")
        self.n += 1
        for name, p in params.items():
            g = grads[name]
            slot = self.state.setdefault(name, {})
            p -= self._delta(slot, g).astype(p.dtype, copy=False)

    def _delta(self, slot, g):
        raise NotImplementedError


class SGD(Optimizer):
    kind = "sgd"

    def _delta(self, slot, g):
        return self.lr * g


class AdaGrad(Optimizer):
    kind = "adagrad"

    def __init__(self, lr=0.01, eps=1e-8):
        super().__init__(lr)
        self.eps = eps

    def _delta(self, slot, g):
        r = slot.setdefault("r", np.zeros_like(g))
        r += g * g
        return self.lr * g / (self.eps + np.sqrt(r))


class RMSProp(Optimizer):
    kind = "rmsprop"

    def __init__(self, lr=0.001, rho=0.9, eps=1e-8):
        super().__init__(lr)
        self.rho, self.eps = rho, eps

    def _delta(self, slot, g):
        r = slot.setdefault("r", np.zeros_like(g))
        r *= self.rho
        r += (1 - self.rho) * g * g
        return self.lr * g / np.sqrt(self.eps + r)


class Adam(Optimizer):
    """Bias-corrected Adam: ``alpha * s_hat / (sqrt(r_hat) + eps)``."""

    kind = "adam"

    def __init__(self, lr=0.01, rho1=0.9, rho2=0.999, eps=1e-8):
        super().__init__(lr)
        self.rho1, self.rho2, self.eps = rho1, rho2, eps

    def _delta(self, slot, g):
        s = slot.setdefault("s", np.zeros_like(g))
        r = slot.setdefault("r", np.zeros_like(g))
        s *= self.rho1
        s += (1 - self.rho1) * g
        r *= self.rho2
        r += (1 - self.rho2) * g * g
        s_hat = s / (1 - self.rho1 ** self.n)
        r_hat = r / (1 - self.rho2 ** self.n)
        return self.lr * s_hat / (np.sqrt(r_hat) + self.eps)


OPTIMIZERS = {c.kind: c for c in (SGD, AdaGrad, RMSProp, Adam)}


def make_optimizer(kind: str, lr: float, **kw) -> Optimizer:
    try:
        return OPTIMIZERS[kind](lr=lr, **kw)
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}") from None
