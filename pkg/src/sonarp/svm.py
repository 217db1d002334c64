"""Multi-class linear SVM: L2-regularized hinge loss, one-vs-one voting."""

from __future__ import annotations

from itertools import combinations

import numpy as np


def l2_normalize(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), eps)


def _fit_binary(x, y, lam, iters):
    """Full-batch Pegasos on ``lam/2 |w|^2 + mean(hinge)``; the bias is an
    extra constant feature.  Returns the average of the second-half iterates."""
    xa = np.hstack([x, np.ones((x.shape[0], 1))])
    w = np.zeros(xa.shape[1])
    avg = np.zeros_like(w)
    radius = 1.0 / np.sqrt(lam)
    start = iters // 2
    for t in range(1, iters + 1):
        viol = y * (xa @ w) < 1
        g = (y[viol, None] * xa[viol]).sum(0) / len(y)
        w *= 1 - 1.0 / t
        w += g / (lam * t)
        nrm = np.linalg.norm(w)
        if nrm > radius:
            w *= radius / nrm
        if t > start:
            avg += w
    return avg / (iters - start)


class LinearSVM:
    """One-vs-one linear SVM with ``lambda = 1 / (C * n)`` per pair."""

    def __init__(self, C: float = 1.0, iters: int = 400):
        if C <= 0:
            raise ValueError("C must be positive")
        self.C, self.iters = C, iters
        self.classes_ = None
        self.models: dict[tuple[int, int], np.ndarray] = {}

    def fit(self, x, y) -> "LinearSVM":
        x, y = np.asarray(x, dtype=np.float64), np.asarray(y)
        self.classes_ = np.unique(y)
        self.models = {}
        if len(self.classes_) < 2:
            return self
        for a, b in combinations(range(len(self.classes_)), 2):
            sel = (y == self.classes_[a]) | (y == self.classes_[b])
            yy = np.where(y[sel] == self.classes_[a], 1.0, -1.0)
            lam = 1.0 / (self.C * sel.sum())
            self.models[(a, b)] = _fit_binary(x[sel], yy, lam, self.iters)
        return self

    def decision_votes(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        votes = np.zeros((x.shape[0], len(self.classes_)))
        xa = np.hstack([x, np.ones((x.shape[0], 1))])
        for (a, b), w in self.models.items():
            pos = xa @ w > 0
            votes[pos, a] += 1
            votes[~pos, b] += 1
        return votes

    def predict(self, x) -> np.ndarray:
        if self.classes_ is None:
            raise RuntimeError("fit before predict")
        if len(self.classes_) == 1:
            return np.full(len(x), self.classes_[0])
        # ties go to the lowest class index
        return self.classes_[np.argmax(self.decision_votes(x), axis=1)]
