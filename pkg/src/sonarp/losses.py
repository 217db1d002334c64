"""Loss functions.  Each returns ``(value, grad)`` with the value averaged
over the batch and ``grad`` the derivative of that value w.r.t. predictions."""

from __future__ import annotations

import numpy as np

PROB_EPS = 1e-7
PROB_TOL = 1e-6


def _check_probs(p):
    if np.any(p < -PROB_TOL) or np.any(p > 1 + PROB_TOL):
        raise ValueError("probabilities outside [0, 1]")


def _one_hot(y, n_classes, dtype):
    y = np.asarray(y)
    if y.ndim == 1:
        out = np.zeros((y.shape[0], n_classes), dtype=dtype)
        out[np.arange(y.shape[0]), y.astype(int)] = 1
        return out
    return y.astype(dtype, copy=False)


def mse(pred, target):
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def mae(pred, target):
    target = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def categorical_ce(pred, target):
    """``-mean_n sum_c y log p``; targets may be one-hot rows or class indices."""
    _check_probs(pred)
    y = _one_hot(target, pred.shape[1], pred.dtype)
    p = np.clip(pred, PROB_EPS, 1 - PROB_EPS)
    n = pred.shape[0]
    value = -float(np.sum(y * np.log(p))) / n
    return value, -y / p / n


def binary_ce(pred, target):
    _check_probs(pred)
    y = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    p = np.clip(pred, PROB_EPS, 1 - PROB_EPS)
    value = -float(np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))
    return value, (p - y) / (p * (1 - p)) / p.size


def hinge(pred, target):
    """Targets in {-1, +1}."""
    y = np.asarray(target, dtype=pred.dtype).reshape(pred.shape)
    margin = 1 - y * pred
    value = float(np.mean(np.maximum(margin, 0)))
    return value, -y * (margin > 0) / pred.size


LOSSES = {"mse": mse, "mae": mae, "categorical_ce": categorical_ce,
          "binary_ce": binary_ce, "hinge": hinge}


def loss(kind: str, pred, target):
    if kind not in LOSSES:
        raise ValueError(f"unknown loss {kind!r}")
    return LOSSES[kind](pred, target)


def multitask_loss(pred_obj, y_obj, pred_cls, y_cls, gamma: float):
    """Objectness MSE plus ``gamma`` times class cross-entropy."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    l_obj, g_obj = mse(pred_obj, y_obj)
    l_cls, g_cls = categorical_ce(pred_cls, y_cls)
    return l_obj + gamma * l_cls, (g_obj, gamma * g_cls)


def make_loss(kind: str, gamma: float = 1.0):
    """Loss callable ``(pred, target) -> (value, grad)`` used by the trainer."""
    if kind == "multitask":
        def fn(pred, target):
            return multitask_loss(pred[0], target[0], pred[1], target[1], gamma)
        return fn
    if kind not in LOSSES:
        raise ValueError(f"unknown loss {kind!r}")
    return LOSSES[kind]
