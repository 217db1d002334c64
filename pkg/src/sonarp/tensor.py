"""Thin numeric layer over numpy arrays.

Tensors are plain ``numpy.ndarray`` objects, row-major, channels-first for
images ``(C, H, W)``.  The helpers here add the shape checks the rest of the
package relies on: broadcasting is limited to tensor-vs-scalar, and argmax
ties resolve to the lowest index.
"""

from __future__ import annotations

import numpy as np

DEFAULT_DTYPE = np.float32


class DimensionError(ValueError):
    pass


class DomainError(ValueError):
    pass


def tensor(data, dtype=DEFAULT_DTYPE) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(data, dtype=dtype))
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if any(d < 1 for d in arr.shape):
        raise DimensionError(f"all extents must be >= 1, got shape {arr.shape}")
    return arr


def matvec_affine(weights: np.ndarray, x: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """``z[i] = sum_j w[i, j] * x[j] + b[i]``."""
    weights, x, bias = np.asarray(weights), np.asarray(x), np.asarray(bias)
    if weights.ndim != 2 or x.ndim != 1 or bias.ndim != 1:
        raise DimensionError(
            f"expected w[out,in], x[in], b[out]; got {weights.shape}, {x.shape}, {bias.shape}"
        )
    if weights.shape[1] != x.shape[0] or weights.shape[0] != bias.shape[0]:
        raise DimensionError(
            f"shape mismatch: weights {weights.shape} vs x {x.shape} / bias {bias.shape}"
        )
    return weights @ x + bias


_BINARY = {
    "add": np.add,
    "sub": np.subtract,
    "mul": np.multiply,
    "div": np.divide,
    "max": np.maximum,
}
_UNARY = {"exp": np.exp, "log": np.log}


def elementwise(op: str, a, b=None) -> np.ndarray:
    a = np.asarray(a)
    if op in _UNARY:
        if b is not None:
            raise TypeError(f"{op} takes a single operand")
        if op == "log" and np.any(a <= 0):
            raise DomainError("log of non-positive value")
        return _UNARY[op](a)
    if op not in _BINARY:
        raise ValueError(f"unknown elementwise op {op!r}")
    b_arr = np.asarray(b)
    if b_arr.ndim != 0 and b_arr.shape != a.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b_arr.shape} (only scalar broadcast)")
    with np.errstate(divide="ignore", invalid="ignore"):
        return _BINARY[op](a, b_arr)


def reduce(op: str, a, axis: int | None = None) -> np.ndarray:
    """sum / mean / max / argmax.  argmax returns the first maximal index."""
    a = np.asarray(a)
    if axis is not None and not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for rank {a.ndim}")
    if a.size == 0 or (axis is not None and a.shape[axis] == 0):
        raise DimensionError("reduction over an empty axis")
    if op == "sum":
        return np.sum(a, axis=axis)
    if op == "mean":
        return np.mean(a, axis=axis)
    if op == "max":
        return np.max(a, axis=axis)
    if op == "argmax":
        # numpy already picks the first occurrence
        return np.argmax(a, axis=axis)
    raise ValueError(f"unknown reduction {op!r}")
