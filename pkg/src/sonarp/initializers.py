"""Weight initialization schemes."""

from __future__ import annotations

import math

import numpy as np


def fans(shape: tuple[int, ...]) -> tuple[int, int]:
    """(fan_in, fan_out) for dense ``(out, in)`` or conv ``(f, c, kh, kw)`` weights."""
    if len(shape) == 2:
        return shape[1], shape[0]
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        return shape[1] * receptive, shape[0] * receptive
    raise ValueError(f"cannot derive fans for shape {shape}")


def init_weights(scheme: str, shape, rng: np.random.Generator, dtype=np.float32, **kw) -> np.ndarray:
    shape = tuple(int(s) for s in shape)
    if not shape or any(s < 1 for s in shape):
        raise ValueError(f"degenerate weight shape {shape}")
    if scheme == "uniform":
        s = kw.get("scale", 0.05)
        w = rng.uniform(-s, s, size=shape)
    elif scheme == "gaussian":
        w = rng.normal(0.0, kw.get("std", 0.05), size=shape)
    elif scheme == "glorot":
        fan_in, fan_out = fans(shape)
        s = math.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-s, s, size=shape)
    elif scheme == "orthogonal":
        gain = kw.get("gain", 1.0)
        rows = shape[0]
        cols = int(np.prod(shape[1:])) if len(shape) > 1 else 1
        if len(shape) == 1:
            raise ValueError("orthogonal init needs at least a 2-D shape")
        a = rng.normal(0.0, 1.0, size=(rows, cols))
        u, _, vt = np.linalg.svd(a, full_matrices=False)
        q = u if u.shape == (rows, cols) else vt
        w = gain * q.reshape(shape)
    else:
        raise ValueError(f"unknown init scheme {scheme!r}")
    return w.astype(dtype)
