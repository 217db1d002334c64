"""Layers with hand-written forward and backward passes.

Every layer works on a batch: images are ``(N, C, H, W)``, vectors
``(N, F)``.  ``forward`` caches what ``backward`` needs; ``backward``
receives the gradient of a scalar loss w.r.t. the layer output, stores
parameter gradients in ``self.grads`` and returns the gradient w.r.t. the
input.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .initializers import init_weights


class ConfigurationError(ValueError):
    pass


class Layer:
    kind = "Layer"

    def __init__(self, name: str | None = None):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, shape: tuple[int, ...]) -> tuple[int, ...]:
        return tuple(shape)

    def initialize(self, rng: np.random.Generator) -> None:
        pass

    def hyperparams(self) -> dict:
        return {}

    def config(self) -> dict:
        return {"kind": self.kind, "name": self.name, **self.hyperparams()}

    # parameter access shared with the containers
    def named_params(self, prefix: str = ""):
        for k, v in self.params.items():
            yield prefix + k, v

    def named_grads(self, prefix: str = ""):
        for k, v in self.grads.items():
            yield prefix + k, v

    def named_buffers(self, prefix: str = ""):
        for k, v in self.buffers.items():
            yield prefix + k, v

    def set_tensor(self, key: str, value: np.ndarray) -> None:
        if key in self.params:
            self.params[key] = value
        elif key in self.buffers:
            self.buffers[key] = value
        else:
            raise KeyError(key)

    def layers(self):
        yield self

    def __repr__(self):
        hp = ", ".join(f"{k}={v}" for k, v in self.hyperparams().items())
        return f"{self.kind}({self.name}: {hp})"


def conv_output_size(size: int, kernel: int, padding: int, stride: int) -> int:
    """``O = (W - N + 2P) / S + 1``; raises unless the division is exact."""
    span = size - kernel + 2 * padding
    if span < 0:
        raise ConfigurationError(f"kernel {kernel} larger than padded input {size + 2 * padding}")
    if span % stride:
        raise ConfigurationError(
            f"(W - N + 2P) = {span} not divisible by stride {stride}"
        )
    return span // stride + 1


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        return int(v[0]), int(v[1])
    return int(v), int(v)


class Conv2D(Layer):
    kind = "Conv2D"

    def __init__(self, in_channels: int, filters: int, kernel=3, stride: int = 1,
                 padding="same", init: str = "glorot", name: str | None = None):
        super().__init__(name)
        self.in_channels = int(in_channels)
        self.filters = int(filters)
        self.kernel = _pair(kernel)
        self.stride = int(stride)
        kh, kw = self.kernel
        if padding == "same":
            if kh % 2 == 0 or kw % 2 == 0:
                raise ConfigurationError(f"'same' padding needs odd kernel extents, got {self.kernel}")
            if self.stride != 1:
                raise ConfigurationError("'same' padding is only defined for stride 1")
            self.padding = ((kh - 1) // 2, (kw - 1) // 2)
        elif padding == "valid":
            self.padding = (0, 0)
        else:
            self.padding = _pair(padding)
        self.init = init
        self.input_grad = True  # cleared for a network's first layer
        self.params = {
            "weight": np.zeros((self.filters, self.in_channels, kh, kw), np.float32),
            "bias": np.zeros(self.filters, np.float32),
        }
        self._cache = None

    def hyperparams(self):
        return {"in_channels": self.in_channels, "filters": self.filters,
                "kernel": list(self.kernel), "stride": self.stride,
                "padding": list(self.padding), "init": self.init}

    def initialize(self, rng):
        w = self.params["weight"]
        self.params["weight"] = init_weights(self.init, w.shape, rng, dtype=w.dtype)
        self.params["bias"] = np.zeros_like(self.params["bias"])

    def output_shape(self, shape):
        c, h, w = shape
        if c != self.in_channels:
            raise ConfigurationError(f"{self.name}: expected {self.in_channels} channels, got {c}")
        (kh, kw), (ph, pw), s = self.kernel, self.padding, self.stride
        return (self.filters, conv_output_size(h, kh, ph, s), conv_output_size(w, kw, pw, s))

    def _wmat(self):
        # (F, kh*kw*C) matching the channels-last column order
        return self.params["weight"].transpose(0, 2, 3, 1).reshape(self.filters, -1)

    def forward(self, x, train=False):
        n = x.shape[0]
        f, ho, wo = self.output_shape(x.shape[1:])
        (kh, kw), (ph, pw), s = self.kernel, self.padding, self.stride
        xh = x.transpose(0, 2, 3, 1)
        if ph or pw:
            xh = np.pad(xh, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        xh = np.ascontiguousarray(xh)
        if kh == kw == 1 and s == 1:
            cols = xh.reshape(n * ho * wo, -1)
        else:
            win = sliding_window_view(xh, (kh, kw), axis=(1, 2))[:, ::s, ::s][:, :ho, :wo]
            cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, -1)
        out = cols @ self._wmat().T
        out += self.params["bias"]
        self._cache = (cols, xh.shape, x.shape)
        return np.ascontiguousarray(out.reshape(n, ho, wo, f).transpose(0, 3, 1, 2))

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called without a forward cache")
        cols, xh_shape, x_shape = self._cache
        n, f, ho, wo = grad.shape
        (kh, kw), (ph, pw), s = self.kernel, self.padding, self.stride
        c = self.in_channels
        g = grad.transpose(0, 2, 3, 1).reshape(-1, f)
        self.grads["weight"] = np.ascontiguousarray(
            (cols.T @ g).T.reshape(f, kh, kw, c).transpose(0, 3, 1, 2))
        self.grads["bias"] = g.sum(axis=0)
        if not self.input_grad:
            return None
        if kh == kw == 1 and s == 1:
            dxh = (g @ self._wmat()).reshape(xh_shape)
        elif s == 1:
            # input gradient as a full convolution with the flipped kernel
            gh = np.pad(grad.transpose(0, 2, 3, 1), ((0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1), (0, 0)))
            win = sliding_window_view(np.ascontiguousarray(gh), (kh, kw), axis=(1, 2))
            gcols = win.transpose(0, 1, 2, 4, 5, 3).reshape(-1, kh * kw * f)
            wflip = self.params["weight"][:, :, ::-1, ::-1].transpose(2, 3, 0, 1).reshape(-1, c)
            dxh = (gcols @ wflip).reshape(n, xh_shape[1], xh_shape[2], c)
        else:
            dcols = (g @ self._wmat()).reshape(n, ho, wo, kh, kw, c)
            dxh = np.zeros(xh_shape, dtype=grad.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxh[:, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, i, j]
        dxh = dxh[:, ph:ph + x_shape[2], pw:pw + x_shape[3]]
        return np.ascontiguousarray(dxh.transpose(0, 3, 1, 2))


class MaxPool2x2(Layer):
    """Non-overlapping 2x2 max pooling.

    Odd extents are a configuration error unless ``truncate_odd`` is set, in
    which case the last row/column is dropped (never padded).
    """

    kind = "MaxPool2x2"

    def __init__(self, truncate_odd: bool = False, name=None):
        super().__init__(name)
        self.truncate_odd = bool(truncate_odd)
        self._cache = None

    def hyperparams(self):
        return {"truncate_odd": self.truncate_odd} if self.truncate_odd else {}

    def output_shape(self, shape):
        c, h, w = shape
        if (h % 2 or w % 2) and not self.truncate_odd:
            raise ConfigurationError(f"{self.name}: 2x2 pooling needs even extents, got {h}x{w}")
        if h < 2 or w < 2:
            raise ConfigurationError(f"{self.name}: input {h}x{w} too small to pool")
        return (c, h // 2, w // 2)

    # offsets of the four window cells in row-major order
    _CELLS = ((0, 0), (0, 1), (1, 0), (1, 1))

    def forward(self, x, train=False):
        _, ho, wo = self.output_shape(x.shape[1:])
        views = [x[:, :, i:2 * ho:2, j:2 * wo:2] for i, j in self._CELLS]
        out = np.maximum(np.maximum(views[0], views[1]), np.maximum(views[2], views[3]))
        # first (row-major) cell holding the max wins ties
        idx = np.full(out.shape, 3, dtype=np.uint8)
        for k in (2, 1, 0):
            idx[views[k] == out] = k
        self._cache = (idx, x.shape)
        return out

    def backward(self, grad):
        if self._cache is None:
            raise RuntimeError(f"{self.name}: backward called without a forward cache")
        idx, shape = self._cache
        _, _, ho, wo = grad.shape
        out = np.zeros(shape, dtype=grad.dtype)
        zero = np.zeros((), dtype=grad.dtype)
        for k, (i, j) in enumerate(self._CELLS):
            out[:, :, i:2 * ho:2, j:2 * wo:2] = np.where(idx == k, grad, zero)
        return out


class GlobalAvgPool(Layer):
    kind = "GlobalAvgPool"

    def output_shape(self, shape):
        return (shape[0],)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, grad):
        n, c, h, w = self._shape
        return np.broadcast_to(grad[:, :, None, None] / (h * w), self._shape).copy()


class Flatten(Layer):
    kind = "Flatten"

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def forward(self, x, train=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Dense(Layer):
    """Fully connected layer, weights stored ``(out, in)``."""

    kind = "Dense"

    def __init__(self, in_features: int, units: int, init: str = "glorot", name=None):
        super().__init__(name)
        self.in_features = int(in_features)
        self.units = int(units)
        self.init = init
        self.params = {
            "weight": np.zeros((self.units, self.in_features), np.float32),
            "bias": np.zeros(self.units, np.float32),
        }

    def hyperparams(self):
        return {"in_features": self.in_features, "units": self.units, "init": self.init}

    def initialize(self, rng):
        w = self.params["weight"]
        self.params["weight"] = init_weights(self.init, w.shape, rng, dtype=w.dtype)
        self.params["bias"] = np.zeros_like(self.params["bias"])

    def output_shape(self, shape):
        if shape != (self.in_features,):
            raise ConfigurationError(f"{self.name}: expected ({self.in_features},), got {shape}")
        return (self.units,)

    def forward(self, x, train=False):
        if x.shape[1:] != (self.in_features,):
            raise ConfigurationError(f"{self.name}: expected (N, {self.in_features}), got {x.shape}")
        self._x = x
        return x @ self.params["weight"].T + self.params["bias"]

    def backward(self, grad):
        self.grads["weight"] = grad.T @ self._x
        self.grads["bias"] = grad.sum(axis=0)
        return grad @ self.params["weight"]


class BatchNorm(Layer):
    """Per-feature (dense) or per-channel (conv) normalization.

    Running statistics are an exponential average with decay ``momentum``
    over batch mean and unbiased ``n / (n - 1)`` variance.  The average is
    bias-corrected by a step counter, so the first update takes the batch
    statistics and short runs are not dominated by the initial values.
    """

    kind = "BatchNorm"

    def __init__(self, features: int, eps: float = 1e-3, momentum: float = 0.99, name=None):
        super().__init__(name)
        self.features = int(features)
        self.eps = float(eps)
        self.momentum = float(momentum)
        self.params = {"gamma": np.ones(features, np.float32), "beta": np.zeros(features, np.float32)}
        self.buffers = {"running_mean": np.zeros(features, np.float32),
                        "running_var": np.ones(features, np.float32),
                        "steps": np.zeros(1, np.float32)}

    def hyperparams(self):
        return {"features": self.features, "eps": self.eps, "momentum": self.momentum}

    def initialize(self, rng):
        dt = self.params["gamma"].dtype
        self.params = {"gamma": np.ones(self.features, dt), "beta": np.zeros(self.features, dt)}
        self.buffers = {"running_mean": np.zeros(self.features, dt),
                        "running_var": np.ones(self.features, dt),
                        "steps": np.zeros(1, dt)}

    def output_shape(self, shape):
        if shape[0] != self.features:
            raise ConfigurationError(f"{self.name}: expected {self.features} features, got {shape}")
        return tuple(shape)

    def _axes(self, x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    def _bc(self, v, x):
        return v if x.ndim == 2 else v[None, :, None, None]

    def forward(self, x, train=False):
        axes = self._axes(x)
        gamma, beta = self.params["gamma"], self.params["beta"]
        if train:
            count = x.size // self.features
            if x.shape[0] < 2:
                raise ValueError("batch normalization in train mode needs a batch of at least 2")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            b = self.buffers
            b["steps"] = b["steps"] + 1
            m = self.momentum
            # weight of the new batch in the debiased average
            a = (1 - m) / (1 - m ** float(b["steps"][0]))
            dt = b["running_mean"].dtype
            b["running_mean"] = ((1 - a) * b["running_mean"] + a * mean).astype(dt)
            b["running_var"] = ((1 - a) * b["running_var"] + a * var * count / (count - 1)).astype(dt)
        else:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bc(mean, x)) * self._bc(inv_std, x)
        self._cache = (xhat, inv_std, train, axes)
        return self._bc(gamma, x) * xhat + self._bc(beta, x)

    def backward(self, grad):
        xhat, inv_std, train, axes = self._cache
        self.grads["gamma"] = (grad * xhat).sum(axis=axes)
        self.grads["beta"] = grad.sum(axis=axes)
        dxhat = grad * self._bc(self.params["gamma"], grad)
        if not train:
            return dxhat * self._bc(inv_std, grad)
        m = grad.size // self.features
        s1 = dxhat.sum(axis=axes)
        s2 = (dxhat * xhat).sum(axis=axes)
        return self._bc(inv_std / m, grad) * (m * dxhat - self._bc(s1, grad) - xhat * self._bc(s2, grad))


class Dropout(Layer):
    """Drops each unit with probability ``p`` while training; survivors pass
    unchanged.  At inference activations are scaled by the keep rate ``1 - p``."""

    kind = "Dropout"

    def __init__(self, p: float = 0.5, name=None):
        super().__init__(name)
        if not 0.0 <= p < 1.0:
            raise ConfigurationError(f"dropout rate must be in [0, 1), got {p}")
        self.p = float(p)
        self.rng = np.random.default_rng(0)

    def hyperparams(self):
        return {"p": self.p}

    def initialize(self, rng):
        self.rng = np.random.default_rng(int(rng.integers(2**63)))

    def forward(self, x, train=False):
        if train:
            self._mask = (self.rng.random(x.shape) >= self.p).astype(x.dtype)
            self._train = True
            return x * self._mask
        self._train = False
        return x * x.dtype.type(1.0 - self.p)

    def backward(self, grad):
        if self._train:
            return grad * self._mask
        return grad * grad.dtype.type(1.0 - self.p)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


ACTIVATIONS = ("relu", "sigmoid", "tanh", "softplus", "elu", "softmax", "linear")


def activation(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0)
    if name == "sigmoid":
        return _sigmoid(x)
    if name == "tanh":
        return np.tanh(x)
    if name == "softplus":
        return np.logaddexp(0, x)
    if name == "elu":
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0)))
    if name == "softmax":
        return softmax(x, axis=1 if x.ndim > 1 else 0)
    if name == "linear":
        return x
    raise ValueError(f"unknown activation {name!r}")


class Activation(Layer):
    kind = "Activation"

    def __init__(self, fn: str, name=None):
        super().__init__(name)
        if fn not in ACTIVATIONS:
            raise ValueError(f"unknown activation {fn!r}")
        self.fn = fn

    def hyperparams(self):
        return {"fn": self.fn}

    def forward(self, x, train=False):
        self._x = x
        self._y = activation(self.fn, x)
        return self._y

    def backward(self, grad):
        x, y = self._x, self._y
        fn = self.fn
        if fn == "relu":
            return grad * (x > 0)
        if fn == "sigmoid":
            return grad * y * (1 - y)
        if fn == "tanh":
            return grad * (1 - y * y)
        if fn == "softplus":
            return grad * _sigmoid(x)
        if fn == "elu":
            return grad * np.where(x > 0, 1, y + 1)
        if fn == "softmax":
            return y * (grad - (grad * y).sum(axis=1, keepdims=True))
        return grad


class Sequential(Layer):
    kind = "Sequential"

    def __init__(self, layers: list[Layer], name=None):
        super().__init__(name)
        self.children = list(layers)
        names = [l.name for l in self.children]
        if None in names or len(set(names)) != len(names):
            raise ConfigurationError(f"layer names must be unique and set: {names}")

    def config(self):
        return {"kind": self.kind, "name": self.name, "layers": [l.config() for l in self.children]}

    def initialize(self, rng):
        for l in self.children:
            l.initialize(rng)

    def output_shape(self, shape):
        for l in self.children:
            shape = l.output_shape(shape)
        return shape

    def forward(self, x, train=False):
        for l in self.children:
            x = l.forward(x, train)
        return x

    def forward_until(self, x, name: str, train=False):
        """Run the chain up to and including the layer called ``name``."""
        for l in self.children:
            x = l.forward(x, train)
            if l.name == name:
                return x
        raise KeyError(f"no layer named {name!r}")

    def backward(self, grad):
        for l in reversed(self.children):
            grad = l.backward(grad)
        return grad

    def _walk(self, attr, prefix):
        for l in self.children:
            yield from getattr(l, attr)(f"{prefix}{l.name}.")

    def named_params(self, prefix=""):
        return self._walk("named_params", prefix)

    def named_grads(self, prefix=""):
        return self._walk("named_grads", prefix)

    def named_buffers(self, prefix=""):
        return self._walk("named_buffers", prefix)

    def child(self, name: str) -> Layer:
        for l in self.children:
            if l.name == name:
                return l
        raise KeyError(f"no layer named {name!r}")

    def set_tensor(self, key, value):
        head, _, rest = key.partition(".")
        self.child(head).set_tensor(rest, value)

    def layers(self):
        for l in self.children:
            yield from l.layers()


class ChannelConcat(Layer):
    """Parallel branches over the same input, outputs stacked along channels."""

    kind = "ChannelConcat"

    def __init__(self, branches: list[Sequential], name=None):
        super().__init__(name)
        self.children = list(branches)

    def config(self):
        return {"kind": self.kind, "name": self.name, "branches": [b.config() for b in self.children]}

    def initialize(self, rng):
        for b in self.children:
            b.initialize(rng)

    def output_shape(self, shape):
        outs = [b.output_shape(shape) for b in self.children]
        if len({o[1:] for o in outs}) != 1:
            raise ConfigurationError(f"{self.name}: branch spatial shapes differ: {outs}")
        return (sum(o[0] for o in outs),) + outs[0][1:]

    def forward(self, x, train=False):
        outs = [b.forward(x, train) for b in self.children]
        self._splits = np.cumsum([o.shape[1] for o in outs])[:-1]
        return np.concatenate(outs, axis=1)

    def backward(self, grad):
        parts = np.split(grad, self._splits, axis=1)
        total = None
        for b, g in zip(self.children, parts):
            dx = b.backward(np.ascontiguousarray(g))
            total = dx if total is None else total + dx
        return total

    def named_params(self, prefix=""):
        for b in self.children:
            yield from b.named_params(f"{prefix}{b.name}.")

    def named_grads(self, prefix=""):
        for b in self.children:
            yield from b.named_grads(f"{prefix}{b.name}.")

    def named_buffers(self, prefix=""):
        for b in self.children:
            yield from b.named_buffers(f"{prefix}{b.name}.")

    def set_tensor(self, key, value):
        head, _, rest = key.partition(".")
        for b in self.children:
            if b.name == head:
                b.set_tensor(rest, value)
                return
        raise KeyError(key)

    def layers(self):
        for b in self.children:
            yield from b.layers()


LAYER_KINDS = {cls.kind: cls for cls in
               (Conv2D, MaxPool2x2, GlobalAvgPool, Flatten, Dense, BatchNorm, Dropout, Activation)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("kind")
    name = cfg.pop("name")
    if kind == "Sequential":
        return Sequential([layer_from_config(c) for c in cfg["layers"]], name=name)
    if kind == "ChannelConcat":
        return ChannelConcat([layer_from_config(c) for c in cfg["branches"]], name=name)
    if kind not in LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    if kind == "Conv2D":
        cfg["kernel"] = tuple(cfg["kernel"])
        cfg["padding"] = tuple(cfg["padding"])
    return LAYER_KINDS[kind](name=name, **cfg)
