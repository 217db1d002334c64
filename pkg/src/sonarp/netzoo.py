"""Network containers and builders for every architecture in the toolkit."""

from __future__ import annotations

import math

import numpy as np

from .layers import (
    Activation,
    BatchNorm,
    ChannelConcat,
    ConfigurationError,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2x2,
    Sequential,
    layer_from_config,
)

N_CLASSES = 11  # ten object classes plus background
OUTPUT_KINDS = ("class_probs", "score", "objectness", "objectness_map", "dual")


class SiameseBody(Layer):
    """Two weight-sharing branches fed with channel 0 and channel 1 of a
    ``(N, 2, H, W)`` input; branch vectors are concatenated, a before b."""

    kind = "Siamese"

    def __init__(self, branch: Sequential, head: Sequential, name="siamese"):
        super().__init__(name)
        self.branch = branch
        self.head = head

    @property
    def branch_a(self):
        return self.branch

    @property
    def branch_b(self):
        return self.branch

    def config(self):
        return {"kind": self.kind, "name": self.name,
                "branch": self.branch.config(), "head": self.head.config()}

    def initialize(self, rng):
        self.branch.initialize(rng)
        self.head.initialize(rng)

    def output_shape(self, shape):
        c, h, w = shape
        if c != 2:
            raise ConfigurationError(f"siamese input needs 2 channels, got {c}")
        (d,) = self.branch.output_shape((1, h, w))
        return self.head.output_shape((2 * d,))

    def merged_features(self, x, train=False):
        n = x.shape[0]
        both = np.concatenate([x[:, 0:1], x[:, 1:2]], axis=0)
        f = self.branch.forward(both, train)
        self._d = f.shape[1]
        return np.concatenate([f[:n], f[n:]], axis=1)

    def forward(self, x, train=False):
        return self.head.forward(self.merged_features(x, train), train)

    def backward(self, grad):
        g = self.head.backward(grad)
        d = self._d
        dx = self.branch.backward(np.concatenate([g[:, :d], g[:, d:]], axis=0))
        if dx is None:
            return None
        n = grad.shape[0]
        return np.concatenate([dx[:n], dx[n:]], axis=1)

    def _walk(self, attr, prefix):
        yield from getattr(self.branch, attr)(prefix + "branch.")
        yield from getattr(self.head, attr)(prefix + "head.")

    def named_params(self, prefix=""):
        return self._walk("named_params", prefix)

    def named_grads(self, prefix=""):
        return self._walk("named_grads", prefix)

    def named_buffers(self, prefix=""):
        return self._walk("named_buffers", prefix)

    def set_tensor(self, key, value):
        head, _, rest = key.partition(".")
        {"branch": self.branch, "head": self.head}[head].set_tensor(rest, value)

    def layers(self):
        yield from self.branch.layers()
        yield from self.head.layers()


class DualHeadBody(Layer):
    """Shared trunk feeding an objectness head and a class head."""

    kind = "DualHead"

    def __init__(self, trunk: Sequential, obj_head: Sequential, cls_head: Sequential, name="dual"):
        super().__init__(name)
        self.trunk, self.obj_head, self.cls_head = trunk, obj_head, cls_head

    def config(self):
        return {"kind": self.kind, "name": self.name, "trunk": self.trunk.config(),
                "obj_head": self.obj_head.config(), "cls_head": self.cls_head.config()}

    def _parts(self):
        return (("trunk", self.trunk), ("obj_head", self.obj_head), ("cls_head", self.cls_head))

    def initialize(self, rng):
        for _, p in self._parts():
            p.initialize(rng)

    def output_shape(self, shape):
        f = self.trunk.output_shape(shape)
        return (self.obj_head.output_shape(f), self.cls_head.output_shape(f))

    def forward(self, x, train=False):
        f = self.trunk.forward(x, train)
        return self.obj_head.forward(f, train), self.cls_head.forward(f, train)

    def backward(self, grad):
        g_obj, g_cls = grad
        return self.trunk.backward(self.obj_head.backward(g_obj) + self.cls_head.backward(g_cls))

    def _walk(self, attr, prefix):
        for key, part in self._parts():
            yield from getattr(part, attr)(f"{prefix}{key}.")

    def named_params(self, prefix=""):
        return self._walk("named_params", prefix)

    def named_grads(self, prefix=""):
        return self._walk("named_grads", prefix)

    def named_buffers(self, prefix=""):
        return self._walk("named_buffers", prefix)

    def set_tensor(self, key, value):
        head, _, rest = key.partition(".")
        dict(self._parts())[head].set_tensor(rest, value)

    def layers(self):
        for _, p in self._parts():
            yield from p.layers()


def body_from_config(cfg: dict) -> Layer:
    kind = cfg["kind"]
    if kind == "Siamese":
        return SiameseBody(layer_from_config(cfg["branch"]), layer_from_config(cfg["head"]), name=cfg["name"])
    if kind == "DualHead":
        return DualHeadBody(layer_from_config(cfg["trunk"]), layer_from_config(cfg["obj_head"]),
                            layer_from_config(cfg["cls_head"]), name=cfg["name"])
    return layer_from_config(cfg)


class Network:
    """A body plus its input shape and output contract."""

    def __init__(self, body: Layer, input_shape, output: str, name: str, meta: dict | None = None):
        if output not in OUTPUT_KINDS:
            raise ValueError(f"unknown output contract {output!r}")
        self.body = body
        self.input_shape = tuple(int(s) for s in input_shape)
        self.output = output
        self.name = name
        self.meta = dict(meta or {})
        self.output_shape = body.output_shape(self.input_shape)

    # ----------------------------------------------------------- compute
    def forward(self, x, train=False):
        return self.body.forward(x, train)

    def backward(self, grad, input_grad: bool = False):
        """Accumulate parameter gradients.  The gradient w.r.t. the input is
        only computed (and returned) when ``input_grad`` is set."""
        first = next(iter(self.body.layers()))
        if isinstance(first, Conv2D):
            first.input_grad = input_grad
        return self.body.backward(grad)

    def predict(self, x, batch_size: int = 128):
        outs = []
        for i in range(0, x.shape[0], batch_size):
            outs.append(self.body.forward(x[i:i + batch_size], False))
        if not outs:
            raise ValueError("predict on an empty batch")
        if isinstance(outs[0], tuple):
            return tuple(np.concatenate(parts, axis=0) for parts in zip(*outs))
        return np.concatenate(outs, axis=0)

    def features(self, x, layer: str, batch_size: int = 128):
        """Activations at the named layer, flattened per sample."""
        body = self.body
        if not isinstance(body, Sequential):
            raise ValueError("feature extraction needs a sequential network")
        names = [l.name for l in body.children]
        if layer not in names:
            raise KeyError(f"layer {layer!r} not in network (have {names})")
        outs = [body.forward_until(x[i:i + batch_size], layer) for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(outs, axis=0).reshape(x.shape[0], -1)

    # ------------------------------------------------------- parameters
    def params(self) -> dict[str, np.ndarray]:
        return dict(self.body.named_params())

    def grads(self) -> dict[str, np.ndarray]:
        return dict(self.body.named_grads())

    def buffers(self) -> dict[str, np.ndarray]:
        return dict(self.body.named_buffers())

    def set_tensor(self, key: str, value: np.ndarray) -> None:
        self.body.set_tensor(key, value)

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params().values()))

    def layers(self):
        return list(self.body.layers())

    def layer(self, name: str) -> Layer:
        for l in self.layers():
            if l.name == name:
                return l
        raise KeyError(name)

    def initialize(self, seed: int) -> "Network":
        self.body.initialize(np.random.default_rng(seed))
        return self

    def seed_dropout(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for l in self.layers():
            if isinstance(l, Dropout):
                l.initialize(rng)

    def astype(self, dtype) -> "Network":
        for key, v in list(self.params().items()) + list(self.buffers().items()):
            self.set_tensor(key, v.astype(dtype))
        return self

    def config(self) -> dict:
        return {"name": self.name, "output": self.output, "input_shape": list(self.input_shape),
                "meta": self.meta, "body": self.body.config()}

    @classmethod
    def from_config(cls, cfg: dict) -> "Network":
        return cls(body_from_config(cfg["body"]), cfg["input_shape"], cfg["output"], cfg["name"], cfg.get("meta"))

    def __repr__(self):
        return f"Network({self.name}, in={self.input_shape}, out={self.output}, params={self.param_count()})"


# ---------------------------------------------------------------- helpers
class _Stack:
    """Appends layers while tracking the per-sample shape."""

    def __init__(self, shape):
        self.shape = tuple(shape)
        self.layers: list[Layer] = []

    def add(self, layer: Layer) -> "_Stack":
        self.shape = layer.output_shape(self.shape)
        self.layers.append(layer)
        return self

    def conv(self, name, filters, kernel, padding="same", act="relu"):
        self.add(Conv2D(self.shape[0], filters, kernel, padding=padding, name=name))
        if act:
            self.add(Activation(act, name=f"{name}_{act}"))
        return self

    def pool(self, name):
        odd = self.shape[1] % 2 == 1 or self.shape[2] % 2 == 1
        return self.add(MaxPool2x2(truncate_odd=odd, name=name))

    def dense(self, name, units, act="relu"):
        self.add(Dense(self.shape[0], units, name=name))
        if act:
            self.add(Activation(act, name=f"{name}_{act}"))
        return self

    def bn(self, name):
        return self.add(BatchNorm(self.shape[0], name=name))

    def seq(self, name=None) -> Sequential:
        return Sequential(self.layers, name=name)


def _finish(body, input_shape, output, name, seed, meta=None) -> Network:
    return Network(body, input_shape, output, name, meta).initialize(seed)


def _check_depth(n, size):
    if n < 1:
        raise ConfigurationError("need at least one module")
    if n > math.log2(size):
        raise ConfigurationError(f"{n} modules too deep for {size}x{size} input (max {int(math.log2(size))})")


# ---------------------------------------------------------------- builders
def build_classic_net(n_modules: int, filters: int, reg: str = "bn", classes: int = N_CLASSES,
                      input_size: int = 96, seed: int = 0) -> Network:
    """``n`` x [Conv(f, 5x5) - MaxPool - (BN)] then FC(64) - FC(C) - softmax.

    ``reg`` is ``"bn"``, ``"dropout"`` (p=0.5 after the first FC) or ``"none"``.
    """
    if reg not in ("bn", "dropout", "none"):
        raise ValueError(f"unknown regularization {reg!r}")
    _check_depth(n_modules, input_size)
    s = _Stack((1, input_size, input_size))
    for i in range(1, n_modules + 1):
        s.conv(f"conv{i}", filters, 5).pool(f"mp{i}")
        if reg == "bn":
            s.bn(f"bn{i}")
    s.add(Flatten(name="flatten")).dense("fc1", 64)
    if reg == "bn":
        s.bn("bn_fc1")
    elif reg == "dropout":
        s.add(Dropout(0.5, name="drop1"))
    s.dense("fc2", classes, act="softmax")
    return _finish(s.seq("classic"), (1, input_size, input_size), "class_probs",
                   f"ClassicNet-{n_modules}-{filters}-{reg}", seed)


def build_tiny_net(n_modules: int, filters: int, classes: int = N_CLASSES,
                   input_size: int = 96, seed: int = 0) -> Network:
    """``n`` x Tiny[Conv(f, 3x3) - Conv(f, 1x1) - BN - MaxPool] then
    Conv(C, 1x1) - global average pool - softmax."""
    _check_depth(n_modules, input_size)
    s = _Stack((1, input_size, input_size))
    for i in range(1, n_modules + 1):
        s.conv(f"tiny{i}_c3", filters, 3).conv(f"tiny{i}_c1", filters, 1).bn(f"bn{i}").pool(f"mp{i}")
    s.conv("conv_out", classes, 1, act=None)
    s.add(GlobalAvgPool(name="gap")).add(Activation("softmax", name="softmax"))
    return _finish(s.seq("tiny"), (1, input_size, input_size), "class_probs",
                   f"TinyNet-{n_modules}-{filters}", seed)


def fire_module(name: str, in_channels: int, squeeze: int, expand1: int, expand3: int) -> Sequential:
    """1x1 squeeze then parallel 1x1 / 3x3 expands, concatenated on channels."""
    e1 = Sequential([Conv2D(squeeze, expand1, 1, name="conv"), Activation("relu", name="relu")], name="e1")
    e3 = Sequential([Conv2D(squeeze, expand3, 3, name="conv"), Activation("relu", name="relu")], name="e3")
    return Sequential([
        Conv2D(in_channels, squeeze, 1, name="squeeze"),
        Activation("relu", name="squeeze_relu"),
        ChannelConcat([e1, e3], name="expand"),
    ], name=name)


def build_fire_net(n_modules: int, filters: int = 4, classes: int = N_CLASSES,
                   input_size: int = 96, seed: int = 0) -> Network:
    """Conv(8, 5x5) stem, ``n`` MaxFire modules, Conv(C, 1x1) - GAP - softmax."""
    _check_depth(n_modules, input_size)
    s = _Stack((1, input_size, input_size))
    s.conv("stem", 8, 5)
    for i in range(1, n_modules + 1):
        s.add(fire_module(f"fire{i}a", s.shape[0], filters, filters, filters))
        s.add(fire_module(f"fire{i}b", s.shape[0], filters, filters, filters))
        s.bn(f"bn{i}").pool(f"mp{i}")
    s.conv("conv_out", classes, 1, act=None)
    s.add(GlobalAvgPool(name="gap")).add(Activation("softmax", name="softmax"))
    return _finish(s.seq("fire"), (1, input_size, input_size), "class_probs",
                   f"FireNet-{n_modules}-{filters}", seed)


def _matcher_convs(s: _Stack):
    for i, f in enumerate((16, 32, 32, 16), start=1):
        s.conv(f"conv{i}", f, 5).pool(f"mp{i}")
    s.add(Flatten(name="flatten"))


def _match_output(s: _Stack, head: str):
    if head == "class2_softmax":
        s.dense("fc_out", 2, act="softmax")
        return "class_probs"
    if head == "score_sigmoid":
        s.dense("fc_out", 1, act="sigmoid")
        return "score"
    raise ValueError(f"unknown matcher head {head!r}")


def build_matcher(kind: str = "two_channel", head: str = "score_sigmoid",
                  input_size: int = 96, seed: int = 0) -> Network:
    """Patch matchers over a ``(2, s, s)`` pair stack.

    ``two_channel``: Conv16-MP-Conv32-MP-Conv32-MP-Conv16-MP-FC64-FC32-FC(c),
    dropout 0.5 after the first two FC layers.  ``siamese``: shared branch
    Conv16-MP-Conv32-MP-Conv32-MP-Conv16-MP-FC96-FC96, concat, FC64-FC(c).
    """
    shape = (2, input_size, input_size)
    if kind == "two_channel":
        s = _Stack(shape)
        _matcher_convs(s)
        s.dense("fc1", 64).add(Dropout(0.5, name="drop1"))
        s.dense("fc2", 32).add(Dropout(0.5, name="drop2"))
        output = _match_output(s, head)
        body = s.seq("two_channel")
    elif kind == "siamese":
        b = _Stack((1, input_size, input_size))
        _matcher_convs(b)
        b.dense("fc1", 96).dense("fc2", 96)
        h = _Stack((2 * b.shape[0],))
        h.dense("fc3", 64)
        output = _match_output(h, head)
        body = SiameseBody(b.seq("branch"), h.seq("head"))
    else:
        raise ValueError(f"unknown matcher kind {kind!r}")
    return _finish(body, shape, output, f"Matcher-{kind}-{head}", seed)


def build_objectness_net(kind: str = "tiny", input_size: int = 96, seed: int = 0) -> Network:
    """Patch objectness regressors with a sigmoid output.

    ``classic``: Conv32(5x5)-MP-BN x2, FC96-BN, FC1.  ``tiny``:
    [Conv24(3x3)-Conv24(1x1)-MP] x2, FC1, no normalization so that it can be
    converted with :func:`to_fcn`.
    """
    s = _Stack((1, input_size, input_size))
    if kind == "classic":
        for i in (1, 2):
            s.conv(f"conv{i}", 32, 5).pool(f"mp{i}").bn(f"bn{i}")
        s.add(Flatten(name="flatten")).dense("fc1", 96).bn("bn_fc1")
    elif kind == "tiny":
        for i in (1, 2):
            s.conv(f"c3_{i}", 24, 3).conv(f"c1_{i}", 24, 1).pool(f"mp{i}")
        s.add(Flatten(name="flatten"))
    else:
        raise ValueError(f"unknown objectness net {kind!r}")
    s.dense("fc_out", 1, act="sigmoid")
    return _finish(s.seq(kind), (1, input_size, input_size), "objectness",
                   f"{kind.capitalize()}Net-Objectness", seed, meta={"window": input_size})


def to_fcn(net: Network) -> Network:
    """Rewrite the Flatten -> Dense head as an equivalent valid convolution.

    The dense weights ``(u, C*h*w)`` are reshaped to ``(u, C, h, w)``; the
    result accepts any input whose extents survive the pooling chain and
    outputs an objectness map with stride ``2 ** n_pools``.
    """
    body = net.body
    if not isinstance(body, Sequential):
        raise ConfigurationError("FCN conversion needs a sequential network")
    layers = body.children
    for l in net.layers():
        if isinstance(l, (BatchNorm, Dropout, GlobalAvgPool)):
            raise ConfigurationError(f"layer {l.name} ({l.kind}) prevents FCN conversion")
    flat = [i for i, l in enumerate(layers) if isinstance(l, Flatten)]
    if len(flat) != 1:
        raise ConfigurationError("expected exactly one Flatten layer")
    fi = flat[0]
    tail = layers[fi + 1:]
    if not tail or not isinstance(tail[0], Dense) or any(not isinstance(l, Activation) for l in tail[1:]):
        raise ConfigurationError("head after Flatten must be one Dense layer plus activations")
    fc = tail[0]
    if any(isinstance(l, Activation) and l.fn == "softmax" for l in tail[1:]):
        raise ConfigurationError("softmax head is not a per-position operation")
    fmap = Sequential(layers[:fi], name="tmp").output_shape(net.input_shape)
    c, h, w = fmap
    conv = Conv2D(c, fc.units, (h, w), padding="valid", name=fc.name)
    conv.params["weight"] = fc.params["weight"].reshape(fc.units, c, h, w).copy()
    conv.params["bias"] = fc.params["bias"].copy()
    new_layers = [_clone(l) for l in layers[:fi]] + [conv] + [_clone(l) for l in tail[1:]]
    n_pools = sum(isinstance(l, MaxPool2x2) for l in layers[:fi])
    meta = dict(net.meta)
    window = net.input_shape[1]
    meta.update({"map_stride": 2 ** n_pools, "map_origin": window // 2, "window": window})
    return Network(Sequential(new_layers, name=f"{body.name}_fcn"), net.input_shape,
                   "objectness_map", f"{net.name}-FCN", meta)


def _clone(layer: Layer) -> Layer:
    new = layer_from_config(layer.config())
    for k, v in layer.params.items():
        new.params[k] = v.copy()
    for k, v in layer.buffers.items():
        new.buffers[k] = v.copy()
    return new


def build_detector(classes: int = N_CLASSES, input_size: int = 96, seed: int = 0) -> Network:
    """Dual-head detector: shared Conv32(5x5)-MP-Conv32(5x5)-MP-FC128 trunk,
    objectness head FC96-FC1 (sigmoid), class head FC96-FC(C) (softmax).

    Convolutions are unpadded; batch normalization follows every trainable
    layer except the two outputs.
    """
    t = _Stack((1, input_size, input_size))
    for i in (1, 2):
        t.conv(f"conv{i}", 32, 5, padding="valid").bn(f"bn{i}").pool(f"mp{i}")
    t.add(Flatten(name="flatten")).dense("fc1", 128).bn("bn_fc1")
    o = _Stack(t.shape).dense("obj_fc", 96).bn("obj_bn").dense("obj_out", 1, act="sigmoid")
    c = _Stack(t.shape).dense("cls_fc", 96).bn("cls_bn").dense("cls_out", classes, act="softmax")
    body = DualHeadBody(t.seq("trunk"), o.seq("obj_head"), c.seq("cls_head"))
    return _finish(body, (1, input_size, input_size), "dual", f"Detector-{classes}", seed)


BUILDERS = {
    "classic": build_classic_net,
    "tiny": build_tiny_net,
    "fire": build_fire_net,
}
