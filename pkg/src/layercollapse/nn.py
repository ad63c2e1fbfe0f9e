"""Layers, collapsible blocks and the sequential model container."""

from __future__ import annotations

import copy
import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError, LayerCollapseError
from .tensor import Tensor, no_grad, parameter


class Layer:
    """Base class. Subclasses override ``forward`` and list their tensors."""

    kind = "layer"

    def forward(self, x: Tensor, training: bool = False, rng=None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, training=False, rng=None):
        return self.forward(T.as_tensor(x), training=training, rng=rng)

    def parameters(self) -> dict[str, Tensor]:
        return {}

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters().values())

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape


class LinearLayer(Layer):
    """``y = x W^T + b`` with ``W`` of shape (out, in)."""

    kind = "linear"

    def __init__(self, W, b):
        self.W = parameter(W)
        self.b = parameter(b)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise DimensionError(
                f"linear: weight {self.W.shape} and bias {self.b.shape} disagree")

    @property
    def in_features(self) -> int:
        return self.W.shape[1]

    @property
    def out_features(self) -> int:
        return self.W.shape[0]

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise DimensionError(
                f"linear: input shape {x.shape} does not match weight shape {self.W.shape}")
        return T.matmul(x, T.transpose(self.W)) + self.b

    def parameters(self):
        return {"W": self.W, "b": self.b}

    def output_shape(self, in_shape):
        if in_shape != (self.in_features,):
            raise DimensionError(f"linear: expects width {self.in_features}, got {in_shape}")
        return (self.out_features,)


class PReLULayer(Layer):
    kind = "prelu"

    def __init__(self, alpha: float = 0.25, trainable: bool = True):
        self.alpha = Tensor(float(alpha), requires_grad=trainable)

    @property
    def trainable(self) -> bool:
        return self.alpha.requires_grad

    @trainable.setter
    def trainable(self, flag: bool):
        self.alpha.requires_grad = bool(flag)

    @property
    def value(self) -> float:
        return float(self.alpha.data)

    def forward(self, x, training=False, rng=None):
        return T.prelu(x, self.alpha)

    def parameters(self):
        return {"alpha": self.alpha}

    def n_params(self):
        return 1


class ReLULayer(Layer):
    kind = "relu"

    def forward(self, x, training=False, rng=None):
        return T.relu(x)


class BatchNormLayer(Layer):
    """Per-feature batch normalisation over a (batch, h) input.

    Batch statistics use the population (biased) variance. Running estimates
    follow ``running <- (1 - momentum) * running + momentum * batch``.
    """

    kind = "batchnorm"

    def __init__(self, h: int, momentum: float = 0.1, eps: float = 1e-5,
                 gamma=None, beta=None, running_mean=None, running_var=None):
        if not 0.0 < momentum <= 1.0:
            raise ConfigError(f"batchnorm momentum must be in (0, 1], got {momentum}")
        if eps < 0:
            raise ConfigError(f"batchnorm eps must be non-negative, got {eps}")
        self.gamma = parameter(np.ones(h) if gamma is None else gamma)
        self.beta = parameter(np.zeros(h) if beta is None else beta)
        self.running_mean = np.zeros(h) if running_mean is None else np.array(running_mean, float)
        self.running_var = np.ones(h) if running_var is None else np.array(running_var, float)
        self.momentum = float(momentum)
        self.eps = float(eps)
        for name, v in (("gamma", self.gamma.data), ("beta", self.beta.data),
                        ("running_mean", self.running_mean), ("running_var", self.running_var)):
            if v.shape != (h,):
                raise DimensionError(f"batchnorm: {name} has shape {v.shape}, expected ({h},)")
        if np.any(self.running_var < 0):
            raise DimensionError("batchnorm: running_var must be non-negative")

    @property
    def width(self) -> int:
        return self.gamma.shape[0]

    def scale(self) -> np.ndarray:
        """Eval-mode multiplier ``gamma / sqrt(running_var + eps)``."""
        return self.gamma.data / np.sqrt(self.running_var + self.eps)

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.width:
            raise DimensionError(f"batchnorm: input shape {x.shape}, expected width {self.width}")
        if training:
            if x.shape[0] < 2:
                raise DimensionError("batchnorm: training mode needs a batch of at least 2")
            mu = T.mean(x, axis=0)
            centered = x - mu
            var = T.mean(centered * centered, axis=0)
            x_hat = centered / T.sqrt(var + self.eps)
            m = self.momentum
            self.running_mean = (1 - m) * self.running_mean + m * mu.data
            self.running_var = (1 - m) * self.running_var + m * var.data
        else:
            x_hat = (x - self.running_mean) / np.sqrt(self.running_var + self.eps)
        return x_hat * self.gamma + self.beta

    def parameters(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def buffers(self):
        return {"running_mean": self.running_mean, "running_var": self.running_var}

    def output_shape(self, in_shape):
        if in_shape != (self.width,):
            raise DimensionError(f"batchnorm: expects width {self.width}, got {in_shape}")
        return in_shape


class DropoutLayer(Layer):
    """Inverted dropout; the exact identity outside training."""

    kind = "dropout"

    def __init__(self, p: float = 0.5):
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"dropout p must be in [0, 1), got {p}")
        self.p = float(p)

    def forward(self, x, training=False, rng=None):
        if not training or self.p == 0.0:
            return x
        if rng is None:
            raise LayerCollapseError("dropout in training mode needs an rng")
        keep = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        return x * keep


class Conv2dLayer(Layer):
    kind = "conv2d"

    def __init__(self, K, b, padding: int = 0):
        self.K = parameter(K)
        self.b = parameter(b)
        self.padding = int(padding)
        if self.K.ndim != 4 or self.b.shape != (self.K.shape[0],):
            raise DimensionError(f"conv2d: kernel {self.K.shape} and bias {self.b.shape} disagree")

    def forward(self, x, training=False, rng=None):
        return T.conv2d(x, self.K, self.b, padding=self.padding)

    def parameters(self):
        return {"K": self.K, "b": self.b}

    def output_shape(self, in_shape):
        c_out, c_in, kh, kw = self.K.shape
        if len(in_shape) != 3 or in_shape[0] != c_in:
            raise DimensionError(f"conv2d: expects {c_in} input channels, got {in_shape}")
        p = self.padding
        return (c_out, in_shape[1] + 2 * p - kh + 1, in_shape[2] + 2 * p - kw + 1)


class FlattenLayer(Layer):
    kind = "flatten"

    def forward(self, x, training=False, rng=None):
        return x.reshape(x.shape[0], -1)

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)


class CollapsibleBlock(Layer):
    """fc1 -> [batchnorm] -> PReLU -> [dropout] -> fc2."""

    kind = "block"

    def __init__(self, fc1: LinearLayer, act: PReLULayer, fc2: LinearLayer,
                 bn: BatchNormLayer | None = None, drop: DropoutLayer | None = None):
        if fc1.out_features != fc2.in_features:
            raise DimensionError(
                f"block: fc1 width {fc1.out_features} != fc2 input {fc2.in_features}")
        if bn is not None and bn.width != fc1.out_features:
            raise DimensionError(f"block: batchnorm width {bn.width} != {fc1.out_features}")
        self.fc1, self.bn, self.act, self.drop, self.fc2 = fc1, bn, act, drop, fc2

    @property
    def alpha(self) -> Tensor:
        return self.act.alpha

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.fc1.in_features, self.fc1.out_features, self.fc2.out_features

    def sublayers(self) -> Iterator[tuple[str, Layer]]:
        yield "fc1", self.fc1
        if self.bn is not None:
            yield "bn", self.bn
        yield "act", self.act
        if self.drop is not None:
            yield "drop", self.drop
        yield "fc2", self.fc2

    def forward(self, x, training=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.fc1.in_features:
            raise DimensionError(
                f"block: input shape {x.shape} does not match width {self.fc1.in_features}")
        h = self.fc1.forward(x)
        if self.bn is not None:
            h = self.bn.forward(h, training=training)
        h = self.act.forward(h)
        if self.drop is not None:
            h = self.drop.forward(h, training=training, rng=rng)
        return self.fc2.forward(h)

    def parameters(self):
        out = {}
        for sub, layer in self.sublayers():
            for pname, p in layer.parameters().items():
                out[f"{sub}.{pname}"] = p
        return out

    def buffers(self):
        if self.bn is None:
            return {}
        return {f"bn.{k}": v for k, v in self.bn.buffers().items()}

    def output_shape(self, in_shape):
        if in_shape != (self.fc1.in_features,):
            raise DimensionError(f"block: expects width {self.fc1.in_features}, got {in_shape}")
        return (self.fc2.out_features,)


def block_forward(block: CollapsibleBlock, x, training: bool = False, rng=None) -> Tensor:
    return block.forward(T.as_tensor(x), training=training, rng=rng)


def batchnorm_forward(bn: BatchNormLayer, x, training: bool = False) -> Tensor:
    return bn.forward(T.as_tensor(x), training=training)


class ModelGraph:
    """Ordered, uniquely named layers plus free-form string metadata."""

    def __init__(self, layers=(), metadata=None, input_shape=None):
        self.layers: list[tuple[str, Layer]] = []
        self.metadata: dict[str, str] = dict(metadata or {})
        self.input_shape = tuple(input_shape) if input_shape is not None else None
        for name, layer in layers:
            self.append(name, layer)
        self.validate()

    def append(self, name: str, layer: Layer) -> None:
        if any(n == name for n, _ in self.layers):
            raise ConfigError(f"duplicate layer name '{name}'")
        self.layers.append((name, layer))

    def __len__(self):
        return len(self.layers)

    def __iter__(self):
        return iter(self.layers)

    def __getitem__(self, name: str) -> Layer:
        for n, layer in self.layers:
            if n == name:
                return layer
        raise KeyError(name)

    def names(self) -> list[str]:
        return [n for n, _ in self.layers]

    def validate(self) -> None:
        """Check that consecutive layers agree on widths, when the input shape is known."""
        if self.input_shape is None:
            return
        shape = self.input_shape
        for name, layer in self.layers:
            try:
                shape = layer.output_shape(shape)
            except DimensionError as e:
                raise DimensionError(f"layer '{name}': {e}") from e

    def output_shape(self):
        shape = self.input_shape
        for _, layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x, training: bool = False, rng=None) -> Tensor:
        x = T.as_tensor(x)
        for name, layer in self.layers:
            try:
                x = layer.forward(x, training=training, rng=rng)
            except LayerCollapseError as e:
                e.args = (f"layer '{name}': {e}",)
                raise
        return x

    __call__ = forward

    def predict(self, x) -> np.ndarray:
        with no_grad():
            return self.forward(x, training=False).data

    def parameters(self) -> dict[str, Tensor]:
        out = {}
        for name, layer in self.layers:
            for pname, p in layer.parameters().items():
                out[f"{name}.{pname}"] = p
        return out

    def trainable_parameters(self) -> dict[str, Tensor]:
        return {k: p for k, p in self.parameters().items() if p.requires_grad}

    def zero_grad(self) -> None:
        for p in self.parameters().values():
            p.grad = None

    def blocks(self) -> list[tuple[str, CollapsibleBlock]]:
        return [(n, l) for n, l in self.layers if isinstance(l, CollapsibleBlock)]

    def alphas(self) -> dict[str, float]:
        out = {}
        for name, layer in self.layers:
            if isinstance(layer, CollapsibleBlock):
                out[name] = layer.act.value
            elif isinstance(layer, PReLULayer):
                out[name] = layer.value
        return out

    def replace(self, name: str, layer: Layer) -> None:
        for i, (n, _) in enumerate(self.layers):
            if n == name:
                self.layers[i] = (name, layer)
                return
        raise KeyError(name)

    def count_params(self) -> int:
        return sum(layer.n_params() for _, layer in self.layers)

    def copy(self) -> "ModelGraph":
        return copy.deepcopy(self)


def model_forward(m: ModelGraph, x, training: bool = False, rng=None) -> Tensor:
    return m.forward(x, training=training, rng=rng)


# -- initialisation -----------------------------------------------------------

SCRATCH_ALPHA = 0.25


def _uniform(rng, fan_in: int, shape) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


_LAYER_KEYS = {
    "block": {"type", "name", "hidden", "out", "batchnorm", "dropout"},
    "linear": {"type", "name", "out"},
    "prelu": {"type", "name"},
    "relu": {"type", "name"},
    "batchnorm": {"type", "name"},
    "dropout": {"type", "name", "p"},
    "conv2d": {"type", "name", "out_channels", "kernel", "padding"},
    "flatten": {"type", "name"},
}


def init_model(arch: dict, seed: int = 0, retrofit_mode: bool = False) -> ModelGraph:
    """Build a model from an architecture description.

    ``arch`` looks like::

        {"input_dim": 2,
         "layers": [{"type": "block", "hidden": 16, "out": 16, "batchnorm": true},
                    {"type": "relu"},
                    {"type": "block", "hidden": 16, "out": 4}]}

    ``input_dim`` may also be ``[channels, height, width]`` for conv stacks.
    Weights are uniform on +-sqrt(6 / fan_in), biases start at zero. PReLU
    slopes start at 0.25, or at 0 with ``retrofit_mode`` (the ReLU function).
    """
    problems = []
    if "input_dim" not in arch:
        problems.append("arch.input_dim: missing")
    if "layers" not in arch:
        problems.append("arch.layers: missing")
    problems += [f"arch.{k}: unknown key" for k in arch if k not in {"input_dim", "layers"}]
    if problems:
        raise ConfigError(problems)

    rng = np.random.default_rng(seed)
    alpha0 = 0.0 if retrofit_mode else SCRATCH_ALPHA
    dim = arch["input_dim"]
    shape = tuple(dim) if isinstance(dim, (list, tuple)) else (int(dim),)
    input_shape = shape
    layers = []
    for i, spec in enumerate(arch["layers"]):
        kind = spec.get("type")
        if kind not in _LAYER_KEYS:
            raise ConfigError(f"arch.layers[{i}].type: unknown layer type {kind!r}")
        extra = sorted(set(spec) - _LAYER_KEYS[kind])
        if extra:
            raise ConfigError([f"arch.layers[{i}].{k}: unknown key" for k in extra])
        name = spec.get("name", f"{kind}{i}")
        width = shape[0] if len(shape) == 1 else None
        if kind in ("block", "linear", "batchnorm") and width is None:
            raise ConfigError(f"arch.layers[{i}]: {kind} needs a flat input, got shape {shape}")
        if kind == "block":
            h, out = int(spec["hidden"]), int(spec["out"])
            fc1 = LinearLayer(_uniform(rng, width, (h, width)), np.zeros(h))
            fc2 = LinearLayer(_uniform(rng, h, (out, h)), np.zeros(out))
            bn = BatchNormLayer(h) if spec.get("batchnorm", False) else None
            p = float(spec.get("dropout", 0.0))
            drop = DropoutLayer(p) if p > 0 else None
            layer = CollapsibleBlock(fc1, PReLULayer(alpha0), fc2, bn=bn, drop=drop)
        elif kind == "linear":
            out = int(spec["out"])
            layer = LinearLayer(_uniform(rng, width, (out, width)), np.zeros(out))
        elif kind == "prelu":
            layer = PReLULayer(alpha0)
        elif kind == "relu":
            layer = ReLULayer()
        elif kind == "batchnorm":
            layer = BatchNormLayer(width)
        elif kind == "dropout":
            layer = DropoutLayer(float(spec.get("p", 0.5)))
        elif kind == "conv2d":
            if len(shape) != 3:
                raise ConfigError(f"arch.layers[{i}]: conv2d needs a (C, H, W) input, got {shape}")
            c_out, k = int(spec["out_channels"]), int(spec["kernel"])
            fan_in = shape[0] * k * k
            layer = Conv2dLayer(_uniform(rng, fan_in, (c_out, shape[0], k, k)),
                                np.zeros(c_out), padding=int(spec.get("padding", 0)))
        else:
            layer = FlattenLayer()
        shape = layer.output_shape(shape)
        layers.append((name, layer))
    return ModelGraph(layers, input_shape=input_shape)
