"""Fusing near-linear blocks into single affine maps, plus gain/parameter/MAC accounting."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, NumericError, UnsupportedConfigurationError
from .nn import (BatchNormLayer, CollapsibleBlock, Conv2dLayer, LinearLayer, ModelGraph)


@dataclass(frozen=True)
class CollapseConfig:
    tau: float = 0.05  # max allowed |1 - alpha|

    def __post_init__(self):
        if not self.tau >= 0:
            raise ConfigError(f"collapse.tau must be >= 0, got {self.tau}")


@dataclass(frozen=True)
class Uncollapsible:
    alpha: float
    tau: float

    @property
    def reason(self) -> str:
        return f"|1 - alpha| = {abs(1 - self.alpha):.6g} exceeds tau = {self.tau:.6g}"


@dataclass
class CollapseReport:
    layer_name: str
    alpha_at_collapse: float
    collapsed: bool
    params_before: int
    params_after: int
    gain_fraction: float
    macs_before: int
    macs_after: int

    def csv_row(self) -> dict:
        return {
            "layer_name": self.layer_name,
            "alpha": self.alpha_at_collapse,
            "collapsed": int(self.collapsed),
            "params_before": self.params_before,
            "params_after": self.params_after,
            "gain": self.gain_fraction,
            "macs_before": self.macs_before,
            "macs_after": self.macs_after,
        }


@dataclass(frozen=True)
class GainQuery:
    n_in: int
    n_hidden: int
    n_out: int

    def __post_init__(self):
        if min(self.n_in, self.n_hidden, self.n_out) <= 0:
            raise ConfigError(f"layer widths must be positive: {self}")


@dataclass(frozen=True)
class ConvGainQuery:
    k1: int
    k2: int
    c_in: int
    c_hidden: int
    c_out: int

    def __post_init__(self):
        if min(self.k1, self.k2, self.c_in, self.c_hidden, self.c_out) <= 0:
            raise ConfigError(f"kernel sizes and channels must be positive: {self}")


def dense_gain(q: GainQuery) -> float:
    """Fraction of weight parameters saved by fusing in->hidden->out into in->out.

    Biases and normalisation parameters are excluded. Negative for bottlenecks.
    """
    return 1.0 - (q.n_in * q.n_out) / (q.n_hidden * (q.n_in + q.n_out))


def conv_gain(q: ConvGainQuery) -> float:
    k = q.k1 + q.k2 - 1
    before = q.k1 ** 2 * q.c_in * q.c_hidden + q.k2 ** 2 * q.c_hidden * q.c_out
    return 1.0 - before / (k ** 2 * q.c_in * q.c_out)


def _check_finite(block: CollapsibleBlock) -> None:
    for name, p in block.parameters().items():
        if not np.all(np.isfinite(p.data)):
            raise NumericError(f"collapse: non-finite values in {name}")
    for name, b in block.buffers().items():
        if not np.all(np.isfinite(b)):
            raise NumericError(f"collapse: non-finite values in {name}")


def fold_block(block: CollapsibleBlock) -> tuple[np.ndarray, np.ndarray]:
    """Weight and bias of the affine map the block computes when alpha == 1.

    BatchNorm (eval statistics) folds in through ``s = gamma / sqrt(var + eps)``::

        W = W2 diag(s) W1
        b = W2 (s * (b1 - mean) + beta) + b2
    """
    W1, b1 = block.fc1.W.data, block.fc1.b.data
    W2, b2 = block.fc2.W.data, block.fc2.b.data
    if block.bn is None:
        return W2 @ W1, W2 @ b1 + b2
    bn: BatchNormLayer = block.bn
    s = bn.scale()
    W = W2 @ (s[:, None] * W1)
    b = W2 @ (s * (b1 - bn.running_mean) + bn.beta.data) + b2
    return W, b


def collapse_block(block: CollapsibleBlock, cfg: CollapseConfig | None = None):
    """Return the fused :class:`LinearLayer`, or :class:`Uncollapsible` if alpha is too far from 1."""
    cfg = cfg or CollapseConfig()
    _check_finite(block)
    alpha = block.act.value
    if abs(1.0 - alpha) > cfg.tau:
        return Uncollapsible(alpha, cfg.tau)
    W, b = fold_block(block)
    return LinearLayer(W, b)


def block_macs(block: CollapsibleBlock) -> int:
    n_in, h, n_out = block.dims
    return n_in * h + h * n_out


def collapse_model(m: ModelGraph, cfg: CollapseConfig | None = None,
                   only: list[str] | None = None) -> tuple[ModelGraph, list[CollapseReport]]:
    """Fuse every block whose slope passes the tolerance test.

    Returns a new model; ``m`` is left untouched. Each examined block gets a
    report, whether or not it collapsed. ``only`` restricts the blocks examined.
    """
    cfg = cfg or CollapseConfig()
    out = m.copy()
    reports = []
    for name, block in out.blocks():
        if only is not None and name not in only:
            continue
        n_in, h, n_out = block.dims
        before = block.n_params()
        macs_before = block_macs(block)
        fused = collapse_block(block, cfg)
        if isinstance(fused, Uncollapsible):
            reports.append(CollapseReport(name, fused.alpha, False, before, before,
                                          0.0, macs_before, macs_before))
            continue
        out.replace(name, fused)
        reports.append(CollapseReport(
            name, block.act.value, True, before, fused.n_params(),
            dense_gain(GainQuery(n_in, h, n_out)), macs_before, n_in * n_out))
    return out, reports


def _full_convolve2d(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ha, wa = a.shape
    hb, wb = b.shape
    out = np.zeros((ha + hb - 1, wa + wb - 1))
    for i in range(ha):
        for j in range(wa):
            out[i:i + hb, j:j + wb] += a[i, j] * b
    return out


def fuse_conv(K1, b1, K2, b2, stride1: int = 1, stride2: int = 1):
    """Compose two stride-1 cross-correlations into one with kernel k1 + k2 - 1.

    K1: (c_h, c_in, k1, k1), K2: (c_out, c_h, k2, k2). The fused kernel for the
    pair (o, i) is the sum over hidden channels of the full 2-D convolution of
    K2[o, h] with K1[h, i]. The result is exact in valid (unpadded) mode.
    """
    if stride1 != 1 or stride2 != 1:
        raise UnsupportedConfigurationError(
            f"conv fusion only supports stride 1, got strides ({stride1}, {stride2})")
    K1, b1, K2, b2 = (np.asarray(getattr(a, "data", a), dtype=np.float64)
                      for a in (K1, b1, K2, b2))
    if K1.ndim != 4 or K2.ndim != 4 or K2.shape[1] != K1.shape[0]:
        raise DimensionError(f"fuse_conv: kernels {K1.shape} and {K2.shape} do not chain")
    if b1.shape != (K1.shape[0],) or b2.shape != (K2.shape[0],):
        raise DimensionError(f"fuse_conv: bias shapes {b1.shape}, {b2.shape} do not match kernels")
    c_h, c_in, k1h, k1w = K1.shape
    c_out, _, k2h, k2w = K2.shape
    K = np.zeros((c_out, c_in, k1h + k2h - 1, k1w + k2w - 1))
    for o in range(c_out):
        for i in range(c_in):
            for h in range(c_h):
                K[o, i] += _full_convolve2d(K2[o, h], K1[h, i])
    b = b2 + K2.sum(axis=(2, 3)) @ b1
    return K, b


def fuse_conv_layers(first: Conv2dLayer, second: Conv2dLayer) -> Conv2dLayer:
    if first.padding or second.padding:
        raise UnsupportedConfigurationError(
            "conv fusion is exact only for unpadded (valid) convolutions")
    K, b = fuse_conv(first.K, first.b, second.K, second.b)
    return Conv2dLayer(K, b, padding=0)


def count_model_params(m: ModelGraph) -> int:
    return m.count_params()


def count_model_macs(m: ModelGraph) -> int:
    """Multiply-accumulates for one input sample."""
    if m.input_shape is None:
        raise DimensionError("count_macs needs the model's input shape")
    shape = m.input_shape
    total = 0
    for _, layer in m.layers:
        out_shape = layer.output_shape(shape)
        if isinstance(layer, LinearLayer):
            total += layer.in_features * layer.out_features
        elif isinstance(layer, CollapsibleBlock):
            total += block_macs(layer)
        elif isinstance(layer, Conv2dLayer):
            c_out, c_in, kh, kw = layer.K.shape
            total += kh * kw * c_in * c_out * out_shape[1] * out_shape[2]
        shape = out_shape
    return total


def count_params(obj) -> int:
    """Exact parameter count for a runtime model, a single layer, or an architecture descriptor."""
    from .arch import ArchDescriptor, count_descriptor_params

    if isinstance(obj, ArchDescriptor):
        return count_descriptor_params(obj)
    if isinstance(obj, ModelGraph):
        return obj.count_params()
    return obj.n_params()


def count_macs(obj, input_resolution: int = 224) -> int:
    from .arch import ArchDescriptor, count_descriptor_macs

    if isinstance(obj, ArchDescriptor):
        return count_descriptor_macs(obj, input_resolution)
    if isinstance(obj, ModelGraph):
        return count_model_macs(obj)
    if isinstance(obj, LinearLayer):
        return obj.in_features * obj.out_features
    if isinstance(obj, CollapsibleBlock):
        return block_macs(obj)
    raise TypeError(f"count_macs: unsupported object {type(obj).__name__}")
