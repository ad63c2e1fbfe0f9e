"""Binary checkpoint format.

Layout (all integers unsigned 32-bit little-endian)::

    "LCKP" | version | meta_len | meta (UTF-8 JSON, meta_len bytes) | tensor records...

Each tensor record is ``name_len | name | rank | extents[rank] | float32 LE data``.
Records appear in the order listed by ``meta["tensors"]``. Values are stored as
32-bit floats; everything in memory stays 64-bit.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from .errors import FormatError
from .nn import (BatchNormLayer, CollapsibleBlock, Conv2dLayer, DropoutLayer, FlattenLayer,
                 LinearLayer, ModelGraph, PReLULayer, ReLULayer)

MAGIC = b"LCKP"
VERSION = 1


def _layer_meta(name: str, layer) -> tuple[dict, list[tuple[str, np.ndarray]]]:
    tensors = []
    meta = {"name": name, "type": layer.kind}

    def add(key, arr):
        tensors.append((f"{name}.{key}", np.asarray(arr)))

    if isinstance(layer, LinearLayer):
        meta.update(in_features=layer.in_features, out_features=layer.out_features)
        add("W", layer.W.data)
        add("b", layer.b.data)
    elif isinstance(layer, PReLULayer):
        meta.update(alpha=float(np.float32(layer.value)), trainable=layer.trainable)
        add("alpha", layer.alpha.data)
    elif isinstance(layer, BatchNormLayer):
        meta.update(width=layer.width, momentum=layer.momentum, eps=layer.eps)
        for k, v in (("gamma", layer.gamma.data), ("beta", layer.beta.data),
                     ("running_mean", layer.running_mean), ("running_var", layer.running_var)):
            add(k, v)
    elif isinstance(layer, DropoutLayer):
        meta.update(p=layer.p)
    elif isinstance(layer, Conv2dLayer):
        c_out, c_in, kh, kw = layer.K.shape
        meta.update(out_channels=c_out, in_channels=c_in, kernel=[kh, kw], padding=layer.padding)
        add("K", layer.K.data)
        add("b", layer.b.data)
    elif isinstance(layer, CollapsibleBlock):
        n_in, h, n_out = layer.dims
        meta.update(in_features=n_in, hidden=h, out_features=n_out,
                    alpha=float(np.float32(layer.act.value)), trainable=layer.act.trainable,
                    batchnorm=layer.bn is not None,
                    dropout=layer.drop.p if layer.drop is not None else 0.0)
        if layer.bn is not None:
            meta.update(bn_momentum=layer.bn.momentum, bn_eps=layer.bn.eps)
        for sub, sublayer in layer.sublayers():
            if isinstance(sublayer, DropoutLayer):
                continue
            _, sub_tensors = _layer_meta(f"{name}.{sub}", sublayer)
            tensors.extend(sub_tensors)
    return meta, tensors


def encode_checkpoint(m: ModelGraph) -> bytes:
    layers, tensors = [], []
    for name, layer in m.layers:
        meta, ts = _layer_meta(name, layer)
        layers.append(meta)
        tensors.extend(ts)
    meta = {
        "input_shape": list(m.input_shape) if m.input_shape is not None else None,
        "layers": layers,
        "metadata": {str(k): str(v) for k, v in m.metadata.items()},
        "tensors": [{"name": n, "shape": list(a.shape)} for n, a in tensors],
    }
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    out = [MAGIC, struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes]
    for name, arr in tensors:
        nb = name.encode("utf-8")
        out.append(struct.pack("<I", len(nb)))
        out.append(nb)
        out.append(struct.pack(f"<I{arr.ndim}I", arr.ndim, *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def save_checkpoint(m: ModelGraph, path) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    data = encode_checkpoint(m)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated checkpoint reading {what}: need {n} bytes, "
                f"{len(self.buf) - self.pos} left", self.pos)
        chunk = self.buf[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]


def decode_checkpoint(buf: bytes) -> ModelGraph:
    r = _Reader(buf)
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}", 0)
    r.pos = 4
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported checkpoint version {version}", 4)
    meta_len = r.u32("metadata length")
    meta_pos = r.pos
    try:
        meta = json.loads(r.take(meta_len, "metadata").decode("utf-8"))
        layer_metas, tensor_metas = meta["layers"], meta["tensors"]
    except FormatError:
        raise
    except (ValueError, KeyError, TypeError) as e:
        raise FormatError(f"unreadable metadata: {e}", meta_pos) from None

    tensors: dict[str, np.ndarray] = {}
    for tm in tensor_metas:
        start = r.pos
        name = r.take(r.u32("tensor name length"), "tensor name").decode("utf-8", "replace")
        if name != tm["name"]:
            raise FormatError(f"tensor record {name!r} where metadata lists {tm['name']!r}", start)
        rank = r.u32("tensor rank")
        shape = tuple(r.u32("tensor extent") for _ in range(rank))
        if list(shape) != list(tm["shape"]):
            raise FormatError(
                f"tensor {name!r} has shape {shape}, metadata says {tuple(tm['shape'])}", start)
        count = int(np.prod(shape, dtype=np.int64))
        raw = r.take(4 * count, f"tensor {name!r} data")
        tensors[name] = np.frombuffer(raw, dtype="<f4").astype(np.float64).reshape(shape)
    if r.pos != len(buf):
        raise FormatError("trailing bytes after last tensor", r.pos)

    def get(key, shape):
        if key not in tensors:
            raise FormatError(f"missing tensor {key!r}", meta_pos)
        arr = tensors[key]
        if arr.shape != tuple(shape):
            raise FormatError(f"tensor {key!r} shape {arr.shape} disagrees with layer {shape}",
                              meta_pos)
        return arr

    layers = []
    for lm in layer_metas:
        try:
            layers.append((lm["name"], _build_layer(lm, get)))
        except KeyError as e:
            raise FormatError(f"layer metadata missing key {e}", meta_pos) from None
        except _UnknownLayer as e:
            raise FormatError(str(e), meta_pos) from None
    shape = meta.get("input_shape")
    return ModelGraph(layers, metadata=meta.get("metadata", {}),
                      input_shape=tuple(shape) if shape is not None else None)


def _build_layer(lm: dict, get):
    name, kind = lm["name"], lm["type"]
    if kind == "linear":
        o, i = lm["out_features"], lm["in_features"]
        return LinearLayer(get(f"{name}.W", (o, i)), get(f"{name}.b", (o,)))
    if kind == "prelu":
        return PReLULayer(float(get(f"{name}.alpha", ())), trainable=lm.get("trainable", True))
    if kind == "relu":
        return ReLULayer()
    if kind == "flatten":
        return FlattenLayer()
    if kind == "dropout":
        return DropoutLayer(lm["p"])
    if kind == "batchnorm":
        h = lm["width"]
        return BatchNormLayer(h, lm["momentum"], lm["eps"], get(f"{name}.gamma", (h,)),
                              get(f"{name}.beta", (h,)), get(f"{name}.running_mean", (h,)),
                              get(f"{name}.running_var", (h,)))
    if kind == "conv2d":
        kh, kw = lm["kernel"]
        c_out, c_in = lm["out_channels"], lm["in_channels"]
        return Conv2dLayer(get(f"{name}.K", (c_out, c_in, kh, kw)), get(f"{name}.b", (c_out,)),
                           lm["padding"])
    if kind == "block":
        n_in, h, n_out = lm["in_features"], lm["hidden"], lm["out_features"]
        fc1 = LinearLayer(get(f"{name}.fc1.W", (h, n_in)), get(f"{name}.fc1.b", (h,)))
        fc2 = LinearLayer(get(f"{name}.fc2.W", (n_out, h)), get(f"{name}.fc2.b", (n_out,)))
        act = PReLULayer(float(get(f"{name}.act.alpha", ())), trainable=lm.get("trainable", True))
        bn = None
        if lm["batchnorm"]:
            bn = BatchNormLayer(h, lm["bn_momentum"], lm["bn_eps"],
                                get(f"{name}.bn.gamma", (h,)), get(f"{name}.bn.beta", (h,)),
                                get(f"{name}.bn.running_mean", (h,)),
                                get(f"{name}.bn.running_var", (h,)))
        drop = DropoutLayer(lm["dropout"]) if lm["dropout"] > 0 else None
        return CollapsibleBlock(fc1, act, fc2, bn=bn, drop=drop)
    raise _UnknownLayer(f"unknown layer type {kind!r} for {name!r}")


class _UnknownLayer(Exception):
    pass


def load_checkpoint(path) -> ModelGraph:
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())
