"""Seeded synthetic datasets and IDX (MNIST-style) file ingestion."""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError, FormatError

IDX_UBYTE = 0x08
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray
    targets: np.ndarray
    split: np.ndarray  # "train" / "val" per row
    task: str = "classification"

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        if self.inputs.ndim == 1:
            self.inputs = self.inputs[:, None]
        self.targets = np.asarray(self.targets)
        self.split = np.asarray(self.split)
        n = self.inputs.shape[0]
        if self.targets.shape[0] != n or self.split.shape[0] != n:
            raise DimensionError(
                f"dataset: {n} inputs, {self.targets.shape[0]} targets, {self.split.shape[0]} split tags")
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"unknown task {self.task!r}")

    def __len__(self):
        return self.inputs.shape[0]

    def subset(self, tag: str) -> "Dataset":
        mask = self.split == tag
        return Dataset(self.inputs[mask], self.targets[mask], self.split[mask], self.task)

    @property
    def train(self) -> "Dataset":
        return self.subset("train")

    @property
    def val(self) -> "Dataset":
        return self.subset("val")

    @property
    def n_classes(self) -> int:
        return int(self.targets.max()) + 1 if self.task == "classification" else 0


def _split_tags(rng, n: int, val_fraction: float) -> np.ndarray:
    if not 0.0 <= val_fraction < 1.0:
        raise ConfigError(f"val_fraction must be in [0, 1), got {val_fraction}")
    tags = np.full(n, "train", dtype=object)
    n_val = int(round(n * val_fraction))
    tags[rng.permutation(n)[:n_val]] = "val"
    return tags.astype(str)


REGRESSION_SHAPES = {
    "sine": lambda x: np.sin(np.pi * x),
    "piecewise": lambda x: np.where(x < 0, -0.5 * x, 1.5 * x) - 0.5,
    "linear": lambda x: 0.8 * x + 0.1,
}


def gen_regression_1d(seed: int, n: int, noise_std: float, shape: str = "sine",
                      val_fraction: float = 0.2) -> Dataset:
    """``y = f(x) + noise`` with ``x ~ U[-1, 1]`` and Gaussian noise of std ``noise_std``."""
    if shape not in REGRESSION_SHAPES:
        raise ConfigError(f"unknown regression shape {shape!r}; known: {sorted(REGRESSION_SHAPES)}")
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=n)
    noise = rng.normal(0.0, noise_std, size=n) if noise_std > 0 else np.zeros(n)
    y = REGRESSION_SHAPES[shape](x) + noise
    return Dataset(x[:, None], y[:, None], _split_tags(rng, n, val_fraction), "regression")


def gen_blobs(seed: int, n: int, classes: int = 4, spread: float = 0.5, dim: int = 2,
              radius: float = 2.0, val_fraction: float = 0.2) -> Dataset:
    """Isotropic Gaussian clusters centred evenly on a circle (first two input axes)."""
    if classes < 2 or dim < 2:
        raise ConfigError("gen_blobs needs at least 2 classes and 2 dimensions")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    angles = 2 * np.pi * np.arange(classes) / classes
    centres = np.zeros((classes, dim))
    centres[:, 0], centres[:, 1] = radius * np.cos(angles), radius * np.sin(angles)
    X = centres[labels] + spread * rng.standard_normal((n, dim))
    return Dataset(X, labels, _split_tags(rng, n, val_fraction))


def gen_two_spirals(seed: int, n: int, classes: int = 2, spread: float = 0.1,
                    turns: float = 1.5, val_fraction: float = 0.2) -> Dataset:
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)
    t = rng.uniform(0.05, 1.0, size=n)
    theta = 2 * np.pi * turns * t + 2 * np.pi * labels / classes
    X = np.stack([t * np.cos(theta), t * np.sin(theta)], axis=1)
    X += spread * rng.standard_normal(X.shape)
    return Dataset(X, labels, _split_tags(rng, n, val_fraction))


# -- IDX ----------------------------------------------------------------------

def parse_idx(buf: bytes) -> np.ndarray:
    """Decode an unsigned-byte IDX payload into an array of its declared shape."""
    if len(buf) < 4:
        raise FormatError(f"IDX header needs 4 bytes, file has {len(buf)}", len(buf))
    zero, dtype, ndim = struct.unpack(">HBB", buf[:4])
    if zero != 0 or dtype != IDX_UBYTE or ndim == 0:
        raise FormatError(f"bad IDX magic 0x{int.from_bytes(buf[:4], 'big'):08x}", 0)
    header = 4 + 4 * ndim
    if len(buf) < header:
        raise FormatError(f"IDX header truncated: need {header} bytes", len(buf))
    dims = struct.unpack(f">{ndim}I", buf[4:header])
    count = int(np.prod(dims, dtype=np.int64))
    if len(buf) < header + count:
        raise FormatError(
            f"IDX payload truncated: expected {count} bytes, found {len(buf) - header}", len(buf))
    if len(buf) > header + count:
        raise FormatError("trailing bytes after IDX payload", header + count)
    return np.frombuffer(buf, dtype=np.uint8, count=count, offset=header).reshape(dims)


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as f:
        return parse_idx(f.read())


def encode_idx(arr) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise DimensionError(f"IDX encoding needs uint8 data, got {arr.dtype}")
    header = struct.pack(">HBB", 0, IDX_UBYTE, arr.ndim)
    header += struct.pack(f">{arr.ndim}I", *arr.shape)
    return header + arr.tobytes(order="C")


def write_idx(path, arr) -> None:
    data = encode_idx(arr)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(data)
    os.replace(tmp, path)


def load_idx(images_path, labels_path=None, val_fraction: float = 0.2, seed: int = 0) -> Dataset:
    """Images scaled to [0, 1] and flattened row-major; labels become class targets.

    Without a labels file every target is 0.
    """
    images = read_idx(images_path)
    if images.ndim == 1:
        images = images[:, None]
    X = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    if labels_path is not None:
        labels = read_idx(labels_path)
        if labels.ndim != 1 or labels.shape[0] != X.shape[0]:
            raise DimensionError(
                f"labels shape {labels.shape} does not match {X.shape[0]} images")
        y = labels.astype(np.int64)
    else:
        y = np.zeros(X.shape[0], dtype=np.int64)
    rng = np.random.default_rng(seed)
    return Dataset(X, y, _split_tags(rng, X.shape[0], val_fraction))
