"""JSON run configuration, validated with pydantic (unknown keys are rejected)."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .collapse import CollapseConfig
from .data import Dataset, gen_blobs, gen_regression_1d, gen_two_spirals, load_idx
from .errors import ConfigError
from .losses import RegConfig
from .train import Fig1Config, TrainConfig


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class ModelSection(_Section):
    arch: Optional[dict] = None
    checkpoint: Optional[str] = None
    retrofit: bool = False

    @model_validator(mode="after")
    def _one_source(self):
        if (self.arch is None) == (self.checkpoint is None):
            raise ValueError("exactly one of 'arch' or 'checkpoint' is required")
        return self


class DataSection(_Section):
    generator: Literal["blobs", "spirals", "regression", "idx"] = "blobs"
    n: int = Field(2000, ge=1)
    classes: int = Field(4, ge=2)
    spread: float = Field(0.5, ge=0)
    dim: int = Field(2, ge=2)
    noise_std: float = Field(0.3, ge=0)
    shape: Literal["sine", "piecewise", "linear"] = "sine"
    val_fraction: float = Field(0.2, ge=0, lt=1)
    images: Optional[str] = None
    labels: Optional[str] = None
    seed: Optional[int] = None


class TrainSection(_Section):
    epochs: int = Field(10, ge=0)
    batch_size: int = Field(32, ge=1)
    lr: float = Field(5e-4, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    lr_schedule: list[tuple[int, float]] = []
    max_epochs_per_layer: int = Field(10, ge=0)
    max_total_epochs: Optional[int] = Field(None, ge=0)
    use_teacher: bool = True


class RegSection(_Section):
    lc: float = Field(0.2, ge=0)
    layer_fraction: float = Field(1.0, ge=0, le=1)


class CollapseSection(_Section):
    tau: float = Field(0.05, ge=0)


class BoundSection(_Section):
    deltas: list[float] = [0.1, 0.05, 0.01]
    samples: int = Field(10000, ge=100)
    distribution: Literal["normal", "uniform", "data"] = "normal"


class Fig1Section(_Section):
    n: int = Field(60, ge=4)
    noise_std: float = Field(0.3, ge=0)
    shape: Literal["sine", "piecewise", "linear"] = "sine"
    hidden: int = Field(64, ge=1)
    epochs: int = Field(300, ge=0)
    batch_size: int = Field(16, ge=1)
    lr: float = Field(0.02, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    lc: float = Field(1.0, ge=0)
    val_fraction: float = Field(0.5, gt=0, lt=1)
    grid: int = Field(101, ge=2)


class RunConfig(_Section):
    seed: int = 0
    model: Optional[ModelSection] = None
    data: DataSection = DataSection()
    train: TrainSection = TrainSection()
    reg: RegSection = RegSection()
    collapse: CollapseSection = CollapseSection()
    bound: BoundSection = BoundSection()
    fig1: Fig1Section = Fig1Section()
    out: str = "out"

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(seed=self.seed, epochs=t.epochs, batch_size=t.batch_size, lr=t.lr,
                           momentum=t.momentum, lr_schedule=tuple(t.lr_schedule),
                           reg=self.reg_config(), tau=self.collapse.tau,
                           max_epochs_per_layer=t.max_epochs_per_layer,
                           max_total_epochs=t.max_total_epochs, use_teacher=t.use_teacher)

    def reg_config(self) -> RegConfig:
        return RegConfig(lc=self.reg.lc, layer_fraction=self.reg.layer_fraction)

    def collapse_config(self) -> CollapseConfig:
        return CollapseConfig(tau=self.collapse.tau)

    def fig1_config(self) -> Fig1Config:
        return Fig1Config(seed=self.seed, **self.fig1.model_dump())

    def dataset(self) -> Dataset:
        d = self.data
        seed = self.seed if d.seed is None else d.seed
        if d.generator == "blobs":
            return gen_blobs(seed, d.n, d.classes, d.spread, d.dim, val_fraction=d.val_fraction)
        if d.generator == "spirals":
            return gen_two_spirals(seed, d.n, d.classes, d.spread, val_fraction=d.val_fraction)
        if d.generator == "regression":
            return gen_regression_1d(seed, d.n, d.noise_std, d.shape, d.val_fraction)
        if d.images is None:
            raise ConfigError("data.images: required for the idx generator")
        return load_idx(d.images, d.labels, d.val_fraction, seed)


def _format_errors(err: ValidationError) -> list[str]:
    out = []
    for e in err.errors():
        loc = ".".join(str(p) for p in e["loc"]) or "<root>"
        out.append(f"{loc}: {e['msg']}")
    return out


def parse_config(raw: dict) -> RunConfig:
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(_format_errors(e)) from None


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return parse_config(raw)


def apply_overrides(cfg: RunConfig, seed=None, lc=None, tau=None, epochs=None,
                    out=None) -> RunConfig:
    raw = cfg.model_dump(exclude_unset=True)
    if seed is not None:
        raw["seed"] = seed
    if lc is not None:
        raw.setdefault("reg", {})["lc"] = lc
        raw.setdefault("fig1", {})["lc"] = lc
    if tau is not None:
        raw.setdefault("collapse", {})["tau"] = tau
    if epochs is not None:
        raw.setdefault("train", {})["epochs"] = epochs
        raw.setdefault("fig1", {})["epochs"] = epochs
    if out is not None:
        raw["out"] = out
    return parse_config(raw)
