"""Linearity regulariser and the fine-tuning objective."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigError, DimensionError
from .nn import ModelGraph
from .tensor import Tensor

LC_FINETUNE = 0.2
LC_SCRATCH = 0.05


@dataclass(frozen=True)
class RegConfig:
    lc: float = LC_FINETUNE
    layer_fraction: float = 1.0

    def __post_init__(self):
        problems = []
        if not self.lc >= 0:
            problems.append(f"reg.lc must be >= 0, got {self.lc}")
        if not 0.0 <= self.layer_fraction <= 1.0:
            problems.append(f"reg.layer_fraction must be in [0, 1], got {self.layer_fraction}")
        if problems:
            raise ConfigError(problems)


@dataclass
class LossBreakdown:
    total: Tensor
    ce_term: float
    kl_term: float
    reg_term: float

    def as_dict(self) -> dict[str, float]:
        return {"total": float(self.total.data), "ce": self.ce_term,
                "kl": self.kl_term, "reg": self.reg_term}


def reg_loss(alphas: Sequence[Tensor], cfg: RegConfig) -> Tensor:
    """``sum(lc * (1 - alpha)^2)`` over the given slope parameters."""
    total = Tensor(0.0)
    for a in alphas:
        d = 1.0 - a
        total = total + cfg.lc * (d * d)
    return total


def select_regularized_layers(m: ModelGraph, fraction: float) -> list[str]:
    """Names of the last ``ceil(fraction * n_blocks)`` collapsible blocks, in model order."""
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError(f"layer fraction must be in [0, 1], got {fraction}")
    names = [n for n, _ in m.blocks()]
    # guard against 0.4 * 5 = 2.0000000000000004 style round-up
    k = math.ceil(round(fraction * len(names), 9))
    return names[len(names) - k:] if k else []


def _one_hot(labels, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= n_classes:
        raise DimensionError(f"labels out of range for {n_classes} classes")
    out = np.zeros((labels.shape[0], n_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Batch mean of ``-log softmax(logits)[label]``."""
    logits = T.as_tensor(logits)
    if logits.ndim != 2 or len(labels) != logits.shape[0]:
        raise DimensionError(
            f"cross_entropy: logits {logits.shape} vs {len(labels)} labels")
    mask = _one_hot(labels, logits.shape[1])
    return -(T.log_softmax(logits) * mask).sum() / logits.shape[0]


def kl_divergence(student_logits: Tensor, teacher_probs) -> Tensor:
    """Batch mean of ``KL(teacher || softmax(student))`` at temperature 1."""
    student_logits = T.as_tensor(student_logits)
    p = np.asarray(getattr(teacher_probs, "data", teacher_probs), dtype=np.float64)
    if p.shape != student_logits.shape:
        raise DimensionError(
            f"kl_divergence: teacher {p.shape} vs student {student_logits.shape}")
    with np.errstate(divide="ignore"):
        plogp = np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0).sum()
    cross = (T.log_softmax(student_logits) * p).sum()
    return (plogp - cross) / p.shape[0]


def mse_loss(pred: Tensor, target) -> Tensor:
    pred = T.as_tensor(pred)
    target = np.asarray(getattr(target, "data", target), dtype=np.float64).reshape(pred.shape)
    diff = pred - target
    return (diff * diff).mean()


def composite_loss(student_logits: Tensor, labels, teacher_probs=None,
                   alphas: Sequence[Tensor] = (), cfg: RegConfig | None = None) -> LossBreakdown:
    """``CE/2 + KL/2 + reg`` with a teacher, otherwise ``CE + reg``.

    The breakdown's ``ce_term``/``kl_term`` are the weighted contributions, so
    they always add up to ``total`` together with ``reg_term``.
    """
    cfg = cfg or RegConfig()
    ce = cross_entropy(student_logits, labels)
    reg = reg_loss(alphas, cfg)
    if teacher_probs is None:
        total = ce + reg
        return LossBreakdown(total, float(ce.data), 0.0, float(reg.data))
    kl = kl_divergence(student_logits, teacher_probs)
    ce_w, kl_w = 0.5 * ce, 0.5 * kl
    total = ce_w + kl_w + reg
    return LossBreakdown(total, float(ce_w.data), float(kl_w.data), float(reg.data))


def regression_loss(pred: Tensor, target, alphas: Sequence[Tensor] = (),
                    cfg: RegConfig | None = None) -> LossBreakdown:
    """MSE plus the linearity penalty; the MSE sits in the ``ce_term`` slot."""
    cfg = cfg or RegConfig()
    mse = mse_loss(pred, target)
    reg = reg_loss(alphas, cfg)
    return LossBreakdown(mse + reg, float(mse.data), 0.0, float(reg.data))
