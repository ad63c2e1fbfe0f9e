"""Deterministic momentum-SGD training, layer-by-layer collapse and the demo procedures."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .collapse import CollapseConfig, CollapseReport, collapse_model
from .data import Dataset, gen_regression_1d
from .errors import ConfigError, DivergenceError
from .losses import (LC_FINETUNE, RegConfig, composite_loss, regression_loss,
                     select_regularized_layers)
from .nn import CollapsibleBlock, LinearLayer, ModelGraph, PReLULayer
from .tensor import Tensor, no_grad, softmax

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 10
    batch_size: int = 32
    lr: float = 5e-4
    momentum: float = 0.9
    # (epoch, factor): at the start of ``epoch`` the current lr is multiplied by ``factor``
    lr_schedule: tuple[tuple[int, float], ...] = ()
    reg: RegConfig = field(default_factory=RegConfig)
    tau: float = 0.05
    max_epochs_per_layer: int = 10
    max_total_epochs: int | None = None
    use_teacher: bool = True

    def __post_init__(self):
        problems = []
        if not self.lr > 0:
            problems.append(f"train.lr must be > 0, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            problems.append(f"train.momentum must be in [0, 1), got {self.momentum}")
        if self.batch_size < 1:
            problems.append(f"train.batch_size must be >= 1, got {self.batch_size}")
        if self.epochs < 0 or self.max_epochs_per_layer < 0:
            problems.append("epoch counts must be non-negative")
        if self.tau < 0:
            problems.append(f"train.tau must be >= 0, got {self.tau}")
        if problems:
            raise ConfigError(problems)
        object.__setattr__(self, "lr_schedule",
                           tuple((int(e), float(f)) for e, f in self.lr_schedule))

    def lr_at(self, epoch: int) -> float:
        lr = self.lr
        for e, factor in self.lr_schedule:
            if epoch >= e:
                lr *= factor
        return lr


def sgd_step(params, grads, velocity, lr: float, momentum: float):
    """Heavy-ball update in place: ``v = momentum * v + g``, ``w = w - lr * v``.

    ``params``/``grads`` are parallel sequences of arrays; ``velocity`` is a
    list of the same length (entries may be None on the first step). Returns
    the updated params.
    """
    for i, (w, g) in enumerate(zip(params, grads)):
        if g is None:
            continue
        v = g.copy() if velocity[i] is None else momentum * velocity[i] + g
        velocity[i] = v
        w -= lr * v
    return params


class SGD:
    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.9):
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity: list = [None] * len(params)

    def step(self):
        tensors = list(self.params.values())
        sgd_step([p.data for p in tensors], [p.grad for p in tensors],
                 self.velocity, self.lr, self.momentum)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# -- evaluation ---------------------------------------------------------------

def teacher_probabilities(teacher: ModelGraph, X) -> np.ndarray:
    with no_grad():
        return softmax(teacher.forward(X, training=False)).data


def _alpha_tensors(m: ModelGraph, names) -> list[Tensor]:
    out = []
    for name in names:
        layer = m[name]
        if isinstance(layer, CollapsibleBlock):
            out.append(layer.alpha)
        elif isinstance(layer, PReLULayer):
            out.append(layer.alpha)
    return out


def _loss(m: ModelGraph, task: str, out: Tensor, targets, teacher_probs, alphas, reg):
    if task == "regression":
        return regression_loss(out, targets, alphas, reg)
    return composite_loss(out, targets, teacher_probs, alphas, reg)


def metric(m: ModelGraph, data: Dataset) -> float:
    """Top-1 accuracy for classification, MSE for regression (eval mode)."""
    if len(data) == 0:
        return float("nan")
    pred = m.predict(data.inputs)
    if data.task == "regression":
        return float(np.mean((pred - data.targets.reshape(pred.shape)) ** 2))
    return float(np.mean(np.argmax(pred, axis=1) == data.targets))


def evaluate(m: ModelGraph, data: Dataset, reg: RegConfig | None = None,
             regularized=(), teacher_probs=None) -> dict[str, float]:
    reg = reg or RegConfig()
    with no_grad():
        out = m.forward(data.inputs, training=False)
        bd = _loss(m, data.task, out, data.targets, teacher_probs,
                   _alpha_tensors(m, regularized), reg)
    row = bd.as_dict()
    row["metric"] = metric(m, data)
    return row


# -- training -----------------------------------------------------------------

@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)
    epochs_run: int = 0

    def epoch_losses(self, split: str = "train") -> list[float]:
        return [r["total"] for r in self.rows if r["split"] == split]


def _snapshot(m: ModelGraph):
    return ([p.data.copy() for p in m.parameters().values()],
            [{k: v.copy() for k, v in layer.buffers().items()} for _, layer in m.layers])


def _restore(m: ModelGraph, snap) -> None:
    params, buffers = snap
    for p, saved in zip(m.parameters().values(), params):
        p.data[...] = saved
    for (_, layer), saved in zip(m.layers, buffers):
        for k, v in saved.items():
            if "." in k:
                sub, attr = k.split(".", 1)
                setattr(getattr(layer, sub), attr, v)
            else:
                setattr(layer, k, v)


def train(m: ModelGraph, data: Dataset, cfg: TrainConfig, teacher: ModelGraph | None = None,
          regularized: list[str] | None = None, epochs: int | None = None,
          rng: np.random.Generator | None = None) -> TrainLog:
    """Minimise the (composite) loss with momentum SGD, in place.

    ``regularized`` lists the layers whose slopes get the linearity penalty;
    by default the last ``cfg.reg.layer_fraction`` of the collapsible blocks.
    A teacher (classification only) adds the distillation term.
    Raises :class:`DivergenceError` on a non-finite loss after restoring the
    parameters from the start of the failing epoch.
    """
    if regularized is None:
        regularized = select_regularized_layers(m, cfg.reg.layer_fraction)
    epochs = cfg.epochs if epochs is None else epochs
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    tr, va = data.train, data.val
    t_train = t_val = None
    if teacher is not None and data.task == "classification":
        t_train = teacher_probabilities(teacher, tr.inputs)
        t_val = teacher_probabilities(teacher, va.inputs) if len(va) else None
    alphas = _alpha_tensors(m, regularized)
    opt = SGD(m.trainable_parameters(), cfg.lr, cfg.momentum)
    result = TrainLog()
    n = len(tr)

    for epoch in range(epochs):
        opt.lr = cfg.lr_at(epoch)
        snap = _snapshot(m)
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if idx.size < 2:
                continue
            out = m.forward(tr.inputs[idx], training=True, rng=rng)
            bd = _loss(m, data.task, out, tr.targets[idx],
                       None if t_train is None else t_train[idx], alphas, cfg.reg)
            if not math.isfinite(float(bd.total.data)):
                _restore(m, snap)
                raise DivergenceError(f"non-finite loss at epoch {epoch}; parameters restored")
            opt.zero_grad()
            bd.total.backward()
            opt.step()
        opt.zero_grad()
        result.epochs_run += 1
        alpha_vals = m.alphas()
        for split, part, tp in (("train", tr, t_train), ("val", va, t_val)):
            if len(part) == 0:
                continue
            row = {"epoch": epoch, "split": split, "lr": opt.lr}
            row.update(evaluate(m, part, cfg.reg, regularized, tp))
            row.update({f"alpha:{k}": v for k, v in alpha_vals.items()})
            result.rows.append(row)
        log.debug("epoch %d: %s", epoch, result.rows[-1])
    return result


# -- sequential collapse ------------------------------------------------------

@dataclass
class Stage:
    layer_name: str
    finetune_epochs: int
    alpha: float
    collapsed: bool
    params: int
    val_metric: float
    report: CollapseReport


def sequential_collapse(m: ModelGraph, data: Dataset, cfg: TrainConfig,
                        teacher: ModelGraph | None = None):
    """Fine-tune then fuse each collapsible block, starting from the last one.

    For each block: if its slope is already within ``cfg.tau`` of 1 it is fused
    straight away; otherwise it alone gets the linearity penalty for
    ``cfg.max_epochs_per_layer`` epochs, after which one collapse is attempted.
    Blocks that still fail the tolerance are reported and left in place.
    ``cfg.max_total_epochs`` caps fine-tuning across all stages.

    Returns ``(model, reports, stages)``; ``m`` itself is not modified.
    """
    model = m.copy()
    if teacher is None and cfg.use_teacher and data.task == "classification":
        teacher = m.copy()
    rng = np.random.default_rng(cfg.seed)
    collapse_cfg = CollapseConfig(cfg.tau)
    reports, stages = [], []
    total_epochs = 0
    for name in reversed([n for n, _ in model.blocks()]):
        block = model[name]
        epochs = 0
        if abs(1.0 - block.act.value) > cfg.tau:
            budget = cfg.max_epochs_per_layer
            if cfg.max_total_epochs is not None:
                budget = max(0, min(budget, cfg.max_total_epochs - total_epochs))
            if budget:
                epochs = train(model, data, cfg, teacher=teacher, regularized=[name],
                               epochs=budget, rng=rng).epochs_run
                total_epochs += epochs
        alpha = model[name].act.value
        model, (rep,) = collapse_model(model, collapse_cfg, only=[name])
        reports.append(rep)
        stages.append(Stage(name, epochs, alpha, rep.collapsed, model.count_params(),
                            metric(model, data.val), rep))
        log.info("stage %s: alpha=%.4f collapsed=%s params=%d", name, alpha,
                 rep.collapsed, model.count_params())
    return model, reports, stages


def force_linear(m: ModelGraph, name: str) -> ModelGraph:
    """Copy of ``m`` with block ``name`` fused as if its slope were exactly 1."""
    out = m.copy()
    out[name].act.alpha.data[...] = 1.0
    out, _ = collapse_model(out, CollapseConfig(0.0), only=[name])
    return out


def sensitivity_sweep(m: ModelGraph, data: Dataset, cfg: TrainConfig,
                      finetune: bool = True) -> list[dict]:
    """Validation metric and parameter count as blocks are collapsed one by one from the end.

    With ``finetune`` the stages come from :func:`sequential_collapse`;
    otherwise each block is linearised outright (slope set to 1) and fused.
    Row 0 is the untouched baseline.
    """
    rows = [{"layers_collapsed": 0, "layer_name": "", "val_metric": metric(m, data.val),
             "params": m.count_params()}]
    if finetune:
        _, _, stages = sequential_collapse(m, data, cfg)
        done = 0
        for st in stages:
            done += int(st.collapsed)
            rows.append({"layers_collapsed": done, "layer_name": st.layer_name,
                         "val_metric": st.val_metric, "params": st.params})
        return rows
    model = m
    for i, name in enumerate(reversed([n for n, _ in m.blocks()]), start=1):
        model = force_linear(model, name)
        rows.append({"layers_collapsed": i, "layer_name": name,
                     "val_metric": metric(model, data.val), "params": model.count_params()})
    return rows


# -- 1-D regression demo ------------------------------------------------------

@dataclass(frozen=True)
class Fig1Config:
    seed: int = 0
    n: int = 60
    noise_std: float = 0.3
    shape: str = "sine"
    hidden: int = 64
    epochs: int = 300
    batch_size: int = 16
    lr: float = 0.02
    momentum: float = 0.9
    lc: float = 1.0
    val_fraction: float = 0.5
    grid: int = 101
    settings: tuple = (0.0, 0.5, 1.0, "learned")


def regression_net(hidden: int, seed: int, alpha: float = 0.25, trainable: bool = True) -> ModelGraph:
    from .nn import init_model

    m = init_model({"input_dim": 1, "layers": [
        {"type": "block", "name": "mlp", "hidden": hidden, "out": 1}]}, seed=seed)
    m["mlp"].act.alpha.data[...] = alpha
    m["mlp"].act.trainable = trainable
    # spread the hidden units' kinks across the input range
    rng = np.random.default_rng(seed + 1)
    m["mlp"].fc1.b.data[...] = rng.uniform(-1.0, 1.0, hidden)
    return m


def fit_regression(data: Dataset, cfg: Fig1Config, setting) -> tuple[ModelGraph, TrainLog]:
    learned = setting == "learned"
    m = regression_net(cfg.hidden, cfg.seed, 0.25 if learned else float(setting),
                       trainable=learned)
    tcfg = TrainConfig(seed=cfg.seed, epochs=cfg.epochs, batch_size=cfg.batch_size,
                       lr=cfg.lr, momentum=cfg.momentum,
                       reg=RegConfig(lc=cfg.lc if learned else 0.0))
    history = train(m, data, tcfg, regularized=["mlp"] if learned else [])
    return m, history


def demo_fig1(cfg: Fig1Config | None = None):
    """Fit the same two-layer net at several fixed slopes and with a learned slope.

    Returns ``(curve_rows, metric_rows, models)``: fitted values on a uniform
    grid over [-1, 1] plus the data points, and per-setting train/val MSE.
    """
    cfg = cfg or Fig1Config()
    data = gen_regression_1d(cfg.seed, cfg.n, cfg.noise_std, cfg.shape, cfg.val_fraction)
    grid = np.linspace(-1.0, 1.0, cfg.grid)
    fits, metrics, models = {}, [], {}
    for setting in cfg.settings:
        m, _ = fit_regression(data, cfg, setting)
        key = "learned" if setting == "learned" else f"{float(setting):g}"
        models[key] = m
        fits[key] = m.predict(grid[:, None])[:, 0]
        metrics.append({"setting": key, "alpha": m["mlp"].act.value,
                        "train_mse": metric(m, data.train), "val_mse": metric(m, data.val)})
    curves = []
    for i, x in enumerate(grid):
        row = {"kind": "fit", "x": x, "y_data": ""}
        row.update({f"fit_{k}": v[i] for k, v in fits.items()})
        curves.append(row)
    for x, y, s in zip(data.inputs[:, 0], data.targets[:, 0], data.split):
        row = {"kind": f"data_{s}", "x": x, "y_data": y}
        row.update({f"fit_{k}": "" for k in fits})
        curves.append(row)
    return curves, metrics, models


def with_overrides(cfg: TrainConfig, **kw) -> TrainConfig:
    return replace(cfg, **{k: v for k, v in kw.items() if v is not None})
