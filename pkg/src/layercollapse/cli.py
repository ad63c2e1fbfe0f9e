"""Command-line entry point: ``layercollapse <command> --config run.json [overrides]``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import arch as A
from .bound import verify_bound
from .checkpoint import load_checkpoint, save_checkpoint
from .collapse import collapse_model, count_model_macs
from .config import RunConfig, apply_overrides, load_config, parse_config
from .errors import ConfigError, FormatError, LayerCollapseError
from .losses import select_regularized_layers
from .nn import ModelGraph, init_model
from .reports import render_csv, write_csv
from .tensor import as_tensor, no_grad
from .train import demo_fig1, evaluate, sensitivity_sweep, sequential_collapse, train

log = logging.getLogger("layercollapse")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_FORMAT, EXIT_IO = 0, 1, 2, 3, 4

COLLAPSE_FIELDS = ["layer_name", "alpha", "collapsed", "params_before", "params_after",
                   "gain", "macs_before", "macs_after"]


def _setup_logging() -> None:
    level = os.environ.get("LC_LOG_LEVEL", "info").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"LC_LOG_LEVEL must be one of error, info, debug; got {level!r}")
    logging.basicConfig(level=levels[level], format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else parse_config({})
    return apply_overrides(cfg, seed=args.seed, lc=args.lc, tau=args.tau,
                           epochs=args.epochs, out=args.out)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _model(cfg: RunConfig) -> ModelGraph:
    if cfg.model is None:
        raise ConfigError("model: this command needs a 'model' section (arch or checkpoint)")
    if cfg.model.checkpoint is not None:
        return load_checkpoint(cfg.model.checkpoint)
    return init_model(cfg.model.arch, seed=cfg.seed, retrofit_mode=cfg.model.retrofit)


def _stamp(m: ModelGraph, cfg: RunConfig, command: str) -> None:
    echo = cfg.model_dump(exclude={"out"})
    m.metadata.update({"seed": str(cfg.seed), "command": command,
                       "config": json.dumps(echo, sort_keys=True, separators=(",", ":"))})


def _log_rows(history) -> list[dict]:
    return [dict(r) for r in history.rows]


# -- commands -----------------------------------------------------------------

def cmd_train(cfg: RunConfig, args) -> None:
    m = _model(cfg)
    data = cfg.dataset()
    history = train(m, data, cfg.train_config())
    out = _out_dir(cfg)
    _stamp(m, cfg, "train")
    save_checkpoint(m, out / "model.lckp")
    write_csv(out / "train_log.csv", _log_rows(history))
    print(f"trained {history.epochs_run} epochs; checkpoint {out / 'model.lckp'}")


def cmd_finetune(cfg: RunConfig, args) -> None:
    m = _model(cfg)
    data = cfg.dataset()
    tcfg = cfg.train_config()
    teacher = m.copy() if tcfg.use_teacher else None
    regularized = select_regularized_layers(m, tcfg.reg.layer_fraction)
    history = train(m, data, tcfg, teacher=teacher, regularized=regularized)
    out = _out_dir(cfg)
    _stamp(m, cfg, "finetune")
    save_checkpoint(m, out / "model.lckp")
    write_csv(out / "train_log.csv", _log_rows(history))
    print(f"fine-tuned {history.epochs_run} epochs on {regularized}; alphas {m.alphas()}")


def cmd_collapse(cfg: RunConfig, args) -> None:
    m = _model(cfg)
    out = _out_dir(cfg)
    if args.sequential:
        data = cfg.dataset()
        collapsed, reports, stages = sequential_collapse(m, data, cfg.train_config())
        write_csv(out / "stages.csv", [
            {"layer_name": s.layer_name, "finetune_epochs": s.finetune_epochs,
             "alpha": s.alpha, "collapsed": s.collapsed, "params": s.params,
             "val_metric": s.val_metric} for s in stages])
    else:
        collapsed, reports = collapse_model(m, cfg.collapse_config())
    _stamp(collapsed, cfg, "collapse")
    save_checkpoint(collapsed, out / "collapsed.lckp")
    write_csv(out / "collapse_report.csv", [r.csv_row() for r in reports], COLLAPSE_FIELDS)
    fused = sum(r.collapsed for r in reports)
    print(f"collapsed {fused}/{len(reports)} blocks; params "
          f"{m.count_params()} -> {collapsed.count_params()}")


def cmd_eval(cfg: RunConfig, args) -> None:
    m = _model(cfg)
    row = {"params": m.count_params()}
    if m.input_shape is not None:
        row["macs"] = count_model_macs(m)
    if cfg.model.checkpoint is None or args.with_data:
        data = cfg.dataset()
        for split, part in (("train", data.train), ("val", data.val)):
            if len(part):
                ev = evaluate(m, part, cfg.reg_config())
                row[f"{split}_loss"] = ev["total"]
                row[f"{split}_metric"] = ev["metric"]
    row.update({f"alpha:{k}": v for k, v in m.alphas().items()})
    out = _out_dir(cfg)
    write_csv(out / "eval.csv", [row])
    print(render_csv([row]), end="")


def gain_report_rows(families) -> tuple[list[dict], list[dict]]:
    table1, table2 = [], []
    for fam in families:
        d = A.describe(fam)
        ps, ms = A.mlp_share(d)
        table1.append({"family": d.family, "params_share_pct": 100 * ps,
                       "macs_share_pct": 100 * ms})
        for k in A.TABLE2_STEPS.get(d.family, (0, len(d.collapsible_sites))):
            p, mac = A.collapse_accounting(d, k)
            table2.append({"family": d.family, "collapsed_layers": k,
                           "params_M": p / 1e6, "macs_G": mac / 1e9,
                           "params": p, "macs": mac})
    return table1, table2


def cmd_gain_report(cfg: RunConfig, args) -> None:
    families = args.family or list(A.FAMILIES)
    table1, table2 = gain_report_rows(families)
    out = _out_dir(cfg)
    write_csv(out / "table1.csv", table1)
    write_csv(out / "table2.csv", table2)
    print(render_csv(table1), end="")


def _block_inputs(m: ModelGraph, name: str, cfg: RunConfig, rng) -> np.ndarray:
    block = m[name]
    n = cfg.bound.samples
    if cfg.bound.distribution == "data":
        X = cfg.dataset().inputs
        with no_grad():
            for lname, layer in m.layers:
                if lname == name:
                    break
                X = layer.forward(as_tensor(X), training=False).data
        return X
    width = block.dims[0]
    if cfg.bound.distribution == "uniform":
        return rng.uniform(-1.0, 1.0, size=(n, width))
    return rng.standard_normal((n, width))


def cmd_bound_check(cfg: RunConfig, args) -> None:
    m = _model(cfg)
    rng = np.random.default_rng(cfg.seed)
    rows = []
    for name, block in m.blocks():
        if block.bn is not None:
            log.info("skipping %s: the bound covers blocks without batch normalisation", name)
            continue
        X = _block_inputs(m, name, cfg, rng)
        for delta in cfg.bound.deltas:
            rep = verify_bound(block, X, delta, seed=cfg.seed)
            rows.append(rep.csv_row(name))
    out = _out_dir(cfg)
    write_csv(out / "bound_check.csv", rows)
    print(render_csv(rows), end="")


def cmd_sensitivity(cfg: RunConfig, args) -> None:
    m = _model(cfg)
    rows = sensitivity_sweep(m, cfg.dataset(), cfg.train_config(), finetune=not args.no_finetune)
    out = _out_dir(cfg)
    write_csv(out / "sensitivity.csv", rows)
    print(render_csv(rows), end="")


def cmd_demo_fig1(cfg: RunConfig, args) -> None:
    curves, metrics, _ = demo_fig1(cfg.fig1_config())
    out = _out_dir(cfg)
    write_csv(out / "fig1_curves.csv", curves)
    write_csv(out / "fig1_metrics.csv", metrics)
    print(render_csv(metrics), end="")


COMMANDS = {
    "train": (cmd_train, "train a model from its config (from scratch)"),
    "finetune": (cmd_finetune, "fine-tune with the linearity penalty and a frozen teacher"),
    "collapse": (cmd_collapse, "fuse every block whose slope is within tau of 1"),
    "eval": (cmd_eval, "report parameters, MACs and metrics of a model"),
    "gain-report": (cmd_gain_report, "parameter/MAC tables for reference architectures"),
    "bound-check": (cmd_bound_check, "empirical check of the squared-error bound per block"),
    "sensitivity": (cmd_sensitivity, "metric and size as blocks collapse one by one"),
    "demo-fig1": (cmd_demo_fig1, "1-D regression fits at several PReLU slopes"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="layercollapse")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--seed", type=int)
        p.add_argument("--lc", type=float, help="regularisation strength")
        p.add_argument("--tau", type=float, help="collapse tolerance on |1 - alpha|")
        p.add_argument("--epochs", type=int)
        p.add_argument("--out", help="output directory")
        if name == "collapse":
            p.add_argument("--sequential", action="store_true",
                           help="fine-tune and fuse block by block from the last one")
        if name == "gain-report":
            p.add_argument("--family", action="append",
                           help="architecture family (repeatable); default: all")
        if name == "sensitivity":
            p.add_argument("--no-finetune", action="store_true",
                           help="linearise blocks outright instead of fine-tuning")
        if name == "eval":
            p.add_argument("--with-data", action="store_true",
                           help="also evaluate metrics when the model comes from a checkpoint")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        cfg = _config(args)
        COMMANDS[args.command][0](cfg, args)
    except ConfigError as e:
        for problem in e.problems:
            print(f"error[config]: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except FormatError as e:
        print(f"error[format]: {e}", file=sys.stderr)
        return EXIT_FORMAT
    except FileNotFoundError as e:
        print(f"error[io]: file not found: {e.filename}", file=sys.stderr)
        return EXIT_IO
    except LayerCollapseError as e:
        print(f"error[{e.category}]: {e}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
