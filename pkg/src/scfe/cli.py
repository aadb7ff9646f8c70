"""Command line entry point: ``scfe train|explain|benchmark|robustness|demo``.

Settings come from a ``key = value`` config file (dotted keys, ``#``
comments) and can be overridden by flags; every key has one.
"""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .classifier import ModelFormatError, save_model
from .harness.datasets import DatasetError
from .harness.experiments import (ExperimentConfig, choose_target, explain, fit_models, prepare,
                                  run_benchmark, run_robustness, run_synth_demo)
from .harness.search import SearchSpace
from .solver import NumericalError

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 2, 3


class ConfigError(ValueError):
    pass


def _bool(v: str) -> bool:
    low = v.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


def _opt(conv):
    def parse(v: str):
        return None if v.strip().lower() in ("", "none") else conv(v)
    return parse


def _floats(v: str) -> tuple:
    return tuple(float(s) for s in v.split(",") if s.strip())


def _ints(v: str) -> tuple:
    return tuple(int(s) for s in v.split(",") if s.strip())


def _words(v: str) -> tuple:
    return tuple(s.strip() for s in v.split(",") if s.strip())


def _pairs(v: str) -> tuple:
    return tuple(_floats(row) for row in v.split(";") if row.strip())


@dataclass(frozen=True)
class Key:
    name: str
    field: str
    parse: Callable
    help: str
    flag: str = ""
    path: bool = False

    @property
    def option(self) -> str:
        return "--" + (self.flag or self.name.replace(".", "-").replace("_", "-"))


KEYS = [
    Key("dataset.path", "dataset", str, "synth2d, wine, or a CSV file", path=True),
    Key("dataset.label_column", "label_column", str, "label column of a CSV dataset"),
    Key("dataset.binarize", "binarize", _opt(str), "'median' to threshold a numeric label"),
    Key("dataset.n_test", "n_test", int, "number of held-out test rows"),
    Key("dataset.pca_dim", "pca_dim", int, "project onto this many principal axes (0 = off)"),
    Key("synth.n_per_class", "synth_n_per_class", int, "synthetic points per class"),
    Key("synth.centers", "synth_centers", _pairs, "blob centers 'x0,y0;x1,y1'"),
    Key("synth.cov", "synth_cov", _pairs, "shared covariance 'a,b;c,d'"),
    Key("model.kind", "model_kind", str, "linear or mlp"),
    Key("model.path", "model_path", _opt(str), "model file (train writes it, others read it)",
        path=True),
    Key("model.hidden", "hidden", int, "hidden units per layer"),
    Key("model.n_hidden", "n_hidden", int, "number of hidden layers"),
    Key("model.epochs", "epochs", int, "training epochs"),
    Key("model.batch", "batch", int, "minibatch size"),
    Key("model.lr", "lr", float, "Adam learning rate"),
    Key("plausibility.kind", "plausibility", str, "none, kde, gmm or knn"),
    Key("plausibility.bandwidth", "bandwidth", _opt(float), "KDE bandwidth (default Scott)"),
    Key("plausibility.gmm_components", "gmm_components", int, "GMM components per class"),
    Key("plausibility.gmm_iter", "gmm_iter", int, "EM iteration cap"),
    Key("plausibility.gmm_tol", "gmm_tol", float, "EM tolerance per sample"),
    Key("plausibility.gmm_ridge", "gmm_ridge", float, "covariance ridge"),
    Key("plausibility.k", "k", int, "neighbour count for density gravity"),
    Key("sparsity.mode", "sparsity", str, "constraint or penalty"),
    Key("sparsity.p", "p", float, "penalty order: 0, 0.5 or 1"),
    Key("sparsity.m", "m", int, "max changed features in constraint mode"),
    Key("solver.iterations", "iterations", int, "APG iterations"),
    Key("solver.step", "step", float, "initial step size"),
    Key("solver.init", "init", str, "factual or zero"),
    Key("solver.cutoff", "cutoff", float, "hinge cutoff c"),
    Key("solver.gamma", "gamma", float, "classifier-loss weight when search is off"),
    Key("solver.tau", "tau", float, "plausibility weight when search is off"),
    Key("solver.beta", "beta", float, "sparsity penalty weight when search is off"),
    Key("search.enabled", "search", _bool, "run the per-instance hyperparameter search"),
    Key("search.betas", "space.betas", _floats, "beta grid"),
    Key("search.taus", "space.taus", _floats, "tau grid"),
    Key("search.gamma_lo", "space.gamma_lo", float, "gamma bracket lower end"),
    Key("search.gamma_hi", "space.gamma_hi", float, "gamma bracket upper end"),
    Key("search.gamma_steps", "space.gamma_steps", int, "gamma evaluations per cell"),
    Key("search.ks", "space.ks", _ints, "neighbour counts tried for density gravity"),
    Key("run.target", "target", str, "auto, flip, runner_up or a class index", flag="target"),
    Key("run.lof_k", "lof_k", int, "LOF neighbour count", flag="lof-k"),
    Key("run.seed", "seed", int, "seed for every random choice", flag="seed"),
    Key("run.jobs", "jobs", int, "worker processes", flag="jobs"),
    Key("run.timing", "timing", _bool, "record wall-clock seconds (0 keeps CSVs byte-stable)",
        flag="timing"),
    Key("run.output_dir", "output_dir", _opt(str), "output directory (env SCFE_OUT_DIR)",
        flag="output-dir", path=True),
    Key("run.radii", "radii", _floats, "robustness perturbation radii", flag="radii"),
    Key("run.kinds", "kinds", _words, "plausibility kinds for robustness/demo", flag="kinds"),
    Key("run.demo_instances", "demo_instances", int, "instances traced by demo",
        flag="demo-instances"),
]
KEY_INDEX = {k.name: k for k in KEYS}


def read_config(path) -> dict:
    """Parse a config file into ``{key: raw_string}``; relative paths resolve
    against the file's directory."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in KEY_INDEX:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if KEY_INDEX[key].path and value not in ("", "none", "synth2d", "wine"):
            if not Path(value).is_absolute():
                value = str(path.parent / value)
        out[key] = value
    return out


def build_config(raw: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = base or ExperimentConfig()
    space = {}
    values = {}
    for name, text in raw.items():
        key = KEY_INDEX[name]
        try:
            value = key.parse(text)
        except ValueError as exc:
            raise ConfigError(f"bad value for {name}: {exc}") from None
        if key.field.startswith("space."):
            space[key.field[6:]] = value
        else:
            values[key.field] = value
    if "output_dir" in values and values["output_dir"] is None:
        del values["output_dir"]
    cfg = replace(cfg, **values)
    if space:
        cfg = replace(cfg, space=replace(cfg.space, **space))
    return cfg


def validate_config(cfg: ExperimentConfig, need_model: bool = False) -> None:
    if cfg.dataset not in ("synth2d", "wine") and not Path(cfg.dataset).is_file():
        raise ConfigError(f"dataset file not found: {cfg.dataset}")
    if need_model and cfg.model_path and not Path(cfg.model_path).is_file():
        raise ConfigError(f"model file not found: {cfg.model_path}")
    choices = {"model.kind": (cfg.model_kind, ("linear", "mlp")),
               "plausibility.kind": (cfg.plausibility, ("none", "kde", "gmm", "knn")),
               "sparsity.mode": (cfg.sparsity, ("constraint", "penalty")),
               "solver.init": (cfg.init, ("factual", "zero"))}
    for name, (value, allowed) in choices.items():
        if value not in allowed:
            raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
    for kind in cfg.kinds:
        if kind not in ("none", "kde", "gmm", "knn"):
            raise ConfigError(f"run.kinds: unknown plausibility kind {kind!r}")
    if cfg.target not in ("auto", "flip", "runner_up"):
        try:
            int(cfg.target)
        except ValueError:
            raise ConfigError(f"run.target must be auto, flip, runner_up or an integer") from None
    if cfg.jobs < 1:
        raise ConfigError("run.jobs must be at least 1")
    try:
        cfg.sparsity_mode()
        cfg.solver_config().validate()
        cfg.space.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="key = value config file")
    for key in KEYS:
        common.add_argument(key.option, dest=key.name, metavar="VALUE",
                            help=f"{key.help} [{key.name}]")
    parser = argparse.ArgumentParser(prog="scfe", description="Sparse, plausible counterfactual "
                                     "explanations by accelerated proximal gradient.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train and save a classifier")
    ex = sub.add_parser("explain", parents=[common], help="explain one point")
    which = ex.add_mutually_exclusive_group(required=True)
    which.add_argument("--index", type=int, help="row of the test split")
    which.add_argument("--input-row", metavar="V1,V2,...", help="raw feature values")
    ex.add_argument("--output", metavar="PATH", help="also write the result row to this CSV")
    sub.add_parser("benchmark", parents=[common], help="metrics over the test split")
    sub.add_parser("robustness", parents=[common], help="perturbation curves")
    sub.add_parser("demo", parents=[common], help="synthetic 2-D trajectories")
    return parser


def config_from_args(args) -> ExperimentConfig:
    raw = read_config(args.config) if args.config else {}
    for key in KEYS:
        value = getattr(args, key.name)
        if value is not None:
            raw[key.name] = value
    if "run.output_dir" not in raw or raw["run.output_dir"] in ("", "none"):
        raw["run.output_dir"] = os.environ.get("SCFE_OUT_DIR", "out")
    return build_config(raw)


def cmd_train(cfg: ExperimentConfig, args) -> int:
    ctx = prepare(replace(cfg, model_path=None))
    path = Path(cfg.model_path or Path(cfg.output_dir) / "model.txt")
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(ctx.classifier, path)
    rep = ctx.train_report
    print(f"train_accuracy={rep.train_accuracy:.4f} test_accuracy={rep.test_accuracy:.4f} "
          f"model={path}")
    return EXIT_OK


def _explain_row(ctx, cfg, x_f, label) -> tuple[list, list]:
    target = choose_target(ctx.classifier, x_f, cfg.target)
    d = x_f.shape[0]
    header = ["index", "target", "valid", "theta0", "theta2", "lof"] + [f"coord{j}" for j in range(d)]
    if target is None:
        target = int(ctx.classifier.predict(x_f))
        x_cf, valid, t0, t2 = x_f, True, 0.0, 0.0
        lof_val = ctx.lof_index.score(x_f)
    else:
        plaus = fit_models(cfg, ctx)
        res = explain(cfg, ctx, plaus, x_f, target)
        x_cf, valid, t0, t2, lof_val = res.x_cf, res.valid, res.theta0, res.theta2, res.lof
    row = [label, target, int(valid), f"{t0:g}", f"{t2:.10g}", f"{lof_val:.10g}"]
    return header, row + [f"{v:.10g}" for v in x_cf]


def cmd_explain(cfg: ExperimentConfig, args) -> int:
    ctx = prepare(cfg)
    if args.index is not None:
        if not 0 <= args.index < ctx.test.n:
            raise ConfigError(f"--index must be in [0, {ctx.test.n}), got {args.index}")
        x_f, label = ctx.test.X[args.index], str(args.index)
    else:
        try:
            raw = np.array(_floats(args.input_row), dtype=np.float64)
        except ValueError:
            raise ConfigError(f"--input-row is not a list of numbers: {args.input_row!r}") from None
        n_raw = ctx.train.scaler.min_.shape[0]
        if raw.shape != (n_raw,):
            raise ConfigError(f"--input-row needs {n_raw} values, got {raw.size}")
        x_f, label = ctx.train.transform(raw[None, :])[0], "input"
    header, row = _explain_row(ctx, cfg, x_f, label)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerow(row)
    sys.stdout.write(buf.getvalue())
    if args.output:
        Path(args.output).parent.mkdir(parents=True, exist_ok=True)
        Path(args.output).write_text(buf.getvalue())
    return EXIT_OK


def cmd_benchmark(cfg: ExperimentConfig, args) -> int:
    report, _ = run_benchmark(cfg)
    sys.stdout.write(report.to_csv())
    print(f"wrote {Path(cfg.output_dir) / 'results.csv'} and {Path(cfg.output_dir) / 'report.csv'}")
    return EXIT_OK


def cmd_robustness(cfg: ExperimentConfig, args) -> int:
    summary, _ = run_robustness(cfg)
    print("radius,plausibility,input_l2,output_l2")
    for r, kind, a, b in summary:
        print(f"{r:g},{kind},{a:.6g},{b:.6g}")
    print(f"wrote {Path(cfg.output_dir) / 'robustness.csv'}")
    return EXIT_OK


def cmd_demo(cfg: ExperimentConfig, args) -> int:
    runs = run_synth_demo(cfg)
    for kind, res in runs.items():
        n_valid = sum(r.valid for _, r in res)
        print(f"{kind}: {n_valid}/{len(res)} valid, trajectory_{kind}.csv")
    print(f"wrote {cfg.output_dir}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "explain": cmd_explain, "benchmark": cmd_benchmark,
            "robustness": cmd_robustness, "demo": cmd_demo}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        validate_config(cfg, need_model=args.command != "train")
        return COMMANDS[args.command](cfg, args)
    except NumericalError as exc:
        print(f"scfe: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DatasetError, ModelFormatError, FileNotFoundError, ValueError) as exc:
        print(f"scfe: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
