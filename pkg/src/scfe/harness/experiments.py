"""Benchmark, robustness and synthetic-demo experiments writing CSV artifacts."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..classifier import Classifier, TrainReport, accuracy, load_model, make_linear, make_mlp, train_adam
from ..metrics import LofIndex, MetricsReport, aggregate_report
from ..numerics import make_rng
from ..plausibility import KINDS, PlausibilityModels, fit_plausibility
from ..proximal import Constraint, Penalty
from ..solver import CfeResult, SolverConfig
from .datasets import DatasetTable, generate_synth2d, load_csv_dataset, load_wine, split_dataset
from .search import SearchSpace, config_from_params, resolve, search_hyperparameters

RESULT_COLUMNS = ("index", "target", "valid", "theta0", "theta2", "lof",
                  "beta", "tau", "gamma", "k", "seconds")
ROBUSTNESS_COLUMNS = ("radius", "plausibility", "input_l2", "output_l2")

# stream ids for make_rng(seed, stream, ...)
_SPLIT, _TRAIN, _PLAUS, _SYNTH, _PERTURB = range(5)


@dataclass
class ExperimentConfig:
    dataset: str = "synth2d"  # "synth2d", "wine" or a CSV path
    label_column: str = "label"
    binarize: str | None = None
    n_test: int = 100
    pca_dim: int = 0
    synth_n_per_class: int = 200
    synth_centers: tuple = ((-3.0, 0.0), (3.0, 0.0))
    synth_cov: tuple = ((1.0, 0.0), (0.0, 1.0))

    model_kind: str = "linear"  # "linear" or "mlp"
    model_path: str | None = None
    hidden: int = 20
    n_hidden: int = 2
    epochs: int = 20
    batch: int = 32
    lr: float = 1e-3

    plausibility: str = "kde"
    bandwidth: float | None = None
    gmm_components: int = 5
    gmm_iter: int = 100
    gmm_tol: float = 1e-6
    gmm_ridge: float = 1e-6
    k: int = 3

    sparsity: str = "constraint"  # "constraint" or "penalty"
    p: float = 0
    m: int = 1

    iterations: int = 200
    step: float = 0.1
    init: str = "factual"
    cutoff: float = 0.0
    gamma: float = 1.0
    tau: float = 1.0
    beta: float = 0.1

    search: bool = True
    space: SearchSpace = field(default_factory=SearchSpace)

    target: str = "auto"  # auto, flip, runner_up, or a class index
    lof_k: int = 20
    seed: int = 0
    jobs: int = 1
    timing: bool = True
    output_dir: str = "out"
    radii: tuple = (0.0, 0.05, 0.1, 0.2)
    kinds: tuple = ("none", "kde", "gmm", "knn")
    demo_instances: int = 10

    def sparsity_mode(self):
        if self.sparsity == "constraint":
            return Constraint(int(self.m))
        if self.sparsity == "penalty":
            return Penalty(float(self.p), float(self.beta))
        raise ValueError(f"unknown sparsity mode {self.sparsity!r}")

    def solver_config(self, **overrides) -> SolverConfig:
        cfg = SolverConfig(gamma=self.gamma, tau=self.tau if self.plausibility != "none" else 0.0,
                           sparsity=self.sparsity_mode(), iterations=self.iterations,
                           step=self.step, init=self.init, cutoff=self.cutoff,
                           k=self.k if self.plausibility == "knn" else None)
        return replace(cfg, **overrides)


@dataclass
class Context:
    train: DatasetTable
    test: DatasetTable
    classifier: Classifier
    train_report: TrainReport | None = None
    lof_index: LofIndex | None = None


def load_table(cfg: ExperimentConfig) -> DatasetTable:
    if cfg.dataset == "synth2d":
        return generate_synth2d(cfg.synth_n_per_class, cfg.synth_centers, cfg.synth_cov,
                                make_rng(cfg.seed, _SYNTH), train_separator=False)
    if cfg.dataset == "wine":
        return load_wine()
    return load_csv_dataset(cfg.dataset, cfg.label_column, binarize=cfg.binarize)


def build_classifier(cfg: ExperimentConfig, train: DatasetTable, test: DatasetTable):
    rng = make_rng(cfg.seed, _TRAIN)
    n_classes = int(max(train.y.max(), test.y.max() if test.n else 0)) + 1
    if cfg.model_kind == "mlp":
        model = make_mlp(train.dim, n_classes, rng, cfg.hidden, cfg.n_hidden)
    elif cfg.model_kind == "linear":
        model = make_linear(train.dim, n_classes, rng)
    else:
        raise ValueError(f"unknown model kind {cfg.model_kind!r}")
    report = train_adam(model, train.X, train.y, cfg.epochs, cfg.batch, cfg.lr, rng,
                        test.X, test.y)
    return model, report


def prepare(cfg: ExperimentConfig) -> Context:
    """Load, split and (train or load) the classifier; fully determined by ``cfg.seed``."""
    table = load_table(cfg)
    train, test = split_dataset(table, cfg.n_test, make_rng(cfg.seed, _SPLIT), cfg.pca_dim or None)
    if cfg.model_path:
        model = load_model(cfg.model_path)
        if model.n_inputs != train.dim:
            raise ValueError(f"model expects {model.n_inputs} features, dataset has {train.dim}")
        report = TrainReport([], accuracy(model, train.X, train.y), accuracy(model, test.X, test.y))
    else:
        model, report = build_classifier(cfg, train, test)
    return Context(train, test, model, report, LofIndex(train.X, k=min(cfg.lof_k, train.n - 1)))


def fit_models(cfg: ExperimentConfig, ctx: Context, kind: str | None = None) -> PlausibilityModels:
    kind = cfg.plausibility if kind is None else kind
    preds = ctx.classifier.predict(ctx.train.X)
    return fit_plausibility(kind, ctx.train.X, ctx.train.y, preds, ctx.train.classes,
                            rng=make_rng(cfg.seed, _PLAUS), bandwidth=cfg.bandwidth,
                            n_components=cfg.gmm_components, max_iter=cfg.gmm_iter,
                            tol=cfg.gmm_tol, ridge=cfg.gmm_ridge, k=cfg.k)


def choose_target(classifier: Classifier, x, policy: str) -> int | None:
    """Target class for factual ``x``; ``None`` when ``x`` already has it."""
    pred = int(classifier.predict(x))
    if policy == "auto":
        policy = "flip" if classifier.binary else "runner_up"
    if policy == "flip":
        if not classifier.binary:
            raise ValueError("target policy 'flip' needs a binary classifier")
        return 1 - pred
    if policy == "runner_up":
        z = np.array(classifier.logits(x), dtype=np.float64).reshape(-1)
        if classifier.binary:
            return 1 - pred
        z[pred] = -np.inf
        return int(np.argmax(z))
    target = int(policy)
    return None if target == pred else target


def explain(cfg: ExperimentConfig, ctx: Context, plaus: PlausibilityModels, x_f, target: int,
            record: bool = False) -> CfeResult:
    """One counterfactual under ``cfg`` (searched or fixed hyperparameters)."""
    template = cfg.solver_config(record_trajectory=record)
    box = ctx.train.box
    t0 = time.perf_counter()
    if cfg.search:
        res = search_hyperparameters(x_f, target, ctx.classifier, plaus, cfg.space, template, box)
        if record:
            res = resolve(x_f, target, ctx.classifier, plaus,
                          config_from_params(template, res.params), box)
    else:
        res = resolve(x_f, target, ctx.classifier, plaus, template, box)
    res.seconds = time.perf_counter() - t0
    if ctx.lof_index is not None:
        res.lof = ctx.lof_index.score(res.x_cf)
    return res


def _instances(cfg: ExperimentConfig, ctx: Context):
    out = []
    for i in range(ctx.test.n):
        target = choose_target(ctx.classifier, ctx.test.X[i], cfg.target)
        if target is not None:
            out.append((i, target))
    return out


def _solve_one(args):
    cfg, ctx, plaus, i, target = args
    return explain(cfg, ctx, plaus, ctx.test.X[i], target)


def _map(cfg: ExperimentConfig, fn, items):
    if cfg.jobs > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(it) for it in items]


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".10g")


def results_csv(indexed_results, timing: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_COLUMNS)
    for i, r in indexed_results:
        p = r.params
        w.writerow([_fmt(v) for v in (i, r.target, r.valid, r.theta0, r.theta2, r.lof,
                                      p.get("beta"), p.get("tau"), p.get("gamma"), p.get("k"),
                                      r.seconds if timing else 0.0)])
    return buf.getvalue()


def method_name(cfg: ExperimentConfig, kind: str | None = None) -> str:
    kind = cfg.plausibility if kind is None else kind
    sparsity = f"m{cfg.m}" if cfg.sparsity == "constraint" else f"p{cfg.p:g}"
    return f"scfe-{kind}-{sparsity}"


def _outdir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_benchmark(cfg: ExperimentConfig, ctx: Context | None = None, write: bool = True):
    """Explain every test point that needs a class change and summarise.

    Returns ``(report, [(test_index, result), ...])``; with ``write`` the
    per-instance ``results.csv`` and one-row ``report.csv`` go to the output
    directory.
    """
    ctx = prepare(cfg) if ctx is None else ctx
    plaus = fit_models(cfg, ctx)
    items = [(cfg, ctx, plaus, i, t) for i, t in _instances(cfg, ctx)]
    if not items:
        raise ValueError("no test point needs a class change under this target policy")
    t0 = time.perf_counter()
    results = _map(cfg, _solve_one, items)
    elapsed = time.perf_counter() - t0
    indexed = [(it[3], r) for it, r in zip(items, results)]
    report = aggregate_report(results, ctx.lof_index, method_name(cfg), _dataset_name(cfg),
                              elapsed if cfg.timing else 0.0)
    if write:
        out = _outdir(cfg)
        (out / "results.csv").write_text(results_csv(indexed, cfg.timing))
        (out / "report.csv").write_text(report.to_csv())
    return report, indexed


def _dataset_name(cfg: ExperimentConfig) -> str:
    return Path(cfg.dataset).stem if cfg.dataset not in ("synth2d", "wine") else cfg.dataset


def _unit_direction(seed: int, instance: int, radius_idx: int, d: int) -> np.ndarray:
    u = make_rng(seed, _PERTURB, instance, radius_idx).standard_normal(d)
    return u / np.linalg.norm(u)


def _robust_one(args):
    cfg, ctx, plaus, kind, i, target, radii = args
    x_f = ctx.test.X[i]
    box = ctx.train.box
    template = cfg.solver_config()
    if cfg.search:
        found = search_hyperparameters(x_f, target, ctx.classifier, plaus, cfg.space, template, box)
        solver_cfg = config_from_params(template, found.params)
    else:
        solver_cfg = template
    base = resolve(x_f, target, ctx.classifier, plaus, solver_cfg, box)
    rows = []
    for ri, r in enumerate(radii):
        x_p = np.clip(x_f + r * _unit_direction(cfg.seed, i, ri, x_f.shape[0]), box.lower, box.upper)
        res = resolve(x_p, target, ctx.classifier, plaus, solver_cfg, box)
        rows.append((r, kind, i, float(np.linalg.norm(x_p - x_f)),
                     float(np.linalg.norm(res.x_cf - base.x_cf))))
    return rows


def run_robustness(cfg: ExperimentConfig, radii=None, kinds=None, ctx: Context | None = None,
                   write: bool = True):
    """Perturb each factual on spheres of the given radii and re-explain it
    with the hyperparameters chosen for the unperturbed point.

    Returns ``(summary_rows, instance_rows)``. Summary rows hold per
    (radius, kind) medians of the input and output distances.
    """
    radii = sorted(cfg.radii if radii is None else radii)
    kinds = list(cfg.kinds if kinds is None else kinds)
    for kind in kinds:
        if kind not in KINDS:
            raise ValueError(f"unknown plausibility kind {kind!r}")
    ctx = prepare(cfg) if ctx is None else ctx
    instances = _instances(cfg, ctx)
    detail = []
    for kind in kinds:
        kcfg = replace(cfg, plausibility=kind)
        plaus = fit_models(kcfg, ctx, kind)
        items = [(kcfg, ctx, plaus, kind, i, t, radii) for i, t in instances]
        for rows in _map(cfg, _robust_one, items):
            detail.extend(rows)
    summary = []
    for r in radii:
        for kind in kinds:
            sel = [row for row in detail if row[0] == r and row[1] == kind]
            summary.append((r, kind, float(np.median([s[3] for s in sel])),
                            float(np.median([s[4] for s in sel]))))
    detail.sort(key=lambda row: (row[0], kinds.index(row[1]), row[2]))
    if write:
        out = _outdir(cfg)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROBUSTNESS_COLUMNS)
        for r, kind, a, b in summary:
            w.writerow([_fmt(r), kind, _fmt(a), _fmt(b)])
        (out / "robustness.csv").write_text(buf.getvalue())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("radius", "plausibility", "instance", "input_l2", "output_l2"))
        for r, kind, i, a, b in detail:
            w.writerow([_fmt(r), kind, i, _fmt(a), _fmt(b)])
        (out / "robustness_instances.csv").write_text(buf.getvalue())
    return summary, detail


def trajectory_csv(trajectories) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    d = trajectories[0][1].shape[1] if trajectories else 0
    w.writerow(["instance", "iter"] + [f"coord{j}" for j in range(d)])
    for inst, traj in trajectories:
        for t, x in enumerate(traj):
            w.writerow([inst, t] + [_fmt(v) for v in x])
    return buf.getvalue()


def run_synth_demo(cfg: ExperimentConfig, kinds=None, ctx: Context | None = None, write: bool = True):
    """Record full iterate paths for a few test points of the 2-D set.

    Writes ``trajectory_<kind>.csv`` per plausibility kind, ``boundary.csv``
    (``w0,w1,b`` of the linear logit ``w.x + b``) and ``points.csv``.
    Returns ``{kind: [(instance, result), ...]}``.
    """
    if cfg.iterations < 1:
        raise ValueError("iterations must be positive")
    kinds = list(cfg.kinds if kinds is None else kinds)
    ctx = prepare(cfg) if ctx is None else ctx
    instances = _instances(cfg, ctx)[: cfg.demo_instances]
    runs = {}
    for kind in kinds:
        kcfg = replace(cfg, plausibility=kind)
        plaus = fit_models(kcfg, ctx, kind)
        runs[kind] = [(i, explain(kcfg, ctx, plaus, ctx.test.X[i], t, record=True))
                      for i, t in instances]
    if write:
        out = _outdir(cfg)
        for kind, res in runs.items():
            (out / f"trajectory_{kind}.csv").write_text(
                trajectory_csv([(i, r.trajectory) for i, r in res]))
        head = ctx.classifier.layers
        if len(head) == 1 and ctx.classifier.binary:
            W, b = head[0].W[:, 0], head[0].b[0]
            (out / "boundary.csv").write_text(
                "w0,w1,b\n" + ",".join(_fmt(v) for v in (*W, b)) + "\n")
        lines = ["x,y,label"] + [f"{_fmt(a)},{_fmt(b)},{int(c)}"
                                 for (a, b), c in zip(ctx.train.X, ctx.train.y)]
        (out / "points.csv").write_text("\n".join(lines) + "\n")
    return runs
