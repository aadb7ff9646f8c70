"""Per-instance hyperparameter search over (beta, tau, k) cells with a
log-space bisection on gamma."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ..classifier import Classifier, LossConfig, cfe_loss
from ..plausibility import GravityTerm, PlausibilityModels
from ..proximal import Box, Constraint, Penalty
from ..solver import SolverConfig, apg_batch, apg_solve, make_result


def log_grid(lo: float = 1e-3, hi: float = 1e3, n: int = 7) -> tuple[float, ...]:
    if n == 1:
        return (float(lo),)
    return tuple(float(v) for v in np.logspace(math.log10(lo), math.log10(hi), n))


@dataclass
class SearchSpace:
    betas: tuple[float, ...] = field(default_factory=log_grid)
    taus: tuple[float, ...] = field(default_factory=log_grid)
    gamma_lo: float = 1e-3
    gamma_hi: float = 1e3
    gamma_steps: int = 10
    ks: tuple[int, ...] = (3, 4, 5)

    def validate(self) -> None:
        for name in ("betas", "taus", "ks"):
            grid = list(getattr(self, name))
            if not grid:
                raise ValueError(f"search grid {name} is empty")
            if any(v <= 0 for v in grid):
                raise ValueError(f"search grid {name} must be positive")
            if grid != sorted(grid):
                raise ValueError(f"search grid {name} must be ascending")
        if not 0 < self.gamma_lo <= self.gamma_hi:
            raise ValueError("need 0 < gamma_lo <= gamma_hi")
        if self.gamma_steps < 1:
            raise ValueError("gamma_steps must be at least 1")


def _cells(mode, plaus: PlausibilityModels | None, space: SearchSpace):
    kind = "none" if plaus is None else plaus.kind
    betas = space.betas if isinstance(mode, Penalty) else (None,)
    taus = (0.0,) if kind == "none" else space.taus
    ks = space.ks if kind == "knn" else (None,)
    return [(b, t, k) for b in betas for t in taus for k in ks]


def _term(plaus, target, x_f, ks):
    if plaus is None or plaus.kind == "none":
        return None
    if plaus.kind != "knn":
        return plaus.term(target)
    centers = {k: plaus.term(target, x_f, k).center for k in set(ks)}
    return GravityTerm(np.array([centers[k] for k in ks]))


def _key(res):
    return (res.theta0, res.theta2)


def search_hyperparameters(x_f, target: int, classifier: Classifier,
                           plaus: PlausibilityModels | None, space: SearchSpace,
                           template: SolverConfig, box: Box):
    """Return the best counterfactual found over the grid.

    Each cell bisects ``log10(gamma)`` over ``[gamma_lo, gamma_hi]``: the
    upper end is tried first, then ``gamma_steps - 1`` halvings follow. A
    cell with no valid solution at the upper end instead tries
    ``gamma_steps - 1`` log-spaced values descending towards ``gamma_lo``.
    Each cell contributes one candidate, its smallest valid gamma, and the
    winner minimises ``(theta_0, theta_2)`` over cells. If nothing is valid
    the lowest classifier loss wins and the result is flagged invalid.
    """
    space.validate()
    x_f = np.asarray(x_f, dtype=np.float64)
    mode = template.sparsity
    cfg_loss = LossConfig(target, template.cutoff)
    candidates = []
    if int(classifier.predict(x_f)) == target:
        params = {"gamma": 0.0, "tau": 0.0, "beta": None, "k": None,
                  "m": mode.m if isinstance(mode, Constraint) else None}
        candidates.append(make_result(x_f, x_f, target, classifier, 0.0,
                                      cfe_loss(classifier, x_f, cfg_loss), params))

    cells = _cells(mode, plaus, space)
    betas = np.array([0.0 if b is None else b for b, _, _ in cells])
    taus = np.array([t for _, t, _ in cells])
    ks = [k for _, _, k in cells]
    lo = np.full(len(cells), math.log10(space.gamma_lo))
    hi = np.full(len(cells), math.log10(space.gamma_hi))
    active = np.arange(len(cells))
    cell_best = [None] * len(cells)
    evaluations = 0

    def evaluate(rows, log_gamma):
        nonlocal evaluations
        evaluations += len(rows)
        term = _term(plaus, target, x_f, [ks[i] for i in rows])
        X, obj, loss, _ = apg_batch(
            x_f, target, classifier, term, box, mode, 10.0 ** log_gamma, taus[rows],
            betas[rows], template.iterations, template.step, template.init, template.cutoff)
        out = []
        for j, i in enumerate(rows):
            b, t, k = cells[i]
            params = {"gamma": float(10.0 ** log_gamma[j]), "tau": float(t),
                      "beta": None if b is None else float(b), "k": k,
                      "m": mode.m if isinstance(mode, Constraint) else None}
            res = make_result(X[j], x_f, target, classifier, obj[j], loss[j], params)
            # gamma only decreases along a cell's valid evaluations, so the
            # latest valid one is the smallest valid gamma found
            best = cell_best[i]
            if res.valid or best is None or (not best.valid and res.loss < best.loss):
                cell_best[i] = res
            out.append(res.valid)
        return np.array(out, dtype=bool)

    # validity need not be monotone in gamma: a cell that fails at the top
    # spends its remaining budget on a descending log sweep instead
    ok = evaluate(active, hi[active])
    sweep_rows = active[~ok]
    active = active[ok]
    n_more = space.gamma_steps - 1
    sweep = np.linspace(math.log10(space.gamma_hi), math.log10(space.gamma_lo), n_more + 1)[1:]
    for step in range(n_more):
        mid = 0.5 * (lo[active] + hi[active])
        rows = np.concatenate([active, sweep_rows])
        if rows.size == 0:
            break
        ok = evaluate(rows, np.concatenate([mid, np.full(sweep_rows.size, sweep[step])]))
        ok = ok[: active.size]
        hi[active[ok]] = mid[ok]
        lo[active[~ok]] = mid[~ok]

    candidates.extend(cell_best)
    valid = [c for c in candidates if c.valid]
    if valid:
        best = min(valid, key=_key)
    else:
        best = min(candidates, key=lambda c: c.loss)
    best.params["evaluations"] = evaluations
    return best


def config_from_params(template: SolverConfig, params: dict) -> SolverConfig:
    """Solver config reproducing a search winner's hyperparameters."""
    mode = template.sparsity
    if isinstance(mode, Penalty):
        mode = Penalty(mode.p, params.get("beta") or 0.0)
    return replace(template, gamma=params["gamma"], tau=params["tau"], sparsity=mode,
                   k=params.get("k"))


def resolve(x_f, target, classifier, plaus, cfg: SolverConfig, box: Box):
    """Single solve with ``cfg``, building the plausibility term for ``x_f``."""
    term = None
    if plaus is not None and plaus.kind != "none":
        term = plaus.term(target, x_f, cfg.k)
    return apg_solve(x_f, target, classifier, term, cfg, box)
