"""Accelerated proximal gradient search for sparse, plausible counterfactuals.

The smooth part is ``h(x) = ||x - x_f||^2 + gamma * L(x) - tau * q(x)`` with
``L`` the hinge-style classifier loss and ``q`` a plausibility estimate; the
non-smooth part (box plus sparsity) is handled by :mod:`scfe.proximal`.

The core routine runs a batch of solves in lockstep, one row per
hyperparameter setting, all sharing the same factual point and target.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .classifier import Classifier, LossConfig, cfe_loss_grad
from .metrics import EPS_SPARSE, theta_p
from .proximal import Box, Constraint, Penalty, SparsityMode, apply_prox

INIT_MODES = ("factual", "zero")


class NumericalError(ArithmeticError):
    """A non-finite gradient appeared during a solve."""

    def __init__(self, iteration: int, message: str = "non-finite gradient"):
        super().__init__(f"{message} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class SolverConfig:
    gamma: float = 1.0
    tau: float = 0.0
    sparsity: SparsityMode = field(default_factory=lambda: Penalty(p=1, beta=0.0))
    iterations: int = 200
    step: float = 0.1
    init: str = "factual"
    cutoff: float = 0.0
    record_trajectory: bool = False
    k: int | None = None  # neighbour count, informational for kNN plausibility

    def validate(self) -> None:
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")
        if not self.step > 0:
            raise ValueError("initial step must be positive")
        if self.gamma < 0 or self.tau < 0:
            raise ValueError("gamma and tau must be non-negative")
        if self.init not in INIT_MODES:
            raise ValueError(f"init must be one of {INIT_MODES}")

    @property
    def beta(self) -> float | None:
        return self.sparsity.beta if isinstance(self.sparsity, Penalty) else None


@dataclass
class CfeResult:
    x_cf: np.ndarray
    x_f: np.ndarray
    target: int
    valid: bool
    theta0: float
    theta2: float
    objective: float
    loss: float
    params: dict
    trajectory: np.ndarray | None = None
    lof: float | None = None
    seconds: float = 0.0


def extrapolation_sequence(T: int) -> np.ndarray:
    """Momentum weights ``alpha_1 .. alpha_T`` from the ``beta_t`` recursion."""
    if T < 1:
        raise ValueError("T must be at least 1")
    b = [0.0]
    for _ in range(T + 1):
        b.append(0.5 * (1.0 + math.sqrt(1.0 + 4.0 * b[-1] ** 2)))
    return np.array([(b[t] - 1.0) / b[t + 1] for t in range(1, T + 1)])


def step_schedule(step0: float, T: int) -> np.ndarray:
    """Steps ``sigma_1 .. sigma_T`` with ``sigma_{t+1} = sigma_t sqrt(1 - t/T)``."""
    if not step0 > 0:
        raise ValueError("initial step must be positive")
    out = np.empty(T)
    s = step0
    for t in range(T):
        s *= math.sqrt(1.0 - t / T)
        out[t] = s
    return out


def _rowvec(v, B):
    return np.broadcast_to(np.asarray(v, dtype=np.float64), (B,))


def smooth_value_grad(X, x_f, target: int, classifier: Classifier, term, gamma, tau,
                      cutoff: float = 0.0):
    """Value and gradient of ``h`` for a batch; gamma/tau may be per row."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    B = X.shape[0]
    g = _rowvec(gamma, B)
    t = _rowvec(tau, B)
    diff = X - x_f
    value = np.sum(diff * diff, axis=1)
    grad = 2.0 * diff
    loss, lgrad = cfe_loss_grad(classifier, X, LossConfig(target, cutoff))
    value = value + g * loss
    grad = grad + g[:, None] * lgrad
    if term is not None and np.any(t != 0):
        q, qgrad = term.value_grad(X)
        value = value - t * q
        grad = grad - t[:, None] * qgrad
    return value, grad, loss


def grad_h(x, x_f, target: int, classifier: Classifier, term, gamma: float, tau: float,
           cutoff: float = 0.0) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    _, grad, _ = smooth_value_grad(x, x_f, target, classifier, term, gamma, tau, cutoff)
    return grad[0] if x.ndim == 1 else grad


def h_value(x, x_f, target: int, classifier: Classifier, term, gamma: float, tau: float,
            cutoff: float = 0.0):
    x = np.asarray(x, dtype=np.float64)
    value, _, _ = smooth_value_grad(x, x_f, target, classifier, term, gamma, tau, cutoff)
    return float(value[0]) if x.ndim == 1 else value


def _penalty(mode: SparsityMode, X, x_f, beta) -> np.ndarray:
    if isinstance(mode, Constraint):
        return np.zeros(X.shape[0])
    diff = np.abs(X - x_f)
    if mode.p == 0:
        pen = np.count_nonzero(diff > 0, axis=1).astype(np.float64)
    elif mode.p == 0.5:
        pen = np.sum(np.sqrt(diff), axis=1)
    else:
        pen = np.sum(diff, axis=1)
    return beta * pen


def apg_batch(x_f, target: int, classifier: Classifier, term, box: Box, mode: SparsityMode,
              gammas, taus, betas=None, iterations: int = 200, step: float = 0.1,
              init: str = "factual", cutoff: float = 0.0, record: bool = False):
    """Run ``B`` solves in lockstep; row ``i`` uses ``gammas[i]``, ``taus[i]``, ``betas[i]``.

    Returns ``(X, objective, loss, trajectory)`` where ``trajectory`` has shape
    ``(T + 1, B, d)`` when ``record`` is set and is ``None`` otherwise.
    """
    x_f = np.asarray(x_f, dtype=np.float64)
    if not box.contains(x_f):
        raise ValueError("factual point lies outside the box")
    gammas = np.atleast_1d(np.asarray(gammas, dtype=np.float64))
    B = gammas.shape[0]
    taus = _rowvec(taus, B)
    if betas is None:
        betas = mode.beta if isinstance(mode, Penalty) else 0.0
    betas = _rowvec(betas, B)
    d = x_f.shape[0]
    alphas = extrapolation_sequence(iterations)
    steps = step_schedule(step, iterations)

    x_prev = np.tile(x_f, (B, 1)) if init == "factual" else np.zeros((B, d))
    z = x_prev.copy()
    traj = [x_prev.copy()] if record else None
    for t in range(iterations):
        _, r, _ = smooth_value_grad(z, x_f, target, classifier, term, gammas, taus, cutoff)
        if not np.all(np.isfinite(r)):
            raise NumericalError(t)
        s = z - steps[t] * r
        x = apply_prox(mode, s, x_f, steps[t], box, beta=betas)
        z = x + alphas[t] * (x - x_prev)
        x_prev = x
        if record:
            traj.append(x.copy())
    value, _, loss = smooth_value_grad(x_prev, x_f, target, classifier, term, gammas, taus, cutoff)
    objective = value + _penalty(mode, x_prev, x_f, betas)
    return x_prev, objective, loss, (np.stack(traj) if record else None)


def make_result(x, x_f, target: int, classifier: Classifier, objective: float, loss: float,
                params: dict, trajectory=None) -> CfeResult:
    x = np.asarray(x, dtype=np.float64)
    return CfeResult(
        x_cf=x,
        x_f=np.asarray(x_f, dtype=np.float64),
        target=int(target),
        valid=int(classifier.predict(x)) == int(target),
        theta0=theta_p(x, x_f, 0, EPS_SPARSE),
        theta2=theta_p(x, x_f, 2),
        objective=float(objective),
        loss=float(loss),
        params=dict(params),
        trajectory=trajectory,
    )


def apg_solve(x_f, target: int, classifier: Classifier, term, cfg: SolverConfig,
              box: Box) -> CfeResult:
    """Single counterfactual search with fixed hyperparameters."""
    cfg.validate()
    LossConfig(target, cfg.cutoff).validate(classifier)
    X, obj, loss, traj = apg_batch(
        x_f, target, classifier, term, box, cfg.sparsity, [cfg.gamma], [cfg.tau],
        iterations=cfg.iterations, step=cfg.step, init=cfg.init, cutoff=cfg.cutoff,
        record=cfg.record_trajectory)
    params = {"gamma": cfg.gamma, "tau": cfg.tau, "beta": cfg.beta, "k": cfg.k,
              "m": cfg.sparsity.m if isinstance(cfg.sparsity, Constraint) else None}
    return make_result(X[0], x_f, target, classifier, obj[0], loss[0], params,
                       None if traj is None else traj[:, 0, :])
