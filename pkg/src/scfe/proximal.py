"""Exact proximal maps of ``I_box + beta * theta_p(., x_f)`` and the projection
onto the l0-ball around ``x_f`` intersected with the box.

Every penalty operator minimises, coordinatewise,

    1/2 (z - s)^2 + lam * phi(z - x_f)    subject to  lower <= z <= upper

with ``lam = beta * step``. The problems are separable, so the box is
handled exactly by comparing a handful of candidates per coordinate.
All functions broadcast over leading batch dimensions; ``lam`` may be a
scalar or an array broadcastable against ``(B, 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if lo.shape != hi.shape:
            raise ValueError("box bounds differ in shape")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def unit(cls, d: int) -> "Box":
        return cls(np.zeros(d), np.ones(d))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x, atol: float = 0.0) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))

    def freeze(self, indices, x_f) -> "Box":
        """Box with the listed features pinned to their factual values."""
        lo, hi = self.lower.copy(), self.upper.copy()
        idx = list(indices)
        lo[idx] = np.asarray(x_f)[idx]
        hi[idx] = np.asarray(x_f)[idx]
        return Box(lo, hi)


@dataclass(frozen=True)
class Penalty:
    p: float
    beta: float

    def __post_init__(self):
        if self.p not in (0, 0.5, 1):
            raise ValueError(f"penalty exponent must be 0, 1/2 or 1, got {self.p}")
        if self.beta < 0:
            raise ValueError("beta must be non-negative")


@dataclass(frozen=True)
class Constraint:
    m: int

    def __post_init__(self):
        if self.m < 0:
            raise ValueError("m must be non-negative")


SparsityMode = Penalty | Constraint


def _lam(lam, s):
    lam = np.asarray(lam, dtype=np.float64)
    if lam.ndim == 1 and s.ndim == 2:
        lam = lam[:, None]
    return lam


def project_box(s, box: Box) -> np.ndarray:
    return np.clip(s, box.lower, box.upper)


def prox_l1_box(s, x_f, lam, box: Box) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    lam = _lam(lam, s)
    w = s - x_f
    shrunk = np.sign(w) * np.maximum(np.abs(w) - lam, 0.0)
    return np.clip(x_f + shrunk, box.lower, box.upper)


def prox_l0_penalty_box(s, x_f, lam, box: Box) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    x_f = np.broadcast_to(np.asarray(x_f, dtype=np.float64), s.shape)
    lam = _lam(lam, s)
    kept = np.clip(s, box.lower, box.upper)
    cost_keep = 0.5 * (kept - s) ** 2 + lam * (kept != x_f)
    cost_reset = 0.5 * (x_f - s) ** 2
    return np.where(cost_keep < cost_reset, kept, x_f)


HALF_THRESHOLD_CONST = 54.0 ** (1.0 / 3.0) / 4.0


def half_threshold(w, lam) -> np.ndarray:
    """Unconstrained minimiser of 1/2 (z - w)^2 + lam * sqrt(|z|)."""
    w = np.asarray(w, dtype=np.float64)
    lam = np.broadcast_to(np.asarray(lam, dtype=np.float64), w.shape)
    thr = HALF_THRESHOLD_CONST * (2.0 * lam) ** (2.0 / 3.0)
    big = np.abs(w) > thr
    out = np.zeros_like(w)
    a = np.abs(w[big])
    arg = np.clip(lam[big] / 4.0 * (a / 3.0) ** -1.5, -1.0, 1.0)
    phi = np.arccos(arg)
    out[big] = 2.0 / 3.0 * w[big] * (1.0 + np.cos(2.0 * np.pi / 3.0 - 2.0 * phi / 3.0))
    return out


def prox_l_half_box(s, x_f, lam, box: Box) -> np.ndarray:
    s = np.asarray(s, dtype=np.float64)
    x_f = np.broadcast_to(np.asarray(x_f, dtype=np.float64), s.shape)
    lam = np.broadcast_to(_lam(lam, s), s.shape)
    lo = np.broadcast_to(box.lower, s.shape)
    hi = np.broadcast_to(box.upper, s.shape)
    free = x_f + half_threshold(s - x_f, lam)
    cands = np.stack([free, lo, hi, x_f])  # order fixes tie-breaking
    obj = 0.5 * (cands - s) ** 2 + lam * np.sqrt(np.abs(cands - x_f))
    obj = np.where((cands >= lo) & (cands <= hi), obj, np.inf)
    pick = np.argmin(obj, axis=0)
    return np.take_along_axis(cands, pick[None], axis=0)[0]


def project_l0ball_box(s, x_f, m: int, box: Box) -> np.ndarray:
    """Euclidean projection onto ``{theta_0(z, x_f) <= m} ∩ box``.

    Coordinates are ranked by how much keeping them (clamped) beats
    resetting them to ``x_f``; ties go to the lower index.
    """
    s = np.asarray(s, dtype=np.float64)
    x_f = np.asarray(x_f, dtype=np.float64)
    d = s.shape[-1]
    if m > d:
        raise ValueError(f"m={m} exceeds dimension {d}")
    if not box.contains(x_f):
        raise ValueError("factual point lies outside the box")
    z = np.clip(s, box.lower, box.upper)
    if m >= d:
        return z
    x_f = np.broadcast_to(x_f, s.shape)
    if m == 0:
        return x_f.copy()
    w = s - x_f
    zs = z - x_f
    gain = w * w - (w - zs) ** 2
    order = np.argsort(-np.abs(gain), axis=-1, kind="stable")[..., :m]
    out = x_f.copy()
    np.put_along_axis(out, order, np.take_along_axis(z, order, axis=-1), axis=-1)
    return out


def apply_prox(mode: SparsityMode, s, x_f, step, box: Box, beta=None) -> np.ndarray:
    """Dispatch the prox of ``step * g`` for a sparsity mode.

    ``beta`` overrides ``mode.beta`` (it may be a per-row array).
    """
    if isinstance(mode, Constraint):
        return project_l0ball_box(s, x_f, mode.m, box)
    b = mode.beta if beta is None else beta
    lam = np.asarray(b, dtype=np.float64) * step
    if mode.p == 1:
        return prox_l1_box(s, x_f, lam, box)
    if mode.p == 0:
        return prox_l0_penalty_box(s, x_f, lam, box)
    return prox_l_half_box(s, x_f, lam, box)
