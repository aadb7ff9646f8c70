"""Scaling, PCA, seeded randomness and splitting shared by every other module."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def make_rng(seed: int, *keys: int) -> np.random.Generator:
    """Return a Philox (counter-based) generator for ``seed``.

    Extra integer ``keys`` derive independent child streams, e.g. one per
    test instance, so results do not depend on evaluation order.
    """
    ss = np.random.SeedSequence([int(seed), *(int(k) for k in keys)])
    return np.random.Generator(np.random.Philox(ss))


def as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class MinMaxScaler:
    min_: np.ndarray
    max_: np.ndarray

    @classmethod
    def fit(cls, data) -> "MinMaxScaler":
        X = as_matrix(data)
        if X.size == 0:
            raise ValueError("cannot fit a scaler on an empty matrix")
        return cls(X.min(axis=0), X.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        return self.max_ - self.min_

    def transform(self, data) -> np.ndarray:
        X = np.asarray(data, dtype=np.float64)
        span = self.span
        safe = np.where(span > 0, span, 1.0)
        out = np.where(span > 0, (X - self.min_) / safe, 0.0)
        return np.clip(out, 0.0, 1.0)

    def inverse_transform(self, data) -> np.ndarray:
        return self.min_ + np.asarray(data, dtype=np.float64) * self.span


def minmax_fit_transform(data) -> tuple[MinMaxScaler, np.ndarray]:
    scaler = MinMaxScaler.fit(data)
    return scaler, scaler.transform(as_matrix(data))


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (d, r), orthonormal columns
    explained_variance: np.ndarray

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.explained_variance.sum()
        if total <= 0:
            return np.zeros_like(self.explained_variance)
        return self.explained_variance / total

    def transform(self, data) -> np.ndarray:
        return (np.asarray(data, dtype=np.float64) - self.mean) @ self.components

    def inverse_transform(self, scores) -> np.ndarray:
        return np.asarray(scores, dtype=np.float64) @ self.components.T + self.mean


def pca_fit(data, r: int) -> PcaModel:
    """Fit the ``r`` leading principal axes of ``data``.

    Each component is sign-normalised so its largest-magnitude entry is
    positive, which makes fits reproducible across LAPACK builds.
    """
    X = as_matrix(data)
    n, d = X.shape
    if r > d:
        raise ValueError(f"cannot extract {r} components from {d} features")
    if n < r + 1:
        raise ValueError(f"need at least {r + 1} samples for {r} components")
    mean = X.mean(axis=0)
    cov = np.cov(X - mean, rowvar=False, ddof=1).reshape(d, d)
    cov = 0.5 * (cov + cov.T)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")[:r]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order]
    for j in range(r):
        i = np.argmax(np.abs(evecs[:, j]))
        if evecs[i, j] < 0:
            evecs[:, j] = -evecs[:, j]
    return PcaModel(mean, evecs, evals)


def pca_transform(model: PcaModel, data) -> np.ndarray:
    return model.transform(data)


def seeded_shuffle_split(data, labels, n_test: int, rng: np.random.Generator):
    """Shuffle rows and split off ``n_test`` of them.

    Returns ``((X_train, y_train), (X_test, y_test))``.
    """
    X = np.asarray(data)
    y = np.asarray(labels)
    n = X.shape[0]
    if len(y) != n:
        raise ValueError("data and labels differ in length")
    if not 0 <= n_test < n:
        raise ValueError(f"n_test={n_test} must be smaller than n={n}")
    perm = rng.permutation(n)
    test, train = perm[:n_test], perm[n_test:]
    return (X[train], y[train]), (X[test], y[test])
