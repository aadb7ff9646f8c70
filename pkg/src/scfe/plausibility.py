"""Differentiable data-manifold terms for one target class.

Every term exposes ``value_grad(X)`` accepting a point ``(d,)`` or a batch
``(B, d)`` and returning the estimate and its gradient with matching shape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import make_rng

KINDS = ("none", "kde", "gmm", "knn")


def _batch(X) -> tuple[np.ndarray, bool]:
    X = np.asarray(X, dtype=np.float64)
    return (X[None, :], True) if X.ndim == 1 else (X, False)


def _unbatch(values, grads, single):
    return (float(values[0]), grads[0]) if single else (values, grads)


def correctly_classified(points, labels, predictions, target: int) -> np.ndarray:
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    mask = labels == target
    if predictions is not None:
        mask &= np.asarray(predictions) == labels
    return points[mask]


def scott_bandwidth(points) -> float:
    """``n^(-1/(d+4))`` times the mean per-feature sample standard deviation."""
    P = np.asarray(points, dtype=np.float64)
    n, d = P.shape
    std = float(np.mean(P.std(axis=0, ddof=1))) if n > 1 else 1.0
    if std <= 0:
        std = 1.0
    return n ** (-1.0 / (d + 4)) * std


# --- kernel density --------------------------------------------------------

@dataclass(frozen=True)
class KdeModel:
    points: np.ndarray
    weights: np.ndarray
    bandwidth: float

    def value_grad(self, X):
        X2, single = _batch(X)
        diff = self.points[None, :, :] - X2[:, None, :]  # (B, m, d)
        sq = np.einsum("bmd,bmd->bm", diff, diff)
        k = self.weights * np.exp(-sq / (2.0 * self.bandwidth ** 2))
        values = k.sum(axis=1)
        grads = np.einsum("bm,bmd->bd", k, diff) / self.bandwidth ** 2
        return _unbatch(values, grads, single)

    def value(self, X):
        return self.value_grad(X)[0]


def kde_fit(points, labels=None, predictions=None, target: int | None = None,
            bandwidth: float | None = None) -> KdeModel:
    """Gaussian KDE over the correctly classified samples of ``target``.

    With ``target`` unset all ``points`` are used. ``bandwidth`` defaults to
    Scott's rule.
    """
    P = np.asarray(points, dtype=np.float64)
    if target is not None:
        P = correctly_classified(P, labels, predictions, target)
    if P.shape[0] < 2:
        raise ValueError(f"KDE needs at least 2 reference points, got {P.shape[0]}")
    sigma = scott_bandwidth(P) if bandwidth is None else float(bandwidth)
    if sigma <= 0:
        raise ValueError("bandwidth must be positive")
    m = P.shape[0]
    return KdeModel(P, np.full(m, 1.0 / m), sigma)


# --- Gaussian mixture ------------------------------------------------------

@dataclass(frozen=True)
class GmmModel:
    priors: np.ndarray  # (m,)
    means: np.ndarray  # (m, d)
    covariances: np.ndarray  # (m, d, d)
    log_likelihood: tuple[float, ...] = ()

    def __post_init__(self):
        chol = np.linalg.cholesky(self.covariances)
        inv_chol = np.linalg.inv(chol)
        object.__setattr__(self, "_precisions", np.einsum("mji,mjk->mik", inv_chol, inv_chol))
        d = self.means.shape[1]
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        object.__setattr__(self, "_log_norm", -0.5 * (d * np.log(2 * np.pi) + logdet))

    @property
    def n_components(self) -> int:
        return len(self.priors)

    def component_log_density(self, X) -> np.ndarray:
        X2, _ = _batch(X)
        diff = X2[:, None, :] - self.means[None, :, :]  # (B, m, d)
        maha = np.einsum("bmi,mij,bmj->bm", diff, self._precisions, diff)
        return self._log_norm - 0.5 * maha

    def value_grad(self, X):
        X2, single = _batch(X)
        dens = self.priors * np.exp(self.component_log_density(X2))  # (B, m)
        diff = self.means[None, :, :] - X2[:, None, :]
        pulled = np.einsum("mij,bmj->bmi", self._precisions, diff)
        grads = np.einsum("bm,bmi->bi", dens, pulled)
        return _unbatch(dens.sum(axis=1), grads, single)

    def value(self, X):
        return self.value_grad(X)[0]

    def score(self, X) -> float:
        """Total log-likelihood of the rows of ``X``."""
        lp = np.log(self.priors) + self.component_log_density(X)
        return float(_logsumexp(lp, axis=1).sum())


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    mx = np.max(a, axis=axis, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    return np.squeeze(mx, axis=axis) + np.log(np.sum(np.exp(a - mx), axis=axis))


def _kmeans_pp(X: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, m):
        total = d2.sum()
        if total <= 0:
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(X, resp, ridge):
    n, d = X.shape
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    priors = nk / n
    means = (resp.T @ X) / nk[:, None]
    covs = np.empty((len(nk), d, d))
    for k in range(len(nk)):
        diff = X - means[k]
        covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k]
        covs[k] = 0.5 * (covs[k] + covs[k].T) + ridge * np.eye(d)
    return priors / priors.sum(), means, covs


def gmm_fit_em(points, n_components: int, rng: np.random.Generator,
               max_iter: int = 100, tol: float = 1e-6, ridge: float = 1e-6) -> GmmModel:
    """Fit a full-covariance mixture by EM from a k-means++ start.

    The ridge is added to every covariance after each M-step. Iteration
    stops when the mean log-likelihood gains less than ``tol``.
    """
    X = np.asarray(points, dtype=np.float64)
    n = X.shape[0]
    if n < n_components:
        raise ValueError(f"{n} points cannot support {n_components} components")
    centers = _kmeans_pp(X, n_components, rng)
    nearest = np.argmin(((X[:, None, :] - centers[None]) ** 2).sum(axis=2), axis=1)
    resp = np.zeros((n, n_components))
    resp[np.arange(n), nearest] = 1.0
    model = GmmModel(*_m_step(X, resp, ridge))
    trace = [model.score(X)]
    for _ in range(max_iter):
        lp = np.log(model.priors) + model.component_log_density(X)
        resp = np.exp(lp - _logsumexp(lp, axis=1)[:, None])
        model = GmmModel(*_m_step(X, resp, ridge))
        trace.append(model.score(X))
        if abs(trace[-1] - trace[-2]) < tol * n:
            break
    return GmmModel(model.priors, model.means, model.covariances, tuple(trace))


# --- density gravity -------------------------------------------------------

def _knn(points: np.ndarray, query: np.ndarray, k: int, exclude: int | None = None):
    dist = np.sqrt(np.sum((points - query) ** 2, axis=1))
    if exclude is not None:
        dist = dist.copy()
        dist[exclude] = np.inf
    order = np.argsort(dist, kind="stable")[:k]
    return order, dist[order]


@dataclass(frozen=True)
class GravityModel:
    points: np.ndarray  # target-class points
    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be positive")
        if self.k > self.points.shape[0]:
            raise ValueError(f"k={self.k} exceeds the class population {self.points.shape[0]}")

    def local_density(self, i: int) -> float:
        """k-local density of stored point ``i`` among the other stored points."""
        k = min(self.k, self.points.shape[0] - 1)
        if k == 0:
            return np.inf
        _, d = _knn(self.points, self.points[i], k, exclude=i)
        total = d.sum()
        return np.inf if total == 0 else k / total

    def gravity_weights(self, x_f):
        idx, _ = _knn(self.points, np.asarray(x_f, dtype=np.float64), self.k)
        rho = np.array([self.local_density(i) for i in idx])
        if np.isinf(rho).any():
            rho = np.isinf(rho).astype(np.float64)
        return idx, rho / rho.sum()

    def gravity_point(self, x_f) -> np.ndarray:
        idx, w = self.gravity_weights(x_f)
        return w @ self.points[idx]

    def term(self, x_f) -> "GravityTerm":
        return GravityTerm(self.gravity_point(x_f))


def gravity_fit(points, labels=None, predictions=None, target: int | None = None,
                k: int = 3) -> GravityModel:
    P = np.asarray(points, dtype=np.float64)
    if target is not None:
        P = correctly_classified(P, labels, predictions, target)
    return GravityModel(P, int(k))


@dataclass(frozen=True)
class GravityTerm:
    """Negative distance to a fixed gravity point; its gradient is 0 at the point."""

    center: np.ndarray

    def value_grad(self, X):
        X2, single = _batch(X)
        C = np.asarray(self.center, dtype=np.float64)
        C = C[None, :] if C.ndim == 1 else C
        diff = X2 - C
        dist = np.sqrt(np.sum(diff * diff, axis=1))
        safe = np.where(dist > 0, dist, 1.0)
        grads = np.where(dist[:, None] > 0, -diff / safe[:, None], 0.0)
        return _unbatch(-dist, grads, single)

    def value(self, X):
        return self.value_grad(X)[0]


def gravity_value_grad(x, center):
    return GravityTerm(np.asarray(center, dtype=np.float64)).value_grad(x)


# --- per-class bundles -----------------------------------------------------

@dataclass
class PlausibilityModels:
    """Per-class fitted models of one kind, built once per (dataset, classifier)."""

    kind: str
    models: dict

    def term(self, target: int, x_f=None, k: int | None = None):
        """The value/gradient term for ``target``; ``None`` for kind ``none``."""
        if self.kind == "none":
            return None
        model = self.models[target]
        if self.kind == "knn":
            if k is not None and k != model.k:
                model = GravityModel(model.points, k)
            return model.term(x_f)
        return model


def fit_plausibility(kind: str, X, y, predictions, classes, rng: np.random.Generator | None = None,
                     bandwidth: float | None = None, n_components: int = 5, max_iter: int = 100,
                     tol: float = 1e-6, ridge: float = 1e-6, k: int = 3) -> PlausibilityModels:
    if kind not in KINDS:
        raise ValueError(f"unknown plausibility kind {kind!r}; choose from {KINDS}")
    rng = make_rng(0) if rng is None else rng
    models = {}
    if kind != "none":
        for c in classes:
            c = int(c)
            if kind == "kde":
                models[c] = kde_fit(X, y, predictions, c, bandwidth)
            elif kind == "gmm":
                pts = correctly_classified(X, y, predictions, c)
                models[c] = gmm_fit_em(pts, min(n_components, len(pts)), rng, max_iter, tol, ridge)
            else:
                models[c] = gravity_fit(X, y, predictions, c, k)
    return PlausibilityModels(kind, models)
