"""Distances, Local Outlier Factor, validity and aggregate reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

EPS_SPARSE = 1e-8
REPORT_COLUMNS = ("method", "dataset", "validity", "theta2_mean", "theta2_std",
                  "theta0_mean", "theta0_std", "lof_mean", "lof_std", "seconds_per_100")


def theta_p(x, x2, p: float, eps: float = EPS_SPARSE) -> float:
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    diff = np.abs(x - x2)
    if p == 0:
        return float(np.count_nonzero(diff > eps))
    if p == np.inf:
        return float(diff.max(initial=0.0))
    if p <= 0:
        raise ValueError(f"unsupported order p={p}")
    return float(np.sum(diff ** p) ** (1.0 / p))


def _pairwise(A: np.ndarray, B: np.ndarray, p: float) -> np.ndarray:
    diff = np.abs(A[:, None, :] - B[None, :, :])
    if p == np.inf:
        return diff.max(axis=2)
    if p == 1:
        return diff.sum(axis=2)
    return np.sqrt(np.sum(diff * diff, axis=2))


def _ratio_mean(lrd_nb: np.ndarray, lrd_x: float) -> float:
    # inf/inf is read as 1 (coincident duplicates)
    if np.isinf(lrd_x):
        return float(np.mean(np.where(np.isinf(lrd_nb), 1.0, 0.0)))
    return float(np.mean(lrd_nb / lrd_x))


def _lrd(reach_sum: np.ndarray, k: int) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.where(reach_sum > 0, k / np.where(reach_sum > 0, reach_sum, 1.0), np.inf)


class LofIndex:
    """Brute-force LOF over a reference set, answering novelty queries.

    Neighbours of a query come from the reference set; a reference point's
    own neighbourhood excludes itself.
    """

    def __init__(self, reference, k: int = 20, p: float = 2):
        R = np.asarray(reference, dtype=np.float64)
        n = R.shape[0]
        if not 0 < k < n:
            raise ValueError(f"need 0 < k < n, got k={k}, n={n}")
        if p not in (1, 2, np.inf):
            raise ValueError("LOF distance order must be 1, 2 or inf")
        self.reference, self.k, self.p = R, k, p
        D = _pairwise(R, R, p)
        np.fill_diagonal(D, np.inf)
        nn = np.argsort(D, axis=1, kind="stable")[:, :k]
        nd = np.take_along_axis(D, nn, axis=1)
        self.k_distance = nd[:, -1]
        reach = np.maximum(nd, self.k_distance[nn])
        self.lrd = _lrd(reach.sum(axis=1), k)
        self._train_nn = nn

    def neighbors(self, x) -> tuple[np.ndarray, np.ndarray]:
        d = _pairwise(np.asarray(x, dtype=np.float64)[None, :], self.reference, self.p)[0]
        nn = np.argsort(d, kind="stable")[: self.k]
        return nn, d[nn]

    def score(self, x) -> float:
        nn, dist = self.neighbors(x)
        reach = np.maximum(dist, self.k_distance[nn])
        lrd_x = _lrd(np.array([reach.sum()]), self.k)[0]
        return _ratio_mean(self.lrd[nn], lrd_x)

    def score_many(self, X) -> np.ndarray:
        return np.array([self.score(x) for x in np.asarray(X, dtype=np.float64)])

    def training_scores(self) -> np.ndarray:
        """LOF of every reference point with itself left out."""
        return np.array([_ratio_mean(self.lrd[nn], lrd)
                         for nn, lrd in zip(self._train_nn, self.lrd)])


def lof(index: LofIndex, x) -> float:
    return index.score(x)


def validity(classifier, x_cf, target: int) -> bool:
    return int(classifier.predict(np.asarray(x_cf))) == int(target)


def validity_rate(flags) -> float:
    flags = np.asarray(list(flags), dtype=bool)
    return 100.0 * float(flags.mean()) if flags.size else 0.0


@dataclass
class MetricsReport:
    method: str
    dataset: str
    validity: float
    theta2_mean: float
    theta2_std: float
    theta0_mean: float
    theta0_std: float
    lof_mean: float
    lof_std: float
    seconds_per_100: float
    n: int = 0
    n_valid: int = 0

    def row(self) -> list:
        return [getattr(self, c) for c in REPORT_COLUMNS]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        w.writerow([v if isinstance(v, str) else f"{v:.6g}" for v in self.row()])
        return buf.getvalue()


def _mean_std(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    if v.size == 0:
        return float("nan"), float("nan")
    return float(v.mean()), float(v.std())


def aggregate_report(results, index: LofIndex | None = None, method: str = "scfe",
                     dataset: str = "", seconds: float = 0.0) -> MetricsReport:
    """Summarise a batch of results.

    Distance and LOF statistics cover valid results only; validity covers
    all. ``seconds`` is the total wall-clock time for the batch.
    """
    results = list(results)
    if not results:
        raise ValueError("cannot aggregate an empty batch")
    valid = [r for r in results if r.valid]
    lofs = []
    for r in valid:
        if r.lof is None and index is not None:
            r.lof = index.score(r.x_cf)
        lofs.append(np.nan if r.lof is None else r.lof)
    t2 = _mean_std([r.theta2 for r in valid])
    t0 = _mean_std([r.theta0 for r in valid])
    lf = _mean_std(lofs)
    return MetricsReport(method, dataset, validity_rate(r.valid for r in results),
                         t2[0], t2[1], t0[0], t0[1], lf[0], lf[1],
                         100.0 * seconds / len(results), len(results), len(valid))


def naive_lof(reference, x, k: int, p: float = 2) -> float:
    """Literal transcription of the LOF definition, no caching.

    Used as an independent check of :class:`LofIndex`.
    """
    R = [np.asarray(r, dtype=np.float64) for r in reference]

    def dist(a, b):
        diff = np.abs(a - b)
        if p == np.inf:
            return float(diff.max())
        if p == 1:
            return float(diff.sum())
        return float(np.sqrt((diff * diff).sum()))

    def knn(point, skip):
        cand = [(dist(point, R[j]), j) for j in range(len(R)) if j != skip]
        cand.sort()
        return [j for _, j in cand[:k]]

    def k_dist(j):
        return dist(R[j], R[knn(R[j], j)[-1]])

    def lrd(point, skip):
        nbrs = knn(point, skip)
        total = sum(max(dist(point, R[j]), k_dist(j)) for j in nbrs)
        return (np.inf if total == 0 else len(nbrs) / total), nbrs

    lrd_x, nbrs = lrd(np.asarray(x, dtype=np.float64), None)
    ratios = []
    for j in nbrs:
        lrd_j, _ = lrd(R[j], j)
        if np.isinf(lrd_x):
            ratios.append(1.0 if np.isinf(lrd_j) else 0.0)
        else:
            ratios.append(lrd_j / lrd_x)
    return float(np.mean(ratios))
