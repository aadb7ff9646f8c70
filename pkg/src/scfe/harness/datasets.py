"""Dataset tables: CSV loading, the synthetic two-blob set, splitting and PCA."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np

from ..classifier import Classifier, make_linear, train_adam
from ..numerics import MinMaxScaler, PcaModel, make_rng, pca_fit, seeded_shuffle_split
from ..proximal import Box


class DatasetError(ValueError):
    """Base class for dataset parsing problems."""


class MissingColumnError(DatasetError):
    pass


class RaggedRowError(DatasetError):
    def __init__(self, row: int, expected: int, got: int):
        super().__init__(f"row {row}: expected {expected} cells, got {got}")
        self.row = row


class NonNumericError(DatasetError):
    def __init__(self, row: int, column: str, value: str):
        super().__init__(f"row {row}: non-numeric value {value!r} in column {column!r}")
        self.row = row


class UnknownLabelError(DatasetError):
    def __init__(self, row: int, value: str):
        super().__init__(f"row {row}: unknown label value {value!r}")
        self.row = row


@dataclass
class DatasetTable:
    name: str
    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    scaler: MinMaxScaler
    box: Box
    pca: PcaModel | None = None
    post_scaler: MinMaxScaler | None = None
    separator: Classifier | None = None
    raw: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.X.shape[0] != len(self.y):
            raise ValueError("feature rows and labels differ in length")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def classes(self) -> np.ndarray:
        return np.unique(self.y)

    def transform(self, raw) -> np.ndarray:
        """Map raw feature rows into this table's (scaled, projected) space."""
        Z = self.scaler.transform(np.asarray(raw, dtype=np.float64))
        if self.pca is not None:
            Z = self.pca.transform(Z)
        if self.post_scaler is not None:
            Z = self.post_scaler.transform(Z)
        return Z

    def subset(self, idx) -> "DatasetTable":
        raw = None if self.raw is None else self.raw[idx]
        return replace(self, X=self.X[idx], y=self.y[idx], raw=raw)


def _table(name, raw, y, names) -> DatasetTable:
    scaler = MinMaxScaler.fit(raw)
    X = scaler.transform(raw)
    return DatasetTable(name, X, np.asarray(y, dtype=np.int64), list(names), scaler,
                        Box.unit(X.shape[1]), raw=np.asarray(raw, dtype=np.float64))


def load_csv_dataset(path, label_column: str, label_values=None, binarize: str | None = None,
                     name: str | None = None) -> DatasetTable:
    """Read a headed numeric CSV; features are min-max scaled into [0, 1].

    Labels must be non-negative integers unless ``label_values`` lists the
    admissible raw values (mapped to their list positions). With
    ``binarize="median"`` the label column is numeric and thresholded at its
    median (strictly above means class 1).
    """
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise DatasetError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    if label_column not in header:
        raise MissingColumnError(f"{path}: no label column {label_column!r} in header {header}")
    li = header.index(label_column)
    names = [h for j, h in enumerate(header) if j != li]
    feats, labels = [], []
    for r, row in enumerate(rows[1:], start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise RaggedRowError(r, len(header), len(row))
        vals = []
        for j, cell in enumerate(row):
            if j == li:
                continue
            try:
                vals.append(float(cell))
            except ValueError:
                raise NonNumericError(r, header[j], cell) from None
        feats.append(vals)
        labels.append((r, row[li].strip()))
    if not feats:
        raise DatasetError(f"{path}: no data rows")
    if binarize == "median":
        try:
            target = np.array([float(v) for _, v in labels])
        except ValueError:
            bad = next((r, v) for r, v in labels if not _is_float(v))
            raise NonNumericError(bad[0], label_column, bad[1]) from None
        y = (target > np.median(target)).astype(np.int64)
    elif binarize is not None:
        raise ValueError(f"unknown binarization {binarize!r}")
    elif label_values is not None:
        lookup = {str(v): i for i, v in enumerate(label_values)}
        y = []
        for r, v in labels:
            if v not in lookup:
                raise UnknownLabelError(r, v)
            y.append(lookup[v])
    else:
        y = []
        for r, v in labels:
            try:
                iv = int(v)
            except ValueError:
                raise UnknownLabelError(r, v) from None
            if iv < 0:
                raise UnknownLabelError(r, v)
            y.append(iv)
    return _table(name or path.stem, np.array(feats), y, names)


def _is_float(v: str) -> bool:
    try:
        float(v)
        return True
    except ValueError:
        return False


def load_wine() -> DatasetTable:
    """The 178-row, 13-feature, 3-class wine recognition table shipped with the package."""
    ref = resources.files("scfe") / "data" / "wine.csv"
    with resources.as_file(ref) as p:
        return load_csv_dataset(p, "class", name="wine")


def generate_synth2d(n_per_class: int, centers=((-3.0, 0.0), (3.0, 0.0)), cov=((1.0, 0.0), (0.0, 1.0)),
                     rng: np.random.Generator | None = None, train_separator: bool = True,
                     epochs: int = 50, lr: float = 1e-2) -> DatasetTable:
    """Two Gaussian blobs (class ``i`` around ``centers[i]``), scaled to [0, 1].

    With ``train_separator`` a logistic model is fitted with Adam and stored
    on the table as ``separator``.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be positive")
    centers = np.asarray(centers, dtype=np.float64)
    if centers.shape != (2, 2):
        raise ValueError("synth2d takes exactly two 2-D centers")
    rng = make_rng(0) if rng is None else rng
    L = np.linalg.cholesky(np.asarray(cov, dtype=np.float64))
    parts = [c + rng.standard_normal((n_per_class, 2)) @ L.T for c in centers]
    raw = np.vstack(parts)
    y = np.repeat([0, 1], n_per_class)
    perm = rng.permutation(len(y))
    table = _table("synth2d", raw[perm], y[perm], ["x", "y"])
    if train_separator:
        model = make_linear(2, 2, rng)
        train_adam(model, table.X, table.y, epochs, 32, lr, rng)
        table.separator = model
    return table


def split_dataset(table: DatasetTable, n_test: int, rng: np.random.Generator,
                  pca_dim: int | None = None) -> tuple[DatasetTable, DatasetTable]:
    """Shuffle-split ``table``; optionally project onto ``pca_dim`` principal axes.

    PCA is fitted on the training rows and its scores are min-max rescaled
    (again on training rows), so both parts live in the unit box.
    """
    idx = np.arange(table.n)
    (tr, _), (te, _) = seeded_shuffle_split(idx, table.y, n_test, rng)
    train, test = table.subset(tr), table.subset(te)
    if pca_dim:
        pca = pca_fit(train.X, pca_dim)
        post = MinMaxScaler.fit(pca.transform(train.X))
        names = [f"pc{i}" for i in range(pca_dim)]
        box = Box.unit(pca_dim)
        train = replace(train, X=post.transform(pca.transform(train.X)), pca=pca,
                        post_scaler=post, feature_names=names, box=box)
        test = replace(test, X=post.transform(pca.transform(test.X)), pca=pca,
                       post_scaler=post, feature_names=names, box=box)
    return train, test
