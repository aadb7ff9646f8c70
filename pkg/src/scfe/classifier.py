"""Dense classifiers with input gradients, hinge-style counterfactual losses,
an Adam trainer and a text model format."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

ACTIVATIONS = ("relu", "identity")
MODEL_HEADER = "scfe-model v1"


class ModelFormatError(ValueError):
    """Raised for unreadable or schema-violating model files."""


@dataclass
class Dense:
    W: np.ndarray  # (n_in, n_out)
    b: np.ndarray  # (n_out,)
    activation: str = "identity"

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=np.float64)
        self.b = np.asarray(self.b, dtype=np.float64).reshape(-1)
        if self.W.ndim != 2 or self.W.shape[1] != self.b.shape[0]:
            raise ValueError(f"weight {self.W.shape} and bias {self.b.shape} do not match")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class Classifier:
    """Feed-forward network. One output unit means a binary sigmoid head."""

    layers: list[Dense] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a classifier needs at least one layer")
        for a, b in zip(self.layers, self.layers[1:]):
            if a.W.shape[1] != b.W.shape[0]:
                raise ValueError("consecutive layer shapes do not compose")

    @property
    def n_inputs(self) -> int:
        return self.layers[0].W.shape[0]

    @property
    def n_outputs(self) -> int:
        return self.layers[-1].W.shape[1]

    @property
    def binary(self) -> bool:
        return self.n_outputs == 1

    @property
    def n_classes(self) -> int:
        return 2 if self.binary else self.n_outputs

    def _check(self, X) -> tuple[np.ndarray, bool]:
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        X2 = X[None, :] if single else X
        if X2.ndim != 2 or X2.shape[1] != self.n_inputs:
            raise ValueError(f"input shape {X.shape} does not match width {self.n_inputs}")
        return X2, single

    def _forward(self, X: np.ndarray) -> list[np.ndarray]:
        acts = [X]
        h = X
        for layer in self.layers:
            h = h @ layer.W + layer.b
            if layer.activation == "relu":
                h = np.maximum(h, 0.0)
            acts.append(h)
        return acts

    def logits(self, X) -> np.ndarray:
        """Raw head outputs (pre-sigmoid for binary models)."""
        X2, single = self._check(X)
        out = self._forward(X2)[-1]
        return out[0] if single else out

    def predict_proba(self, X) -> np.ndarray:
        z = self.logits(X)
        if self.binary:
            return 1.0 / (1.0 + np.exp(-z))
        z = z - z.max(axis=-1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=-1, keepdims=True)

    def predict(self, X) -> np.ndarray | int:
        X2, single = self._check(X)
        z = self._forward(X2)[-1]
        if self.binary:
            # sigmoid(z) > 0.5; an exact tie goes to the lower class
            pred = (z[:, 0] > 0.0).astype(np.int64)
        else:
            pred = np.argmax(z, axis=1)
        return int(pred[0]) if single else pred

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray, want_params: bool = False):
        """Backpropagate ``grad_out`` (d loss / d head output).

        Returns the input gradient, and per-layer ``(dW, db)`` when requested.
        ReLU uses the zero subgradient at the kink.
        """
        g = grad_out
        param_grads = []
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            if layer.activation == "relu":
                g = g * (acts[i + 1] > 0.0)
            if want_params:
                param_grads.append((acts[i].T @ g, g.sum(axis=0)))
            g = g @ layer.W.T
        if want_params:
            return g, param_grads[::-1]
        return g

    def copy(self) -> "Classifier":
        return Classifier([Dense(l.W.copy(), l.b.copy(), l.activation) for l in self.layers])


def _glorot(rng: np.random.Generator, n_in: int, n_out: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def make_mlp(n_inputs: int, n_classes: int, rng: np.random.Generator,
             hidden: int = 20, n_hidden: int = 2) -> Classifier:
    """ReLU network with ``n_hidden`` hidden layers; binary tasks get one output."""
    widths = [n_inputs] + [hidden] * n_hidden + [1 if n_classes == 2 else n_classes]
    layers = []
    for i, (a, b) in enumerate(zip(widths, widths[1:])):
        act = "identity" if i == len(widths) - 2 else "relu"
        layers.append(Dense(_glorot(rng, a, b), np.zeros(b), act))
    return Classifier(layers)


def make_linear(n_inputs: int, n_classes: int, rng: np.random.Generator) -> Classifier:
    return make_mlp(n_inputs, n_classes, rng, n_hidden=0)


# --- counterfactual losses -------------------------------------------------

@dataclass(frozen=True)
class LossConfig:
    target: int
    cutoff: float = 0.0

    def validate(self, model: Classifier) -> None:
        if not 0 <= self.target < model.n_classes:
            raise ValueError(f"target class {self.target} outside 0..{model.n_classes - 1}")


def _margin(model: Classifier, z: np.ndarray, target: int):
    """Hinge argument per row and its gradient w.r.t. the head output."""
    gz = np.zeros_like(z)
    if model.binary:
        sign = 1.0 - 2.0 * target
        a = sign * z[:, 0]
        gz[:, 0] = sign
        return a, gz
    rows = np.arange(z.shape[0])
    others = z.copy()
    others[:, target] = -np.inf
    j = np.argmax(others, axis=1)  # first index wins ties
    a = z[rows, j] - z[:, target]
    gz[rows, j] = 1.0
    gz[:, target] = -1.0
    return a, gz


def cfe_loss_grad(model: Classifier, X, cfg: LossConfig):
    """Loss ``max{margin, -c}`` and its input gradient for a batch of points.

    For binary models the margin is taken on the pre-sigmoid output, so the
    loss reaches its floor exactly when the target class is predicted with
    margin ``c``. At the kink the margin branch is active.
    """
    cfg.validate(model)
    X2, single = model._check(X)
    acts = model._forward(X2)
    a, gz = _margin(model, acts[-1], cfg.target)
    active = a >= -cfg.cutoff
    loss = np.where(active, a, -cfg.cutoff)
    grad = model.backward(acts, gz * active[:, None])
    if single:
        return float(loss[0]), grad[0]
    return loss, grad


def cfe_loss(model: Classifier, x, cfg: LossConfig):
    return cfe_loss_grad(model, x, cfg)[0]


def input_gradient(model: Classifier, x, cfg: LossConfig) -> np.ndarray:
    return cfe_loss_grad(model, x, cfg)[1]


# --- training --------------------------------------------------------------

@dataclass
class TrainReport:
    epoch_loss: list[float]
    train_accuracy: float
    test_accuracy: float | None = None


def _cross_entropy(model: Classifier, X: np.ndarray, y: np.ndarray):
    acts = model._forward(X)
    z = acts[-1]
    n = X.shape[0]
    if model.binary:
        t = y.astype(np.float64)
        zz = z[:, 0]
        loss = np.mean(np.logaddexp(0.0, zz) - t * zz)
        gz = ((1.0 / (1.0 + np.exp(-zz)) - t) / n)[:, None]
    else:
        zs = z - z.max(axis=1, keepdims=True)
        logp = zs - np.log(np.exp(zs).sum(axis=1, keepdims=True))
        loss = -np.mean(logp[np.arange(n), y])
        gz = np.exp(logp)
        gz[np.arange(n), y] -= 1.0
        gz /= n
    _, pgrads = model.backward(acts, gz, want_params=True)
    return float(loss), pgrads


def accuracy(model: Classifier, X, y) -> float:
    return float(np.mean(model.predict(X) == np.asarray(y)))


def train_adam(model: Classifier, X, y, epochs: int, batch: int, lr: float,
               rng: np.random.Generator, X_test=None, y_test=None,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> TrainReport:
    """Minimise mean cross-entropy with Adam, updating ``model`` in place."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.shape[0] == 0:
        raise ValueError("cannot train on an empty dataset")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ValueError("labels outside the model's class range")
    params = [(l.W, l.b) for l in model.layers]
    m = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    v = [(np.zeros_like(W), np.zeros_like(b)) for W, b in params]
    step = 0
    history = []
    n = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch):
            idx = order[start:start + batch]
            loss, grads = _cross_entropy(model, X[idx], y[idx])
            total += loss * len(idx)
            step += 1
            for (W, b), (gW, gb), mi, vi in zip(params, grads, m, v):
                for p, g, mp, vp in ((W, gW, mi[0], vi[0]), (b, gb, mi[1], vi[1])):
                    mp *= beta1
                    mp += (1 - beta1) * g
                    vp *= beta2
                    vp += (1 - beta2) * g * g
                    mhat = mp / (1 - beta1 ** step)
                    vhat = vp / (1 - beta2 ** step)
                    p -= lr * mhat / (np.sqrt(vhat) + eps)
        history.append(total / n)
    test_acc = None
    if X_test is not None and len(X_test):
        test_acc = accuracy(model, X_test, y_test)
    return TrainReport(history, accuracy(model, X, y), test_acc)


# --- persistence -----------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def save_model(model: Classifier, path) -> None:
    lines = [MODEL_HEADER]
    for layer in model.layers:
        rows, cols = layer.W.shape
        lines.append(f"layer {rows} {cols} {layer.activation}")
        lines.extend(" ".join(_fmt(v) for v in row) for row in layer.W)
        lines.append(" ".join(_fmt(v) for v in layer.b))
    Path(path).write_text("\n".join(lines) + "\n")


def _floats(line: str, n: int, lineno: int) -> np.ndarray:
    parts = line.split()
    if len(parts) != n:
        raise ModelFormatError(f"line {lineno}: expected {n} values, got {len(parts)}")
    try:
        return np.array([float(p) for p in parts])
    except ValueError as exc:
        raise ModelFormatError(f"line {lineno}: {exc}") from None


def load_model(path) -> Classifier:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise ModelFormatError("empty model file")
    if lines[0].strip() != MODEL_HEADER:
        raise ModelFormatError(f"bad header {lines[0]!r}; expected {MODEL_HEADER!r}")
    layers = []
    i = 1
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if len(head) != 4 or head[0] != "layer":
            raise ModelFormatError(f"line {i + 1}: expected 'layer <rows> <cols> <activation>'")
        try:
            rows, cols = int(head[1]), int(head[2])
        except ValueError:
            raise ModelFormatError(f"line {i + 1}: bad layer dimensions") from None
        if head[3] not in ACTIVATIONS:
            raise ModelFormatError(f"line {i + 1}: unknown activation {head[3]!r}")
        if i + rows + 1 >= len(lines):
            raise ModelFormatError(f"truncated layer block starting at line {i + 1}")
        W = np.array([_floats(lines[i + 1 + r], cols, i + 2 + r) for r in range(rows)])
        b = _floats(lines[i + 1 + rows], cols, i + 2 + rows)
        layers.append(Dense(W.reshape(rows, cols), b, head[3]))
        i += rows + 2
    if not layers:
        raise ModelFormatError("model file contains no layers")
    try:
        return Classifier(layers)
    except ValueError as exc:
        raise ModelFormatError(str(exc)) from None
