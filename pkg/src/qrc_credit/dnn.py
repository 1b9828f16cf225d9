"""Fully-connected benchmark network trained on the preprocessed features.

Architecture: input -> 64 -> 128 -> 256 -> 128 -> 64 -> 2, ReLU on hidden
layers, inverted dropout after each hidden activation, softmax
cross-entropy, Adam updates and early stopping on validation F1.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .classify import Candidate, Metrics, compute_metrics
from .errors import ConfigurationError, FormatError, NumericalError, ShapeError

HIDDEN = (64, 128, 256, 128, 64)
LR_GRID = (0.1, 0.01, 0.001)
BATCH_GRID = (64, 128, 256)
_MAGIC = b"QRCMLP\0\0"
_VERSION = 1


@dataclass
class MlpModel:
    weights: list[np.ndarray]  # (fan_in, fan_out) per layer
    biases: list[np.ndarray]
    dropout: float = 0.2

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpModel":
        return MlpModel([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.dropout)

    def parameters(self) -> list[np.ndarray]:
        return [p for pair in zip(self.weights, self.biases) for p in pair]


def init_mlp(n_inputs: int, seed: int = 0, hidden=HIDDEN, dropout: float = 0.2) -> MlpModel:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    rng = np.random.default_rng(seed)
    widths = [n_inputs, *hidden, 2]
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    return MlpModel(weights, biases, dropout)


def _forward(model: MlpModel, X: np.ndarray, training: bool, rng: np.random.Generator | None):
    if X.ndim != 2 or X.shape[1] != model.widths[0]:
        raise ShapeError(f"network expects {model.widths[0]} inputs, got shape {X.shape}")
    acts, masks = [X], []
    h = X
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        if k == last:
            return z, acts, masks
        h = np.maximum(z, 0.0)
        if training and model.dropout > 0:
            keep = 1.0 - model.dropout
            mask = (rng.random(h.shape) < keep) / keep
            h = h * mask
        else:
            mask = None
        masks.append(mask)
        acts.append(h)


def forward(model: MlpModel, X, training: bool = False, seed: int | None = None) -> np.ndarray:
    """Logits (B, 2); dropout masks are drawn only in training mode."""
    rng = np.random.default_rng(seed) if training else None
    return _forward(model, np.asarray(X, dtype=float), training, rng)[0]


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-logp[np.arange(len(y)), y].mean())


def loss_and_gradients(model: MlpModel, X, y, training: bool = False,
                       rng: np.random.Generator | None = None) -> tuple[float, list[np.ndarray]]:
    """Mean cross-entropy and gradients ordered like ``model.parameters()``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    logits, acts, masks = _forward(model, X, training, rng)
    loss = cross_entropy(logits, y)
    delta = softmax(logits)
    delta[np.arange(len(y)), y] -= 1.0
    delta /= len(y)
    grads: list[np.ndarray] = []
    for k in range(len(model.weights) - 1, -1, -1):
        grads.append(delta.sum(0))
        grads.append(acts[k].T @ delta)
        if k > 0:
            delta = delta @ model.weights[k].T
            if masks[k - 1] is not None:
                delta = delta * masks[k - 1]
            delta = delta * (acts[k] > 0)
    grads.reverse()
    return loss, grads


@dataclass
class Adam:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def predict(model: MlpModel, X) -> np.ndarray:
    logits = forward(model, X, training=False)
    return (logits[:, 1] > logits[:, 0]).astype(np.int64)


@dataclass
class DnnResult:
    model: MlpModel
    validation: Metrics
    best_epoch: int
    epochs_run: int
    train_loss: list[float]
    val_f1: list[float]
    train_time_s: float
    hyperparameters: dict


def train_dnn(train_xy, validation_xy, lr: float, batch_size: int, seed: int = 0,
              max_epochs: int = 1000, patience: int = 30, dropout: float = 0.2) -> DnnResult:
    """Adam on mini-batches; keep the snapshot with the best validation F1.

    Training stops once ``patience`` epochs pass without a strictly better
    validation F1.
    """
    if lr <= 0 or batch_size < 1:
        raise ConfigurationError("learning rate must be positive and batch size at least 1")
    X = np.asarray(train_xy[0], dtype=float)
    y = np.asarray(train_xy[1]).astype(np.int64)
    Xv, yv = np.asarray(validation_xy[0], dtype=float), np.asarray(validation_xy[1])
    model = init_mlp(X.shape[1], seed, dropout=dropout)
    opt = Adam(lr)
    rng = np.random.default_rng([seed, 1])
    best, best_f1, best_epoch = model.copy(), -1.0, 0
    losses, f1s = [], []
    t0 = time.perf_counter()
    epoch = 0
    for epoch in range(1, max_epochs + 1):
        order = rng.permutation(len(X))
        total = 0.0
        for s in range(0, len(X), batch_size):
            idx = order[s:s + batch_size]
            loss, grads = loss_and_gradients(model, X[idx], y[idx], training=True, rng=rng)
            if not np.isfinite(loss):
                raise NumericalError(f"training loss became non-finite at epoch {epoch}")
            opt.step(model.parameters(), grads)
            total += loss * len(idx)
        losses.append(total / len(X))
        f1 = compute_metrics(predict(model, Xv), yv).f1
        f1s.append(f1)
        if f1 > best_f1:
            best, best_f1, best_epoch = model.copy(), f1, epoch
        elif epoch - best_epoch >= patience:
            break
    elapsed = time.perf_counter() - t0
    return DnnResult(best, compute_metrics(predict(best, Xv), yv), best_epoch, epoch, losses, f1s,
                     elapsed, {"lr": lr, "batch_size": batch_size})


@dataclass
class DnnSearchResult:
    candidates: list[Candidate]
    selected: int
    result: DnnResult
    test: Metrics | None
    train_time_s: float


def dnn_grid_search(train_xy, validation_xy, test_xy=None, lrs=LR_GRID, batches=BATCH_GRID,
                    seed: int = 0, **kwargs) -> DnnSearchResult:
    """Every (lr, batch) pair in declared order; validation F1 picks the winner, first on ties."""
    results = [train_dnn(train_xy, validation_xy, lr, b, seed, **kwargs) for lr in lrs for b in batches]
    if not results:
        raise ConfigurationError("empty DNN grid")
    cands = [Candidate(r.hyperparameters, r.validation, r.train_time_s) for r in results]
    best = int(np.argmax([c.validation.f1 for c in cands]))
    chosen = results[best]
    test = compute_metrics(predict(chosen.model, test_xy[0]), test_xy[1]) if test_xy is not None else None
    return DnnSearchResult(cands, best, chosen, test, sum(c.train_time_s for c in cands))


# ---------------------------------------------------------------- persistence


def save_model(model: MlpModel, path: str | Path) -> None:
    """Header, layer shapes, then row-major float64 weights and biases (little-endian)."""
    parts = [_MAGIC, struct.pack("<IId", _VERSION, len(model.weights), model.dropout)]
    parts += [struct.pack("<II", *w.shape) for w in model.weights]
    for w, b in zip(model.weights, model.biases):
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path: str | Path) -> MlpModel:
    blob = Path(path).read_bytes()
    if blob[:8] != _MAGIC:
        raise FormatError(f"{path}: not a network snapshot")
    version, layers, dropout = struct.unpack_from("<IId", blob, 8)
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported snapshot version {version}")
    offset = 8 + 16
    shapes = []
    for _ in range(layers):
        shapes.append(struct.unpack_from("<II", blob, offset))
        offset += 8
    weights, biases = [], []
    for rows, cols in shapes:
        weights.append(np.frombuffer(blob, "<f8", rows * cols, offset).reshape(rows, cols).copy())
        offset += 8 * rows * cols
        biases.append(np.frombuffer(blob, "<f8", cols, offset).copy())
        offset += 8 * cols
    if offset != len(blob):
        raise FormatError(f"{path}: trailing or missing bytes")
    return MlpModel(weights, biases, dropout)
