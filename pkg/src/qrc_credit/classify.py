"""Readout classifiers, metrics and validation-F1 grid search.

Six linear or instance-based models sit on top of the reservoir features:
k-nearest neighbours, Gaussian naive Bayes, L2 logistic regression, the
perceptron, hinge-loss SGD and a dual coordinate-descent linear SVM. Label 1
(default) is the positive class throughout.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import _kernels
from .errors import CapacityError, DomainError, FormatError, NumericalError, ShapeError

KINDS = ("knn", "gnb", "logistic", "perceptron", "sgd_hinge", "svm_linear")

GRIDS: dict[str, list[dict]] = {
    "knn": [{"k": k} for k in range(2, 16)],
    "gnb": [{}],
    "logistic": [{"C": c} for c in (1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2)],
    "perceptron": [{"eta": e} for e in (1e-1, 1e-2, 1e-3)],
    "sgd_hinge": [{"epochs": e} for e in range(10, 101, 10)],
    "svm_linear": [{"C": c} for c in (1e-1, 1.0, 1e1, 1e2)],
}
USES_CLASS_WEIGHTS = {"knn": False, "gnb": False, "logistic": True,
                      "perceptron": True, "sgd_hinge": True, "svm_linear": True}


# ---------------------------------------------------------------- metrics


@dataclass(frozen=True)
class Metrics:
    f1: float
    precision: float
    recall: float
    accuracy: float
    tp: int
    fp: int
    tn: int
    fn: int

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("f1", "precision", "recall", "accuracy", "tp", "fp", "tn", "fn")}


def compute_metrics(predictions, labels) -> Metrics:
    p = np.asarray(predictions).astype(np.int64).ravel()
    y = np.asarray(labels).astype(np.int64).ravel()
    if p.size == 0:
        raise DomainError("cannot score an empty evaluation set")
    if p.shape != y.shape:
        raise ShapeError(f"{p.size} predictions for {y.size} labels")
    tp = int(np.sum((p == 1) & (y == 1)))
    fp = int(np.sum((p == 1) & (y != 1)))
    fn = int(np.sum((p != 1) & (y == 1)))
    tn = int(p.size - tp - fp - fn)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(f1, precision, recall, (tp + tn) / p.size, tp, fp, tn, fn)


def class_weights(y) -> dict[int, float]:
    """Balanced weights total / (2 * count_c)."""
    y = np.asarray(y).astype(np.int64)
    counts = np.bincount(y, minlength=2)
    if np.any(counts[:2] == 0):
        raise DomainError("both classes must be present to weight them")
    return {c: len(y) / (2.0 * counts[c]) for c in (0, 1)}


def sample_weights(y, balanced: bool = True) -> np.ndarray:
    y = np.asarray(y).astype(np.int64)
    if not balanced:
        return np.ones(len(y))
    cw = class_weights(y)
    return np.where(y == 1, cw[1], cw[0])


def _signed(y) -> np.ndarray:
    return np.where(np.asarray(y) == 1, 1.0, -1.0)


def _check_xy(X, y) -> tuple[np.ndarray, np.ndarray]:
    X = np.ascontiguousarray(X, dtype=float)
    y = np.asarray(y).astype(np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ShapeError(f"feature matrix {X.shape} does not match {len(y)} labels")
    if len(X) == 0:
        raise DomainError("empty training set")
    if not np.all(np.isfinite(X)):
        raise DomainError("training features contain non-finite values")
    return X, y


# ---------------------------------------------------------------- models


@dataclass
class TrainedClassifier:
    kind: str
    params: dict
    hyperparameters: dict
    class_weights: dict | None = None
    info: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return int(self.params["n_features"])

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ShapeError(f"model expects {self.n_features} features, got {X.shape[1]}")
        return X

    def decision_function(self, X) -> np.ndarray:
        X = self._check(X)
        if self.kind in ("logistic", "perceptron", "sgd_hinge", "svm_linear"):
            return X @ self.params["w"] + self.params["b"]
        if self.kind == "gnb":
            jl = _gnb_joint_log_likelihood(self.params, X)
            return jl[:, 1] - jl[:, 0]
        raise DomainError(f"{self.kind} has no decision function")

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        if self.kind == "knn":
            return _knn_predict(self.params, X, int(self.hyperparameters["k"]))
        if self.kind == "gnb":
            jl = _gnb_joint_log_likelihood(self.params, X)
            return (jl[:, 1] > jl[:, 0]).astype(np.int64)
        return (self.decision_function(X) > 0).astype(np.int64)


def nearest_neighbors(train: np.ndarray, queries: np.ndarray, k: int, chunk: int = 1024) -> np.ndarray:
    """Indices of the k nearest training rows per query, closest first, ties by index."""
    out = np.empty((len(queries), k), dtype=np.int64)
    sq = (train * train).sum(1)
    for s in range(0, len(queries), chunk):
        q = queries[s:s + chunk]
        d = sq[None, :] - 2.0 * q @ train.T
        if k < train.shape[0]:
            part = np.argpartition(d, k, axis=1)[:, : k + 1]
            # argpartition leaves ties unordered: sort candidates by (distance, index)
            cand = np.sort(part, axis=1)
            dist = np.take_along_axis(d, cand, 1)
            order = np.argsort(dist, axis=1, kind="stable")
            out[s:s + chunk] = np.take_along_axis(cand, order, 1)[:, :k]
        else:
            out[s:s + chunk] = np.argsort(d, axis=1, kind="stable")[:, :k]
    return out


def _knn_predict(params: dict, X: np.ndarray, k: int) -> np.ndarray:
    nn = nearest_neighbors(params["X"], X, k)
    return _kernels.knn_vote(params["y"][nn], k)


def train_knn(X, y, k: int) -> TrainedClassifier:
    X, y = _check_xy(X, y)
    if k < 1 or k > len(X):
        raise CapacityError(f"k={k} needs at least {k} training points, have {len(X)}")
    return TrainedClassifier("knn", {"X": X, "y": y, "n_features": X.shape[1]}, {"k": k})


def train_gnb(X, y, var_smoothing: float = 1e-9) -> TrainedClassifier:
    X, y = _check_xy(X, y)
    if len(np.unique(y)) < 2:
        raise DomainError("naive Bayes needs both classes")
    eps = var_smoothing * float(X.var(axis=0).max())
    means = np.array([X[y == c].mean(0) for c in (0, 1)])
    var = np.array([X[y == c].var(0) for c in (0, 1)]) + eps
    if np.any(var <= 0):
        raise NumericalError("zero variance after smoothing (all features constant)")
    priors = np.array([np.mean(y == c) for c in (0, 1)])
    return TrainedClassifier("gnb", {"means": means, "var": var, "priors": priors, "eps": eps,
                                     "n_features": X.shape[1]}, {})


def _gnb_joint_log_likelihood(params: dict, X: np.ndarray) -> np.ndarray:
    out = np.empty((len(X), 2))
    for c in (0, 1):
        var = params["var"][c]
        ll = -0.5 * np.sum(np.log(2 * np.pi * var)) - 0.5 * (((X - params["means"][c]) ** 2) / var).sum(1)
        out[:, c] = np.log(params["priors"][c]) + ll
    return out


def logistic_objective(w, b, X, ys, sw, C) -> tuple[float, np.ndarray]:
    """Weighted NLL + |w|^2 / (2C); returns value and gradient over (w, b)."""
    m = X @ w + b
    loss = float(np.sum(sw * np.logaddexp(0.0, -ys * m))) + float(w @ w) / (2 * C)
    r = -ys * sw * _expit(-ys * m)
    grad = np.concatenate([X.T @ r + w / C, [r.sum()]])
    return loss, grad


def _expit(z):
    return np.exp(-np.logaddexp(0.0, -z))


def train_logistic(X, y, C: float, balanced: bool = True, tol: float = 1e-6,
                   max_iter: int = 1000) -> TrainedClassifier:
    """Damped Newton with Armijo backtracking; stops once the gradient norm is below ``tol``."""
    if C <= 0:
        raise DomainError("C must be positive")
    X, y = _check_xy(X, y)
    ys, sw = _signed(y), sample_weights(y, balanced)
    n, d = X.shape
    Xa = np.hstack([X, np.ones((n, 1))])
    theta = np.zeros(d + 1)
    reg = np.full(d + 1, 1.0 / C)
    reg[-1] = 0.0
    loss, grad = logistic_objective(theta[:-1], theta[-1], X, ys, sw, C)
    iters = 0
    for iters in range(1, max_iter + 1):
        gnorm = float(np.linalg.norm(grad))
        if gnorm < tol:
            break
        p = _expit(Xa @ theta)
        curv = sw * p * (1 - p)
        hess = (Xa * curv[:, None]).T @ Xa + np.diag(reg)
        try:
            direction = -np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            direction = -np.linalg.lstsq(hess, grad, rcond=None)[0]
        if not np.all(np.isfinite(direction)) or grad @ direction >= 0:
            direction = -grad
        step = 1.0
        while True:
            cand = theta + step * direction
            new_loss, new_grad = logistic_objective(cand[:-1], cand[-1], X, ys, sw, C)
            if new_loss <= loss + 1e-4 * step * (grad @ direction) or step < 1e-12:
                break
            step *= 0.5
        if not np.isfinite(new_loss):
            raise NumericalError(f"logistic objective diverged at iteration {iters}")
        theta, loss, grad = cand, new_loss, new_grad
    gnorm = float(np.linalg.norm(grad))
    return TrainedClassifier(
        "logistic", {"w": theta[:-1], "b": float(theta[-1]), "n_features": d}, {"C": C},
        class_weights(y) if balanced else None,
        {"iterations": iters, "grad_norm": gnorm, "converged": gnorm < tol, "objective": loss},
    )


def train_perceptron(X, y, eta: float, balanced: bool = True, epochs: int = 1000,
                     seed: int = 0) -> TrainedClassifier:
    if eta <= 0:
        raise DomainError("learning rate must be positive")
    X, y = _check_xy(X, y)
    w, b = _kernels.perceptron_epochs(X, _signed(y), sample_weights(y, balanced), float(eta), int(epochs), int(seed))
    return TrainedClassifier("perceptron", {"w": w, "b": float(b), "n_features": X.shape[1]},
                             {"eta": eta}, class_weights(y) if balanced else None, {"epochs": epochs})


def sgd_t0(alpha: float) -> float:
    """Offset of the 1/(alpha (t0 + t)) schedule so the first step is 1/sqrt(sqrt(alpha))."""
    typw = math.sqrt(1.0 / math.sqrt(alpha))
    return 1.0 / (typw * alpha)


def train_sgd_hinge(X, y, epochs: int, balanced: bool = True, alpha: float = 1e-4,
                    seed: int = 0) -> TrainedClassifier:
    if epochs < 1:
        raise DomainError("need at least one epoch")
    X, y = _check_xy(X, y)
    w, b = _kernels.sgd_hinge_epochs(X, _signed(y), sample_weights(y, balanced), float(alpha),
                                     sgd_t0(alpha), int(epochs), int(seed))
    return TrainedClassifier("sgd_hinge", {"w": w, "b": float(b), "n_features": X.shape[1]},
                             {"epochs": epochs}, class_weights(y) if balanced else None, {"alpha": alpha})


def svm_primal(w, b, X, y, C: float, sw=None) -> float:
    """1/2 |(w, b)|^2 + C sum_i s_i max(0, 1 - y_i (w.x_i + b)) (bias regularised, as in training)."""
    ys = _signed(y)
    sw = np.ones(len(ys)) if sw is None else sw
    hinge = np.maximum(0.0, 1.0 - ys * (np.asarray(X) @ w + b))
    return 0.5 * (float(w @ w) + b * b) + C * float(np.sum(sw * hinge))


def train_svm_linear(X, y, C: float, balanced: bool = True, tol: float = 1e-3,
                     max_passes: int = 1000, seed: int = 0) -> TrainedClassifier:
    """Hinge-loss linear SVM by dual coordinate descent, box 0 <= a_i <= C s_i.

    Stops when the relative duality gap reaches ``tol``; hitting the pass cap
    yields a usable model flagged ``converged=False``.
    """
    if C <= 0:
        raise DomainError("C must be positive")
    X, y = _check_xy(X, y)
    sw = sample_weights(y, balanced)
    Xa = np.hstack([X, np.ones((len(X), 1))])
    history = np.full(max_passes, np.nan)
    w, alpha, passes, gap = _kernels.svm_dual_cd(Xa, _signed(y), C * sw, int(seed), float(tol),
                                                 int(max_passes), history)
    return TrainedClassifier(
        "svm_linear", {"w": w[:-1], "b": float(w[-1]), "alpha": alpha, "n_features": X.shape[1]},
        {"C": C}, class_weights(y) if balanced else None,
        {"passes": int(passes), "gap": float(gap), "converged": bool(gap <= tol),
         "dual_history": history[:passes], "primal": svm_primal(w[:-1], w[-1], X, y, C, sw)},
    )


def train(kind: str, X, y, hyper: dict, seed: int = 0) -> TrainedClassifier:
    if kind == "knn":
        return train_knn(X, y, **hyper)
    if kind == "gnb":
        return train_gnb(X, y, **hyper)
    if kind == "logistic":
        return train_logistic(X, y, **hyper)
    if kind == "perceptron":
        return train_perceptron(X, y, seed=seed, **hyper)
    if kind == "sgd_hinge":
        return train_sgd_hinge(X, y, seed=seed, **hyper)
    if kind == "svm_linear":
        return train_svm_linear(X, y, seed=seed, **hyper)
    raise DomainError(f"unknown classifier {kind!r}")


# ---------------------------------------------------------------- grid search


@dataclass
class Candidate:
    hyperparameters: dict
    validation: Metrics
    train_time_s: float


@dataclass
class GridSearchResult:
    kind: str
    candidates: list[Candidate]
    selected: int
    model: TrainedClassifier
    test: Metrics | None
    train_time_s: float

    @property
    def best(self) -> Candidate:
        return self.candidates[self.selected]


def grid_search(kind: str, train_xy, validation_xy, test_xy=None, grid: list[dict] | None = None,
                seed: int = 0, trainer: Callable | None = None) -> GridSearchResult:
    """Fit every candidate on ``train_xy``, select by validation F1 (first wins ties).

    Naive Bayes has nothing to tune, so its single model is refit on train plus
    validation before scoring the test partition.
    """
    grid = GRIDS[kind] if grid is None else grid
    if not grid:
        raise DomainError("empty hyperparameter grid")
    fit = trainer or (lambda X, y, h: train(kind, X, y, h, seed))
    Xtr, ytr = train_xy
    Xva, yva = validation_xy
    cands, models = [], []
    for hyper in grid:
        t0 = time.perf_counter()
        model = fit(Xtr, ytr, hyper)
        elapsed = time.perf_counter() - t0
        cands.append(Candidate(dict(hyper), compute_metrics(model.predict(Xva), yva), elapsed))
        models.append(model)
    f1s = [c.validation.f1 for c in cands]
    best = int(np.argmax(f1s))  # argmax returns the first maximum
    model = models[best]
    total = sum(c.train_time_s for c in cands)
    if kind == "gnb" and trainer is None:
        t0 = time.perf_counter()
        model = fit(np.vstack([Xtr, Xva]), np.concatenate([ytr, yva]), grid[best])
        total = time.perf_counter() - t0
    test = compute_metrics(model.predict(test_xy[0]), test_xy[1]) if test_xy is not None else None
    return GridSearchResult(kind, cands, best, model, test, total)


# ---------------------------------------------------------------- persistence


def save_classifier(model: TrainedClassifier, path: str | Path) -> None:
    """Arrays in an .npz archive; kind and hyperparameters in its JSON header entry."""
    header = {"kind": model.kind, "hyperparameters": model.hyperparameters,
              "class_weights": {str(k): v for k, v in (model.class_weights or {}).items()},
              "scalars": {k: float(v) for k, v in model.params.items() if np.ndim(v) == 0}}
    arrays = {k: np.asarray(v) for k, v in model.params.items() if np.ndim(v) > 0}
    with open(path, "wb") as fh:
        np.savez(fh, __header__=np.frombuffer(json.dumps(header).encode(), dtype=np.uint8), **arrays)


def load_classifier(path: str | Path) -> TrainedClassifier:
    try:
        with np.load(path, allow_pickle=False) as archive:
            header = json.loads(archive["__header__"].tobytes().decode())
            params = {k: archive[k] for k in archive.files if k != "__header__"}
    except (OSError, ValueError, KeyError) as exc:
        raise FormatError(f"{path}: not a saved classifier ({exc})") from exc
    params.update(header["scalars"])
    if "n_features" in params:
        params["n_features"] = int(params["n_features"])
    weights = {int(k): v for k, v in header["class_weights"].items()} or None
    return TrainedClassifier(header["kind"], params, header["hyperparameters"], weights)
