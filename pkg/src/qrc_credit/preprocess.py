"""Feature engineering: one-hot encoding, max-abs scaling, PCA and feature clustering.

The 23 raw columns become 24 encoded ones (SEX and MARRIAGE dummies), are
scaled into [-1, 1], and are then grouped into clusters of features that
point the same way in principal-component space. Each cluster is averaged
into one output feature.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial.distance import pdist

from .data import BILL_COLUMNS, LABEL, PAY_AMT_COLUMNS, PAY_COLUMNS
from .errors import DomainError, FitError, SchemaError, SizeError

ENCODED_COLUMNS = (
    ["LIMIT_BAL", "SEX_1", "EDUCATION", "MARRIAGE_1", "MARRIAGE_2", "AGE"]
    + PAY_COLUMNS
    + BILL_COLUMNS
    + PAY_AMT_COLUMNS
)
MIN_MARGINAL_RATIO = 1e-3


def one_hot_encode(records: pd.DataFrame) -> pd.DataFrame:
    """Dummy-code SEX and MARRIAGE (last level dropped); EDUCATION stays ordinal."""
    checks = {"SEX": {1, 2}, "MARRIAGE": {1, 2, 3}, "EDUCATION": {1, 2, 3, 4}}
    for column, allowed in checks.items():
        bad = ~records[column].isin(allowed)
        if bad.any():
            row = int(np.flatnonzero(bad.to_numpy())[0])
            raise DomainError(
                f"{column}={records[column].iloc[row]} at row {row} is not one of {sorted(allowed)}"
            )
    table = pd.DataFrame(index=records.index)
    for column in ENCODED_COLUMNS:
        if column == "SEX_1":
            table[column] = (records["SEX"] == 1).astype(float)
        elif column.startswith("MARRIAGE_"):
            table[column] = (records["MARRIAGE"] == int(column[-1])).astype(float)
        else:
            table[column] = records[column].astype(float)
    return table


@dataclass(frozen=True)
class ScalerModel:
    feature_names: list[str]
    max_abs: np.ndarray


def fit_maxabs(table: pd.DataFrame) -> ScalerModel:
    if len(table) == 0:
        raise FitError("cannot fit a scaler on zero rows")
    max_abs = table.abs().max(axis=0).to_numpy(dtype=float)
    zero = [name for name, m in zip(table.columns, max_abs) if m == 0]
    if zero:
        raise FitError(f"constant-zero column(s): {', '.join(zero)}")
    return ScalerModel(list(table.columns), max_abs)


def apply_maxabs(model: ScalerModel, table: pd.DataFrame) -> pd.DataFrame:
    if list(table.columns) != model.feature_names:
        raise SchemaError("table columns do not match the fitted scaler")
    return table / model.max_abs


@dataclass(frozen=True)
class PcaModel:
    """Eigen-decomposition of the feature covariance.

    ``full_loadings`` keeps every eigenvector (columns, descending variance);
    only the first ``n_components`` are treated as selected.
    """

    feature_names: list[str]
    means: np.ndarray
    eigenvalues: np.ndarray
    full_loadings: np.ndarray
    n_components: int

    @property
    def loadings(self) -> np.ndarray:
        return self.full_loadings[:, : self.n_components]

    @property
    def all_ratios(self) -> np.ndarray:
        return self.eigenvalues / self.eigenvalues.sum()

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        return self.all_ratios[: self.n_components]

    def transform(self, table, n_components: int | None = None) -> np.ndarray:
        k = self.n_components if n_components is None else n_components
        x = np.asarray(table, dtype=float) - self.means
        return x @ self.full_loadings[:, :k]

    def inverse_transform(self, scores: np.ndarray) -> np.ndarray:
        k = scores.shape[1]
        return scores @ self.full_loadings[:, :k].T + self.means


def fit_pca(table: pd.DataFrame, min_marginal_ratio: float = MIN_MARGINAL_RATIO) -> PcaModel:
    """PCA keeping components until the next one adds less than ``min_marginal_ratio``."""
    x = np.asarray(table, dtype=float)
    n, d = x.shape
    if n < d:
        raise SizeError(f"PCA needs at least as many rows as columns ({n} < {d})")
    means = x.mean(axis=0)
    centered = x - means
    cov = centered.T @ centered / (n - 1)
    eigenvalues, vectors = np.linalg.eigh(cov)
    order = np.argsort(eigenvalues)[::-1]
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    vectors = vectors[:, order]
    if eigenvalues.sum() <= 0:
        raise FitError("degenerate covariance: all variances are zero")
    # sign convention: largest-magnitude loading of each component is positive
    pivots = np.abs(vectors).argmax(axis=0)
    vectors *= np.sign(vectors[pivots, np.arange(d)])
    ratios = eigenvalues / eigenvalues.sum()
    below = np.flatnonzero(ratios < min_marginal_ratio)
    k = int(below[0]) if below.size else d
    names = list(getattr(table, "columns", [f"x{i}" for i in range(d)]))
    return PcaModel(names, means, eigenvalues, vectors, max(k, 1))


@dataclass(frozen=True)
class FeatureClustering:
    feature_names: list[str]
    assignment: dict[str, int]
    threshold: float
    method: str = "ward"

    @property
    def n_clusters(self) -> int:
        return len(set(self.assignment.values()))

    def members(self) -> dict[int, list[str]]:
        groups: dict[int, list[str]] = {}
        for name in self.feature_names:
            groups.setdefault(self.assignment[name], []).append(name)
        return dict(sorted(groups.items()))


def feature_coordinates(pca: PcaModel) -> np.ndarray:
    """Correlation-circle coordinates: loadings scaled by component std-devs."""
    k = pca.n_components
    return pca.full_loadings[:, :k] * np.sqrt(pca.eigenvalues[:k])


def cluster_features(pca: PcaModel, method: str = "ward", threshold_fraction: float = 0.5) -> FeatureClustering:
    """Agglomerative clustering of the features in principal-component space.

    Merging stops once the linkage distance exceeds ``threshold_fraction``
    times the largest initial pairwise distance between features.
    """
    coords = feature_coordinates(pca)
    names = pca.feature_names
    distances = pdist(coords)
    threshold = threshold_fraction * float(distances.max()) if distances.size else 0.0
    if len(names) == 1:
        labels = np.array([1])
    else:
        tree = linkage(coords, method=method)
        labels = fcluster(tree, t=threshold, criterion="distance")
    # renumber clusters by the position of their first member
    remap: dict[int, int] = {}
    for label in labels:
        remap.setdefault(int(label), len(remap))
    assignment = {name: remap[int(label)] for name, label in zip(names, labels)}
    return FeatureClustering(list(names), assignment, threshold, method)


def aggregate(clustering: FeatureClustering, table: pd.DataFrame) -> pd.DataFrame:
    """Average the scaled columns of each cluster (cluster id ascending)."""
    missing = [c for c in table.columns if c not in clustering.assignment]
    if missing:
        raise SchemaError(f"columns not covered by the clustering: {missing}")
    out = pd.DataFrame(index=table.index)
    for cid, members in clustering.members().items():
        absent = [m for m in members if m not in table.columns]
        if absent:
            raise SchemaError(f"table lacks clustered column(s) {absent}")
        out[f"f{cid}"] = table[members].mean(axis=1)
    return out


@dataclass
class PreprocessState:
    """Fitted scaler + PCA + clustering, reusable across runs."""

    scaler: ScalerModel
    pca: PcaModel
    clustering: FeatureClustering
    fitted_on: str = "full"
    extra: dict = field(default_factory=dict)

    def transform(self, records: pd.DataFrame) -> pd.DataFrame:
        scaled = apply_maxabs(self.scaler, one_hot_encode(records))
        return aggregate(self.clustering, scaled)

    def to_dict(self) -> dict:
        return {
            "format": "qrc-credit/preprocess",
            "version": 1,
            "fitted_on": self.fitted_on,
            "feature_names": self.scaler.feature_names,
            "max_abs": self.scaler.max_abs.tolist(),
            "pca": {
                "means": self.pca.means.tolist(),
                "eigenvalues": self.pca.eigenvalues.tolist(),
                "loadings": self.pca.full_loadings.tolist(),
                "n_components": self.pca.n_components,
                "explained_variance_ratio": self.pca.explained_variance_ratio.tolist(),
            },
            "clustering": {
                "method": self.clustering.method,
                "threshold": self.clustering.threshold,
                "assignment": self.clustering.assignment,
            },
            **({"extra": self.extra} if self.extra else {}),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PreprocessState":
        names = doc["feature_names"]
        scaler = ScalerModel(names, np.asarray(doc["max_abs"], dtype=float))
        p = doc["pca"]
        pca = PcaModel(
            names,
            np.asarray(p["means"], dtype=float),
            np.asarray(p["eigenvalues"], dtype=float),
            np.asarray(p["loadings"], dtype=float),
            int(p["n_components"]),
        )
        c = doc["clustering"]
        clustering = FeatureClustering(
            names, {k: int(v) for k, v in c["assignment"].items()}, float(c["threshold"]), c["method"]
        )
        return cls(scaler, pca, clustering, doc.get("fitted_on", "full"), doc.get("extra", {}))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path: str | Path) -> "PreprocessState":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_preprocessing(records: pd.DataFrame, fitted_on: str = "full") -> PreprocessState:
    encoded = one_hot_encode(records)
    scaler = fit_maxabs(encoded)
    scaled = apply_maxabs(scaler, encoded)
    pca = fit_pca(scaled)
    clustering = cluster_features(pca)
    return PreprocessState(scaler, pca, clustering, fitted_on)


def preprocessed_arrays(state: PreprocessState, records: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
    """(features, labels) arrays for a record table."""
    return state.transform(records).to_numpy(), records[LABEL].to_numpy().astype(np.int64)
