"""Credit-card default records: loading, cleaning, nested subsets and splits.

Records are held in a :class:`pandas.DataFrame` with one row per card, an
``ID`` column identifying the card, the 23 documented feature columns and the
binary ``default`` label (1 = defaulter).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .errors import ConfigurationError, ParseError, SchemaError, SizeError

PAY_COLUMNS = [f"PAY_{k}" for k in range(1, 7)]
BILL_COLUMNS = [f"BILL_AMT{k}" for k in range(1, 7)]
PAY_AMT_COLUMNS = [f"PAY_AMT{k}" for k in range(1, 7)]
FEATURE_COLUMNS = (
    ["LIMIT_BAL", "SEX", "EDUCATION", "MARRIAGE", "AGE"]
    + PAY_COLUMNS
    + BILL_COLUMNS
    + PAY_AMT_COLUMNS
)
LABEL = "default"
ID = "ID"

# Header spellings found in common redistributions of the UCI file.
_ALIASES = {
    "PAY_0": "PAY_1",
    "default payment next month": LABEL,
    "default.payment.next.month": LABEL,
    "Y": LABEL,
}

NESTED_SIZES = {"CARDS_2500": 2571, "CARDS_1000": 1000}
DEFAULT_FRACTIONS = (0.70, 0.15, 0.15)


@dataclass(frozen=True)
class DatasetSplit:
    train: pd.DataFrame
    validation: pd.DataFrame
    test: pd.DataFrame
    seed: int

    def partitions(self) -> dict[str, pd.DataFrame]:
        return {"train": self.train, "validation": self.validation, "test": self.test}

    def sizes(self) -> dict[str, tuple[int, int]]:
        """(rows, class-1 rows) per partition."""
        return {
            name: (len(part), int(part[LABEL].sum()))
            for name, part in self.partitions().items()
        }


def load_raw(path: str | Path) -> pd.DataFrame:
    """Read the credit-card CSV.

    The file must carry the 23 UCI feature columns plus the label; an ``ID``
    column is optional (1-based row numbers are assigned when absent).
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"{path}: no such file")
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    frame = frame.rename(columns=lambda c: _ALIASES.get(c.strip(), c.strip()))
    if "LIMIT_BAL" not in frame.columns and len(frame) and "LIMIT_BAL" in set(frame.iloc[0]):
        # spreadsheet exports carry an extra X1..X23 header row
        frame = pd.read_csv(path, dtype=str, keep_default_na=False, skiprows=1)
        frame = frame.rename(columns=lambda c: _ALIASES.get(c.strip(), c.strip()))
    for column in FEATURE_COLUMNS + [LABEL]:
        if column not in frame.columns:
            raise SchemaError(f"missing column {column!r}")
    columns = ([ID] if ID in frame.columns else []) + FEATURE_COLUMNS + [LABEL]
    frame = frame[columns]

    values = frame.apply(pd.to_numeric, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        row, col = np.argwhere(bad)[0]
        raise ParseError(
            f"row {row}: non-numeric value {frame.iat[row, col]!r} in column {columns[col]!r}"
        )
    if ID not in values.columns:
        values.insert(0, ID, np.arange(1, len(values) + 1))
    integral = (values == values.round()).all()
    for column in values.columns[integral.to_numpy()]:
        values[column] = values[column].astype(np.int64)
    return values.reset_index(drop=True)


def save_records(records: pd.DataFrame, path: str | Path) -> None:
    records.to_csv(path, index=False)


def clean(records: pd.DataFrame) -> pd.DataFrame:
    """Drop rows with undocumented MARRIAGE (0) or EDUCATION (0, 5, 6) codes.

    PAY_* values are kept verbatim. Row order is preserved.
    """
    keep = (records["MARRIAGE"] != 0) & ~records["EDUCATION"].isin([0, 5, 6])
    return records.loc[keep].reset_index(drop=True)


def _splitmix64(x: np.ndarray) -> np.ndarray:
    z = x.astype(np.uint64) + np.uint64(0x9E3779B97F4A7C15)
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return z ^ (z >> np.uint64(31))


def record_keys(ids: np.ndarray, seed: int) -> np.ndarray:
    """Seeded pseudo-random key per record identity (not per position)."""
    with np.errstate(over="ignore"):
        salted = _splitmix64(np.asarray([seed], dtype=np.int64).astype(np.uint64))[0]
        return _splitmix64(np.asarray(ids, dtype=np.int64).astype(np.uint64) ^ salted)


def _class_quotas(counts: dict[int, int], target: int) -> dict[int, int]:
    # every class but the largest is rounded up; the largest takes the rest
    total = sum(counts.values())
    majority = max(counts, key=lambda c: (counts[c], -c))
    quotas = {}
    for label, n in counts.items():
        if label != majority:
            quotas[label] = min(n, math.ceil(target * n / total - 1e-9))
    quotas[majority] = target - sum(quotas.values())
    if quotas[majority] > counts[majority] or quotas[majority] < 0:
        raise SizeError(f"cannot draw {target} stratified rows from {counts}")
    return quotas


def stratified_subset(records: pd.DataFrame, target_size: int, seed: int) -> pd.DataFrame:
    """Class-stratified subset whose smaller sizes are prefixes of larger ones.

    Records are ranked within each class by a key derived from ``(seed, ID)``,
    so a subset of a subset drawn with the same seed equals the direct subset.
    """
    if target_size > len(records):
        raise SizeError(f"target size {target_size} exceeds {len(records)} records")
    if target_size < 0:
        raise SizeError("target size must be non-negative")
    labels = records[LABEL].to_numpy()
    counts = {int(c): int((labels == c).sum()) for c in np.unique(labels)}
    quotas = _class_quotas(counts, target_size) if counts else {}
    keys = record_keys(records[ID].to_numpy(), seed)
    chosen = []
    for label, quota in quotas.items():
        idx = np.flatnonzero(labels == label)
        order = idx[np.argsort(keys[idx], kind="stable")]
        chosen.append(order[:quota])
    keep = np.sort(np.concatenate(chosen)) if chosen else np.array([], dtype=int)
    return records.iloc[keep].reset_index(drop=True)


def nested_datasets(cleaned: pd.DataFrame, seed: int) -> dict[str, pd.DataFrame]:
    """CARDS_30000 (all cleaned rows) and the nested CARDS_2500 / CARDS_1000."""
    out = {"CARDS_30000": cleaned}
    parent = cleaned
    for name, size in NESTED_SIZES.items():
        parent = stratified_subset(parent, min(size, len(parent)), seed)
        out[name] = parent
    return out


def _allocate(counts: np.ndarray, n_draws: int) -> np.ndarray:
    """Largest-remainder apportionment of ``n_draws`` across classes."""
    share = counts * n_draws / counts.sum()
    floored = np.floor(share + 1e-9).astype(int)
    remainder = share - floored
    # ties go to the lower class index
    for i in np.argsort(-remainder, kind="stable")[: n_draws - floored.sum()]:
        floored[i] += 1
    return floored


def _holdout(labels: np.ndarray, idx: np.ndarray, n_out: int, rng: np.random.Generator):
    classes = np.unique(labels[idx])
    counts = np.array([(labels[idx] == c).sum() for c in classes])
    take = _allocate(counts, n_out)
    out, rest = [], []
    for c, k in zip(classes, take):
        members = idx[labels[idx] == c]
        members = members[rng.permutation(len(members))]
        out.append(members[:k])
        rest.append(members[k:])
    return np.sort(np.concatenate(out)), np.sort(np.concatenate(rest))


def split(
    records: pd.DataFrame,
    fractions: tuple[float, float, float] = DEFAULT_FRACTIONS,
    seed: int = 0,
) -> DatasetSplit:
    """Stratified train/validation/test partition.

    The test block is drawn first with ``ceil(f_test * N)`` rows, then the
    validation block takes ``ceil(f_val / (f_train + f_val))`` of the rest, so
    rounding remainders land in test. Classes are apportioned by largest
    remainder at each stage.
    """
    f_train, f_val, f_test = fractions
    if min(fractions) <= 0:
        raise ConfigurationError(f"split fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ConfigurationError(f"split fractions must sum to 1, got {sum(fractions)}")
    n = len(records)
    labels = records[LABEL].to_numpy()
    rng = np.random.default_rng(seed)
    everything = np.arange(n)
    n_test = min(n, math.ceil(f_test * n - 1e-9))
    test_idx, rest = _holdout(labels, everything, n_test, rng)
    n_val = min(len(rest), math.ceil(f_val / (f_train + f_val) * len(rest) - 1e-9))
    val_idx, train_idx = _holdout(labels, rest, n_val, rng)

    def take(idx):
        return records.iloc[idx].reset_index(drop=True)

    return DatasetSplit(take(train_idx), take(val_idx), take(test_idx), seed)


def synthetic_records(n: int = 2000, seed: int = 0, default_rate: float = 0.22) -> pd.DataFrame:
    """Schema-compatible synthetic cards, for demos and tests only.

    The values imitate the ranges of the UCI file (including a sprinkling of
    undocumented MARRIAGE/EDUCATION codes) and the label depends on repayment
    status, but nothing about the real data distribution is claimed.
    """
    rng = np.random.default_rng(seed)
    risk = rng.normal(size=n)
    limit = np.round(np.exp(rng.normal(11.8, 0.8, n)) / 10_000) * 10_000
    limit = np.clip(limit, 10_000, 1_000_000)
    sex = rng.choice([1, 2], n, p=[0.4, 0.6])
    education = rng.choice([0, 1, 2, 3, 4, 5, 6], n, p=[0.001, 0.35, 0.46, 0.16, 0.004, 0.02, 0.005])
    marriage = rng.choice([0, 1, 2, 3], n, p=[0.002, 0.45, 0.53, 0.018])
    age = np.clip(np.round(rng.gamma(9.0, 4.0, n) + 0), 21, 79)
    pay = np.empty((n, 6), dtype=np.int64)
    level = np.clip(np.round(risk * 1.2 - 0.3), -2, 8)
    for k in range(6):
        jitter = rng.integers(-1, 2, n) * (rng.random(n) < 0.3)
        pay[:, k] = np.clip(level + jitter, -2, 8)
    base_bill = limit * rng.uniform(0.0, 0.9, n)
    bills = np.stack([base_bill * rng.uniform(0.85, 1.15, n) for _ in range(6)], axis=1)
    bills[rng.random((n, 6)) < 0.02] *= -0.05
    paid = np.abs(bills) * rng.uniform(0.0, 0.15, (n, 6)) * (pay <= 0)
    logit = 1.1 * risk + 0.6 * (pay[:, 0] > 0) - 0.3 * np.log(limit / 1e5)
    shift = np.quantile(logit, 1 - default_rate)
    label = (logit + rng.logistic(scale=0.35, size=n) > shift).astype(np.int64)

    frame = pd.DataFrame({ID: np.arange(1, n + 1), "LIMIT_BAL": limit, "SEX": sex,
                          "EDUCATION": education, "MARRIAGE": marriage, "AGE": age})
    for k in range(6):
        frame[PAY_COLUMNS[k]] = pay[:, k]
    for k in range(6):
        frame[BILL_COLUMNS[k]] = np.round(bills[:, k])
    for k in range(6):
        frame[PAY_AMT_COLUMNS[k]] = np.round(paid[:, k])
    frame[LABEL] = label
    return frame.astype(np.int64)


def labeled_with_counts(n_total: int, n_positive: int, seed: int = 0) -> pd.DataFrame:
    """Synthetic records with an exact class composition.

    Used to check split and resampling arithmetic against published class
    counts when the real file is unavailable.
    """
    frame = synthetic_records(n_total, seed=seed)
    labels = np.zeros(n_total, dtype=np.int64)
    rng = np.random.default_rng(seed + 1)
    labels[rng.choice(n_total, n_positive, replace=False)] = 1
    frame[LABEL] = labels
    frame["MARRIAGE"] = frame["MARRIAGE"].replace(0, 1)
    frame["EDUCATION"] = frame["EDUCATION"].replace({0: 1, 5: 4, 6: 4})
    return frame
