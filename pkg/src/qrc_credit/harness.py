"""End-to-end orchestration: configuration, experiment matrix, studies and hardware round trip."""

from __future__ import annotations

import configparser
import hashlib
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import data as data_mod
from .classify import KINDS, grid_search
from .crc import crc_table
from .dnn import dnn_grid_search
from .encoding import (
    EncodedSample, PulseProgram, ReservoirConfig, Waveform, encode, write_program_documents,
)
from .errors import CompletenessError, ConfigurationError, QrcError, ShapeError
from .preprocess import PreprocessState, fit_preprocessing, preprocessed_arrays
from .qrc import (
    FeatureTable, QuantumState, evolve, import_hardware_features, read_shot_records, reservoir_table,
    sample_counts, shot_rng,
)
from .resample import METHODS, ResamplePlan, resample

log = logging.getLogger(__name__)

FEATURE_SOURCES = ("qrc-sv", "qrc-shots", "crc", "hardware", "preprocessed")
DATASETS = ("CARDS_30000", "CARDS_2500", "CARDS_1000")
RESULT_COLUMNS = [
    "dataset", "feature_source", "encoding", "resampler", "classifier", "repeat",
    "selected_hyperparameters", "f1", "precision", "recall", "accuracy", "train_time_s",
    "seed", "config_hash", "error",
]


def substream_seed(master: int, *names) -> int:
    """Stable 32-bit seed for a named substream of the master seed."""
    blob = json.dumps([int(master), *[str(n) for n in names]]).encode()
    return int.from_bytes(hashlib.sha256(blob).digest()[:4], "little")


# ---------------------------------------------------------------- configuration


@dataclass(frozen=True)
class ExperimentConfig:
    dataset: str = "CARDS_1000"
    data_csv: str = ""
    feature_source: str = "qrc-sv"
    shots: int = 0
    hardware_records: str = ""
    pool_replicas: bool = True
    replicas: int = 6
    preprocess_fit: str = "full"
    resamplers: tuple[str, ...] = METHODS
    classifiers: tuple[str, ...] = KINDS
    include_dnn: bool = True
    repeats: int = 5
    fractions: tuple[float, float, float] = data_mod.DEFAULT_FRACTIONS
    seed: int = 0
    output_dir: str = "out"
    n_jobs: int = 1
    reservoir: ReservoirConfig = field(default_factory=ReservoirConfig)

    def __post_init__(self):
        if self.dataset not in DATASETS:
            raise ConfigurationError(f"dataset must be one of {DATASETS}, got {self.dataset!r}")
        if self.feature_source not in FEATURE_SOURCES:
            raise ConfigurationError(f"feature_source must be one of {FEATURE_SOURCES}")
        if self.feature_source == "qrc-shots" and self.shots < 1:
            raise ConfigurationError("qrc-shots needs shots >= 1")
        if self.preprocess_fit not in ("full", "train"):
            raise ConfigurationError("preprocess_fit must be 'full' or 'train'")
        for r in self.resamplers:
            if r not in METHODS:
                raise ConfigurationError(f"unknown resampler {r!r}")
        for c in self.classifiers:
            if c not in KINDS:
                raise ConfigurationError(f"unknown classifier {c!r}")
        if self.repeats < 1 or self.replicas < 1:
            raise ConfigurationError("repeats and replicas must be at least 1")

    @property
    def encoding(self) -> str:
        return self.reservoir.encoding

    def check_files(self) -> None:
        if not self.data_csv or not Path(self.data_csv).exists():
            raise ConfigurationError(f"data_csv {self.data_csv!r} does not exist")
        if self.feature_source == "hardware" and not Path(self.hardware_records).exists():
            raise ConfigurationError(f"hardware_records {self.hardware_records!r} does not exist")

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)

    # -- INI representation; physical keys carry their units in the name

    def to_ini(self) -> str:
        cp = configparser.ConfigParser()
        cp["experiment"] = {
            "dataset": self.dataset,
            "data_csv": self.data_csv,
            "feature_source": self.feature_source,
            "shots": str(self.shots),
            "hardware_records": self.hardware_records,
            "pool_replicas": str(self.pool_replicas).lower(),
            "replicas": str(self.replicas),
            "preprocess_fit": self.preprocess_fit,
            "resamplers": ", ".join(self.resamplers),
            "classifiers": ", ".join(self.classifiers),
            "include_dnn": str(self.include_dnn).lower(),
            "repeats": str(self.repeats),
            "fractions": ", ".join(repr(f) for f in self.fractions),
            "seed": str(self.seed),
            "output_dir": self.output_dir,
            "n_jobs": str(self.n_jobs),
        }
        cp["reservoir"] = {k: repr(v) if isinstance(v, float) else str(v)
                           for k, v in self.reservoir.to_dict().items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "ExperimentConfig":
        cp = configparser.ConfigParser()
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigurationError(f"unreadable config: {exc}") from exc
        exp = cp["experiment"] if cp.has_section("experiment") else {}
        known = {f.name for f in fields(cls)} - {"reservoir"}
        unknown = set(exp) - known
        if unknown:
            raise ConfigurationError(f"unknown [experiment] key(s): {sorted(unknown)}")
        kw: dict = {}
        try:
            for key, value in exp.items():
                if key in ("shots", "replicas", "repeats", "seed", "n_jobs"):
                    kw[key] = int(value)
                elif key in ("pool_replicas", "include_dnn"):
                    kw[key] = cp.getboolean("experiment", key)
                elif key in ("resamplers", "classifiers"):
                    kw[key] = tuple(v.strip() for v in value.split(",") if v.strip())
                elif key == "fractions":
                    kw[key] = tuple(float(v) for v in value.split(","))
                else:
                    kw[key] = value
            res_kw: dict = {}
            if cp.has_section("reservoir"):
                types = {f.name: f.type for f in fields(ReservoirConfig)}
                for key, value in cp["reservoir"].items():
                    if key not in types:
                        raise ConfigurationError(f"unknown [reservoir] key {key!r}")
                    t = str(types[key])
                    res_kw[key] = int(value) if t == "int" else value if t == "str" else float(value)
        except ValueError as exc:
            raise ConfigurationError(f"bad config value: {exc}") from exc
        encoding = res_kw.pop("encoding", "detuning")
        kw["reservoir"] = ReservoirConfig.for_encoding(encoding, **res_kw)
        return cls(**kw)

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file {p} does not exist")
        return cls.from_ini(p.read_text())

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_ini())

    def hash(self) -> str:
        """Digest of every setting that can change results (not output_dir or n_jobs)."""
        neutral = self.with_(output_dir="", n_jobs=1)
        return hashlib.sha256(neutral.to_ini().encode()).hexdigest()[:16]


# ---------------------------------------------------------------- data stages


@dataclass
class PreparedData:
    records: pd.DataFrame
    split: data_mod.DatasetSplit
    preprocess: PreprocessState
    arrays: dict[str, tuple[np.ndarray, np.ndarray]]  # partition -> (12 features, labels)
    ids: dict[str, np.ndarray]


def prepare_data(cfg: ExperimentConfig, cleaned: pd.DataFrame | None = None) -> PreparedData:
    """Load, clean, subset, split and preprocess the configured dataset."""
    if cleaned is None:
        cfg.check_files()
        cleaned = data_mod.clean(data_mod.load_raw(cfg.data_csv))
    datasets = data_mod.nested_datasets(cleaned, cfg.seed)
    records = datasets[cfg.dataset]
    sp = data_mod.split(records, cfg.fractions, cfg.seed)
    state = fit_preprocessing(cleaned if cfg.preprocess_fit == "full" else sp.train,
                              fitted_on="CARDS_30000" if cfg.preprocess_fit == "full" else "train")
    arrays = {name: preprocessed_arrays(state, part) for name, part in sp.partitions().items()}
    ids = {name: part[data_mod.ID].to_numpy() for name, part in sp.partitions().items()}
    return PreparedData(records, sp, state, arrays, ids)


def limit_prepared(prepared: PreparedData, limit: int | None) -> PreparedData:
    """Keep only the first ``limit`` samples of each partition (quick runs)."""
    if limit is None:
        return prepared
    ids = {p: v[:limit] for p, v in prepared.ids.items()}
    arrays = {p: (a[0][:limit], a[1][:limit]) for p, a in prepared.arrays.items()}
    return PreparedData(prepared.records, prepared.split, prepared.preprocess, arrays, ids)


def all_features(prepared: PreparedData) -> tuple[np.ndarray, np.ndarray]:
    """(sample ids, 12-feature rows) for every sample of the dataset, partition order."""
    ids = np.concatenate([prepared.ids[p] for p in ("train", "validation", "test")])
    X = np.vstack([prepared.arrays[p][0] for p in ("train", "validation", "test")])
    return ids, X


def reservoir_features(cfg: ExperimentConfig, prepared: PreparedData, stages: list[str]) -> FeatureTable:
    ids, X = all_features(prepared)
    rc = cfg.reservoir
    if cfg.feature_source == "preprocessed":
        stages.append("passthrough")
        return FeatureTable(ids, X[:, None, :], X.shape[1], "preprocessed")
    if cfg.feature_source == "qrc-sv":
        stages.append("reservoir:qrc-sv")
        return reservoir_table(X, ids, rc, mode="exact", n_jobs=cfg.n_jobs)
    if cfg.feature_source == "qrc-shots":
        stages.append(f"reservoir:qrc-shots:{cfg.shots}")
        return reservoir_table(X, ids, rc, mode="shots", shots=cfg.shots,
                               seed=substream_seed(cfg.seed, "shots", cfg.shots), n_jobs=cfg.n_jobs)
    if cfg.feature_source == "crc":
        stages.append("reservoir:crc")
        return crc_table(X, ids, rc)
    stages.append("import:hardware")
    n_atoms = X.shape[1] + (1 if rc.encoding == "position" else 0)
    return import_hardware_features(cfg.hardware_records, n_atoms, rc.n_timesteps, sample_ids=ids,
                                    pool=cfg.pool_replicas)


def _row(cfg: ExperimentConfig, source: str, resampler: str, classifier: str, **values) -> dict:
    row = {
        "dataset": cfg.dataset, "feature_source": source,
        "encoding": cfg.encoding if source not in ("preprocessed",) else "none",
        "resampler": resampler, "classifier": classifier, "repeat": 0,
        "selected_hyperparameters": "", "f1": np.nan, "precision": np.nan, "recall": np.nan,
        "accuracy": np.nan, "train_time_s": np.nan, "seed": cfg.seed, "config_hash": cfg.hash(), "error": "",
    }
    row.update(values)
    return row


def _metric_values(metrics) -> dict:
    return {k: metrics.to_dict()[k] for k in ("f1", "precision", "recall", "accuracy")}


def classify_matrix(cfg: ExperimentConfig, table: FeatureTable, prepared: PreparedData,
                    source: str | None = None) -> list[dict]:
    """Grid-search every (resampler, classifier) cell on the given features."""
    source = source or cfg.feature_source
    parts = {}
    for name in ("train", "validation", "test"):
        parts[name] = (table.select(prepared.ids[name]).matrix(), prepared.arrays[name][1])
    rows = []
    for method in cfg.resamplers:
        try:
            plan = ResamplePlan(method, seed=substream_seed(cfg.seed, "resample", method))
            train_xy = resample(*parts["train"], plan)
        except Exception as exc:  # noqa: BLE001 - recorded as an error row per cell
            rows += [_row(cfg, source, method, kind, error=f"{type(exc).__name__}: {exc}")
                     for kind in cfg.classifiers]
            continue
        for kind in cfg.classifiers:
            try:
                res = grid_search(kind, train_xy, parts["validation"], parts["test"],
                                  seed=substream_seed(cfg.seed, "classify", method, kind))
                rows.append(_row(cfg, source, method, kind,
                                 selected_hyperparameters=json.dumps(res.best.hyperparameters, sort_keys=True),
                                 train_time_s=res.train_time_s, **_metric_values(res.test)))
            except Exception as exc:  # noqa: BLE001
                log.warning("cell %s/%s failed: %s", method, kind, exc)
                rows.append(_row(cfg, source, method, kind, error=f"{type(exc).__name__}: {exc}"))
    return rows


def dnn_rows(cfg: ExperimentConfig, prepared: PreparedData, **dnn_kwargs) -> list[dict]:
    """DNN benchmark on the 12 preprocessed features, per resampler and repeat."""
    rows = []
    parts = {name: prepared.arrays[name] for name in ("train", "validation", "test")}
    for method in cfg.resamplers:
        for r in range(cfg.repeats):
            try:
                plan = ResamplePlan(method, seed=substream_seed(cfg.seed, "resample", method))
                train_xy = resample(*parts["train"], plan)
                res = dnn_grid_search(train_xy, parts["validation"], parts["test"],
                                      seed=substream_seed(cfg.seed, "dnn", method, r), **dnn_kwargs)
                rows.append(_row(cfg, "preprocessed", method, "dnn", repeat=r,
                                 selected_hyperparameters=json.dumps(res.result.hyperparameters, sort_keys=True),
                                 train_time_s=res.train_time_s, **_metric_values(res.test)))
            except Exception as exc:  # noqa: BLE001
                rows.append(_row(cfg, "preprocessed", method, "dnn", repeat=r,
                                 error=f"{type(exc).__name__}: {exc}"))
    return rows


@dataclass
class ExperimentResult:
    results: pd.DataFrame
    stages: list[str]
    features: FeatureTable | None = None
    prepared: PreparedData | None = None


def results_frame(rows: list[dict]) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=RESULT_COLUMNS)


def run_experiment(cfg: ExperimentConfig, cleaned: pd.DataFrame | None = None, write: bool = True,
                   dnn_kwargs: dict | None = None) -> ExperimentResult:
    """preprocess -> reservoir or passthrough -> resample -> grid search -> metrics."""
    stages: list[str] = []
    prepared = prepare_data(cfg, cleaned)
    stages.append("preprocess")
    table = reservoir_features(cfg, prepared, stages)
    rows = classify_matrix(cfg, table, prepared)
    stages.append("classify")
    if cfg.include_dnn:
        rows += dnn_rows(cfg, prepared, **(dnn_kwargs or {}))
        stages.append("dnn")
    frame = results_frame(rows)
    if write:
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_results(frame, out / "results.csv")
        (out / "run_log.json").write_text(json.dumps({"config_hash": cfg.hash(), "stages": stages}, indent=1))
        cfg.save(out / "config.ini")
    return ExperimentResult(frame, stages, table, prepared)


def write_results(frame: pd.DataFrame, path: str | Path) -> None:
    frame.to_csv(path, index=False, float_format="%.10g")


# ---------------------------------------------------------------- studies


def shot_study(cfg: ExperimentConfig, shot_grid, prepared: PreparedData | None = None,
               cleaned: pd.DataFrame | None = None) -> pd.DataFrame:
    """Classification F1 versus shot count, plus the exact-statevector reference."""
    columns = ["shots", "mode", "resampler", "classifier", "f1", "error"]
    shot_grid = list(shot_grid)
    if not shot_grid:
        return pd.DataFrame(columns=columns)
    prepared = prepared or prepare_data(cfg, cleaned)
    ids, X = all_features(prepared)
    rc = cfg.reservoir
    tables = [("exact", 0, reservoir_table(X, ids, rc, mode="exact", n_jobs=cfg.n_jobs))]
    for n in shot_grid:
        tables.append(("shots", int(n), reservoir_table(
            X, ids, rc, mode="shots", shots=int(n), seed=substream_seed(cfg.seed, "shot-study", n),
            n_jobs=cfg.n_jobs)))
    rows = []
    for mode, n, table in tables:
        for r in classify_matrix(cfg, table, prepared, source="qrc-sv" if mode == "exact" else "qrc-shots"):
            rows.append({"shots": n, "mode": mode, "resampler": r["resampler"], "classifier": r["classifier"],
                         "f1": r["f1"], "error": r["error"]})
    return pd.DataFrame(rows, columns=columns)


@dataclass
class CorrelationResult:
    per_timestep: list[float]
    undefined: list[bool]
    mean: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"timestep": np.arange(1, len(self.per_timestep) + 1),
                             "pearson": self.per_timestep, "undefined": self.undefined})


def pearson(a, b) -> float:
    """Pearson coefficient; NaN when either input has zero variance."""
    x = np.asarray(a, dtype=float).ravel()
    y = np.asarray(b, dtype=float).ravel()
    x = x - x.mean()
    y = y - y.mean()
    sxx, syy = float(x @ x), float(y @ y)
    if sxx == 0.0 or syy == 0.0:
        return math.nan
    return float(np.clip((x @ y) / math.sqrt(sxx * syy), -1.0, 1.0))


def correlate_features(a: FeatureTable, b: FeatureTable) -> CorrelationResult:
    """Per-timestep Pearson correlation over all samples' concatenated features."""
    if a.values.shape[1:] != b.values.shape[1:]:
        raise ShapeError(f"feature shapes differ: {a.values.shape[1:]} vs {b.values.shape[1:]}")
    if sorted(map(int, a.sample_ids)) != sorted(map(int, b.sample_ids)):
        raise ShapeError("feature sets cover different samples")
    b = b.select(a.sample_ids)
    per = [pearson(a.values[:, t, :], b.values[:, t, :]) for t in range(a.values.shape[1])]
    undefined = [math.isnan(p) for p in per]
    defined = [p for p in per if not math.isnan(p)]
    return CorrelationResult(per, undefined, float(np.mean(defined)) if defined else math.nan)


# ---------------------------------------------------------------- hardware path


def export_for_hardware(cfg: ExperimentConfig, out_dir: str | Path, prepared: PreparedData | None = None,
                        cleaned: pd.DataFrame | None = None, sample_ids=None) -> list[Path]:
    """One program document per (sample, timestep), each with the replica register."""
    prepared = prepared or prepare_data(cfg, cleaned)
    ids, X = all_features(prepared)
    if sample_ids is not None:
        wanted = set(int(s) for s in sample_ids)
        keep = [k for k, s in enumerate(ids) if int(s) in wanted]
        ids, X = ids[keep], X[keep]
    out_dir = Path(out_dir)
    paths = []
    for sid, x in zip(ids, X):
        paths += write_program_documents(int(sid), encode(x, cfg.reservoir), cfg.reservoir, cfg.replicas, out_dir)
    manifest = {"config_hash": cfg.hash(), "encoding": cfg.encoding, "replicas": cfg.replicas,
                "n_timesteps": cfg.reservoir.n_timesteps, "samples": [int(s) for s in ids],
                "files": [p.name for p in paths]}
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return paths


def program_from_document(doc: dict) -> tuple[EncodedSample, PulseProgram, dict]:
    """Rebuild replica 0 of an exported document as an emulator input (2-D sites)."""
    reg = doc["register"]
    sites = np.asarray(reg["sites_um"], dtype=float)
    owner = [tuple(p) for p in reg["replica_of"]]
    idx = sorted((i for i, (r, _) in enumerate(owner) if r == 0), key=lambda i: owner[i][1])
    scale = np.asarray(reg["local_scale"], dtype=float)[idx]
    wf = doc["waveforms_rad_per_us"]

    def wave(points):
        t, v = zip(*points)
        return Waveform(tuple(float(x) for x in t), tuple(float(x) for x in v))

    duration = float(doc["duration_us"])
    program = PulseProgram(wave(wf["rabi"]), wave(wf["phase_rad"]), wave(wf["global_detuning"]),
                           wave(wf["local_detuning"]), scale, (duration,))
    return EncodedSample(sites[idx], scale, doc["metadata"]["encoding"]), program, doc["metadata"]


def synthesize_shot_records(program_dir: str | Path, shots_per_replica: int, seed: int,
                            c6: float = ReservoirConfig().c6_rad_um6_per_us) -> pd.DataFrame:
    """Stand-in for hardware: Born-rule shots from emulating each exported program.

    Every replica is sampled independently from the replica-0 final state, as
    if replicas were perfectly isolated copies.
    """
    rows = []
    cfg = ReservoirConfig(c6_rad_um6_per_us=c6)
    for path in sorted(Path(program_dir).glob("sample_*_t*.json")):
        sample, program, meta = program_from_document(json.loads(path.read_text()))
        state: QuantumState = evolve(sample, program, cfg)[-1]
        sid, k = int(meta["sample_id"]), int(meta["timestep"])
        n = sample.n_atoms
        for r in range(int(meta["replicas"])):
            counts = sample_counts(state, shots_per_replica, shot_rng(seed, sid, 1000 * k + r))
            for basis in np.flatnonzero(counts):
                bits = "".join("1" if (basis >> i) & 1 else "0" for i in range(n))
                rows += [(sid, k, r, bits)] * int(counts[basis])
    return pd.DataFrame(rows, columns=["sample_id", "timestep", "replica", "bitstring"])


def import_and_classify(records_path: str | Path, cfg: ExperimentConfig,
                        prepared: PreparedData | None = None,
                        cleaned: pd.DataFrame | None = None) -> ExperimentResult:
    prepared = prepared or prepare_data(cfg, cleaned)
    ids, X = all_features(prepared)
    frame = read_shot_records(records_path)
    n_atoms = X.shape[1] + (1 if cfg.encoding == "position" else 0)
    table = import_hardware_features(frame, n_atoms, cfg.reservoir.n_timesteps, sample_ids=ids,
                                     pool=cfg.pool_replicas)
    rows = classify_matrix(cfg, table, prepared, source="hardware")
    return ExperimentResult(results_frame(rows), ["import:hardware", "classify"], table, prepared)


# ---------------------------------------------------------------- reporting


def report(results: pd.DataFrame) -> pd.DataFrame:
    """Best-of summary: per (feature_source, resampler, classifier) mean/std F1 and time."""
    ok = results[results["error"].fillna("") == ""]
    if ok.empty:
        return pd.DataFrame(columns=["feature_source", "encoding", "resampler", "classifier", "runs",
                                     "f1_mean", "f1_std", "train_time_s_mean"])
    g = ok.groupby(["feature_source", "encoding", "resampler", "classifier"], sort=True)
    summary = g.agg(runs=("f1", "size"), f1_mean=("f1", "mean"), f1_std=("f1", "std"),
                    train_time_s_mean=("train_time_s", "mean")).reset_index()
    summary["f1_std"] = summary["f1_std"].fillna(0.0)
    return summary


def save_json(obj, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=1, default=_jsonable))


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer, np.floating)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"cannot serialise {type(o)}")


def missing_pairs(frame: pd.DataFrame, ids, n_timesteps: int) -> list[tuple[int, int]]:
    present = set(zip(frame["sample_id"].astype(int), frame["timestep"].astype(int)))
    return [(int(s), k) for s in ids for k in range(1, n_timesteps + 1) if (int(s), k) not in present]


__all__ = [
    "ExperimentConfig", "PreparedData", "prepare_data", "run_experiment", "shot_study", "correlate_features",
    "export_for_hardware", "import_and_classify", "synthesize_shot_records", "report", "substream_seed",
    "CompletenessError", "QrcError",
]
