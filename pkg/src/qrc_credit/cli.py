"""Command-line entry point.

Every subcommand reads the experiment INI (``--config``), lets ``--seed``,
``--out`` and ``--repeats`` override it, and writes its artifacts under the
output directory. Exit codes: 0 success, 1 configuration, 2 data, 3 numerical.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import data as data_mod
from . import harness
from .classify import KINDS, compute_metrics, grid_search, load_classifier, save_classifier
from .errors import ConfigurationError, QrcError
from .qrc import FeatureTable, import_hardware_features, read_shot_records
from .resample import METHODS, ResamplePlan, resample

log = logging.getLogger("qrc_credit")


def _config(args) -> harness.ExperimentConfig:
    cfg = harness.ExperimentConfig.load(args.config) if args.config else harness.ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["output_dir"] = args.out
    if args.repeats is not None:
        changes["repeats"] = args.repeats
    if getattr(args, "csv", None):
        changes["data_csv"] = args.csv
    return cfg.with_(**changes) if changes else cfg


def _out(cfg) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print(obj) -> None:
    print(json.dumps(obj, indent=1, default=harness._jsonable))


def _parse_mode(text: str) -> tuple[str, int]:
    if text == "sv":
        return "qrc-sv", 0
    if text == "crc":
        return "crc", 0
    if text.startswith("shots:"):
        try:
            n = int(text.split(":", 1)[1])
        except ValueError:
            n = 0
        if n >= 1:
            return "qrc-shots", n
    raise ConfigurationError(f"--mode must be sv, crc or shots:N with N >= 1, got {text!r}")


def _partitions(cfg, features: FeatureTable) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    prepared = harness.prepare_data(cfg)
    return {p: (features.select(prepared.ids[p]).matrix(), prepared.arrays[p][1])
            for p in ("train", "validation", "test")}


# ---------------------------------------------------------------- subcommands


def cmd_ingest(args, cfg) -> int:
    cfg.check_files()
    out = _out(cfg)
    cleaned = data_mod.clean(data_mod.load_raw(cfg.data_csv))
    data_mod.save_records(cleaned, out / "CARDS_30000.csv")
    sizes = {}
    for name, frame in data_mod.nested_datasets(cleaned, cfg.seed).items():
        data_mod.save_records(frame, out / f"{name}.csv")
        sizes[name] = {"rows": len(frame), "defaults": int(frame[data_mod.LABEL].sum())}
    sp = data_mod.split(data_mod.nested_datasets(cleaned, cfg.seed)[cfg.dataset], cfg.fractions, cfg.seed)
    split_ids = {p: part[data_mod.ID].astype(int).tolist() for p, part in sp.partitions().items()}
    (out / "split.json").write_text(json.dumps({"dataset": cfg.dataset, "ids": split_ids}))
    _print(sizes)
    return 0


def cmd_preprocess(args, cfg) -> int:
    out = _out(cfg)
    prepared = harness.prepare_data(cfg)
    prepared.preprocess.save(out / "preprocess.json")
    table = harness.reservoir_features(cfg.with_(feature_source="preprocessed"), prepared, [])
    table.save(out / "features_preprocessed.csv")
    _print({"features": table.values.shape[2], "samples": len(table.sample_ids)})
    return 0


def cmd_reservoir(args, cfg) -> int:
    source, shots = _parse_mode(args.mode)
    rc = cfg.reservoir
    if args.encoding and args.encoding != rc.encoding:
        rc = rc.for_encoding(args.encoding, **{k: v for k, v in rc.to_dict().items()
                                               if k not in ("encoding", "delta_global_rad_per_us")})
    cfg = cfg.with_(feature_source=source, shots=shots, reservoir=rc)
    prepared = harness.limit_prepared(harness.prepare_data(cfg), args.limit)
    table = harness.reservoir_features(cfg, prepared, [])
    tag = args.mode.replace(":", "")
    path = _out(cfg) / f"features_{tag}_{rc.encoding}.csv"
    table.save(path)
    _print({"written": str(path), "samples": len(table.sample_ids), "shape": list(table.values.shape)})
    return 0


def cmd_export(args, cfg) -> int:
    if args.replicas is not None:
        cfg = cfg.with_(replicas=args.replicas)
    prepared = harness.limit_prepared(harness.prepare_data(cfg), args.limit)
    target = _out(cfg) / "programs"
    paths = harness.export_for_hardware(cfg, target, prepared=prepared)
    _print({"documents": len(paths), "directory": str(target)})
    return 0


def cmd_simulate_shots(args, cfg) -> int:
    frame = harness.synthesize_shot_records(args.programs, args.shots_per_replica,
                                            harness.substream_seed(cfg.seed, "synthetic-hardware"),
                                            cfg.reservoir.c6_rad_um6_per_us)
    path = _out(cfg) / "shots.csv"
    frame.to_csv(path, index=False)
    _print({"written": str(path), "shots": len(frame)})
    return 0


def cmd_import_shots(args, cfg) -> int:
    cfg = cfg.with_(feature_source="hardware", hardware_records=args.records)
    frame = read_shot_records(args.records)
    n_atoms = len(str(frame["bitstring"].iloc[0])) if len(frame) else 0
    ids = sorted(frame["sample_id"].astype(int).unique())
    table = import_hardware_features(frame, n_atoms, cfg.reservoir.n_timesteps, sample_ids=ids,
                                     pool=not args.per_replica)
    path = _out(cfg) / "features_hardware.csv"
    table.save(path)
    _print({"written": str(path), "samples": len(ids), "shots_min": table.meta.get("shots_min")})
    return 0


def cmd_resample(args, cfg) -> int:
    features = FeatureTable.load(args.features)
    parts = _partitions(cfg, features)
    plan = ResamplePlan(args.method, seed=harness.substream_seed(cfg.seed, "resample", args.method))
    X, y = resample(*parts["train"], plan)
    path = _out(cfg) / f"train_{args.method}.npz"
    np.savez(path, X=X, y=y)
    _print({"written": str(path), "rows": len(y), "class_counts": np.bincount(y.astype(int)).tolist()})
    return 0


def cmd_train(args, cfg) -> int:
    features = FeatureTable.load(args.features)
    parts = _partitions(cfg, features)
    plan = ResamplePlan(args.resampler, seed=harness.substream_seed(cfg.seed, "resample", args.resampler))
    train_xy = resample(*parts["train"], plan)
    res = grid_search(args.classifier, train_xy, parts["validation"],
                      seed=harness.substream_seed(cfg.seed, "classify", args.resampler, args.classifier))
    stem = f"model_{Path(args.features).stem}_{args.resampler}_{args.classifier}"
    out = _out(cfg)
    save_classifier(res.model, out / f"{stem}.npz")
    summary = {"classifier": args.classifier, "resampler": args.resampler,
               "selected": res.best.hyperparameters, "validation_f1": res.best.validation.f1,
               "candidates": [{"hyperparameters": c.hyperparameters, "f1": c.validation.f1,
                               "train_time_s": c.train_time_s} for c in res.candidates]}
    (out / f"{stem}.json").write_text(json.dumps(summary, indent=1))
    _print(summary)
    return 0


def cmd_evaluate(args, cfg) -> int:
    model = load_classifier(args.model)
    features = FeatureTable.load(args.features)
    X, y = _partitions(cfg, features)[args.partition]
    metrics = compute_metrics(model.predict(X), y).to_dict()
    _print({"model": str(args.model), "partition": args.partition, **metrics})
    return 0


def cmd_shot_study(args, cfg) -> int:
    grid = [int(s) for s in args.shots.split(",") if s.strip()] if args.shots else []
    cfg = cfg.with_(resamplers=tuple(args.resamplers.split(",")) if args.resamplers else cfg.resamplers)
    prepared = harness.limit_prepared(harness.prepare_data(cfg), args.limit) if grid else None
    table = harness.shot_study(cfg, grid, prepared=prepared) if grid else harness.shot_study(cfg, [])
    path = _out(cfg) / "shot_study.csv"
    table.to_csv(path, index=False, float_format="%.10g")
    print(table.to_string(index=False))
    return 0


def cmd_correlate(args, cfg) -> int:
    result = harness.correlate_features(FeatureTable.load(args.a), FeatureTable.load(args.b))
    path = _out(cfg) / "correlation.csv"
    result.to_frame().to_csv(path, index=False, float_format="%.10g")
    _print({"per_timestep": result.per_timestep, "undefined": result.undefined, "mean": result.mean})
    return 0


def cmd_report(args, cfg) -> int:
    results = pd.read_csv(args.results or Path(cfg.output_dir) / "results.csv", keep_default_na=True)
    summary = harness.report(results)
    path = _out(cfg) / "summary.csv"
    summary.to_csv(path, index=False, float_format="%.6g")
    print(summary.to_string(index=False))
    return 0


def cmd_run(args, cfg) -> int:
    result = harness.run_experiment(cfg)
    errors = int((result.results["error"].fillna("") != "").sum())
    _print({"rows": len(result.results), "errors": errors, "stages": result.stages,
            "results": str(Path(cfg.output_dir) / "results.csv")})
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        # subcommands repeat the global flags with suppressed defaults so that
        # flags given before the subcommand are not overwritten
        common = argparse.ArgumentParser(add_help=False)
        common.add_argument("--config", default=default, help="experiment INI file")
        common.add_argument("--seed", type=int, default=default, help="master seed (overrides the config)")
        common.add_argument("--out", default=default, help="output directory (overrides the config)")
        common.add_argument("--repeats", type=int, default=default, help="DNN repeats (default 5)")
        common.add_argument("-v", "--verbose", action="store_true", default=default or False)
        return common

    parser = argparse.ArgumentParser(prog="qrc-credit", description=__doc__.splitlines()[0],
                                     parents=[global_flags(None)])
    common = global_flags(argparse.SUPPRESS)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_):
        p = sub.add_parser(name, help=help_, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "clean the raw CSV and write the nested datasets")
    p.add_argument("--csv", help="raw credit-card CSV (overrides data_csv)")
    p = add("preprocess", cmd_preprocess, "fit preprocessing and write the 12-feature table")
    p.add_argument("--csv")
    p = add("reservoir", cmd_reservoir, "compute reservoir features")
    p.add_argument("--csv")
    p.add_argument("--encoding", choices=("position", "detuning"))
    p.add_argument("--mode", default="sv", help="sv, crc or shots:N")
    p.add_argument("--limit", type=int, help="only the first N samples of each partition")
    p = add("export-qpu", cmd_export, "write hardware program documents")
    p.add_argument("--csv")
    p.add_argument("--replicas", type=int)
    p.add_argument("--limit", type=int)
    p = add("simulate-shots", cmd_simulate_shots, "emulate exported programs into shot records")
    p.add_argument("--programs", required=True)
    p.add_argument("--shots-per-replica", type=int, default=40)
    p = add("import-shots", cmd_import_shots, "rebuild features from shot records")
    p.add_argument("--records", required=True)
    p.add_argument("--per-replica", action="store_true", help="average per-replica estimates instead of pooling")
    p = add("resample", cmd_resample, "rebalance the training partition")
    p.add_argument("--csv")
    p.add_argument("--features", required=True)
    p.add_argument("--method", choices=METHODS, required=True)
    p = add("train", cmd_train, "grid-search one classifier")
    p.add_argument("--csv")
    p.add_argument("--features", required=True)
    p.add_argument("--classifier", choices=KINDS, required=True)
    p.add_argument("--resampler", choices=METHODS, default="none")
    p = add("evaluate", cmd_evaluate, "score a saved classifier")
    p.add_argument("--csv")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--partition", choices=("train", "validation", "test"), default="test")
    p = add("shot-study", cmd_shot_study, "F1 versus shot count")
    p.add_argument("--csv")
    p.add_argument("--shots", default="", help="comma-separated shot counts")
    p.add_argument("--resamplers", help="comma-separated resamplers")
    p.add_argument("--limit", type=int)
    p = add("correlate", cmd_correlate, "per-timestep Pearson correlation of two feature files")
    p.add_argument("a")
    p.add_argument("b")
    p = add("report", cmd_report, "summarise a results table")
    p.add_argument("--results")
    p = add("run", cmd_run, "full experiment matrix from the config")
    p.add_argument("--csv")
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        return args.func(args, cfg)
    except QrcError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
