"""Acceptance criteria, one test per criterion.

Each test runs the criterion at its stated tolerance and records a PASS/FAIL
line that is printed in the terminal summary. Criteria that need the real
credit-card file read its path from the ``QRC_CREDIT_CSV`` environment
variable; without it they fail with a BLOCKED reason instead of being
skipped, after running whatever part of the check does not depend on the
file. Criterion 10 also needs reservoir features for all 29601 cleaned
samples; they are computed once and cached next to the CSV (or at
``QRC_CREDIT_FEATURES`` when set).

Run alone with ``pytest tests/test_acceptance.py -v``.
"""

from __future__ import annotations

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest

from qrc_credit import data, harness
from qrc_credit.classify import (
    GRIDS, grid_search, logistic_objective, sample_weights, train_logistic, train_svm_linear,
)
from qrc_credit.crc import crc_evolve, crc_features
from qrc_credit.dnn import cross_entropy, dnn_grid_search, forward, init_mlp, loss_and_gradients
from qrc_credit.encoding import EncodedSample, PulseProgram, ReservoirConfig, Waveform, encode, reservoir_program
from qrc_credit.preprocess import apply_maxabs, fit_maxabs, fit_pca, cluster_features, one_hot_encode
from qrc_credit.qrc import (
    FeatureTable, evolve, exact_features, import_hardware_features, n_features, reservoir_table,
    run_sample, sample_shots, bitstrings_to_features,
)
from qrc_credit.resample import ResamplePlan, cluster_centroids, ksmote, smote

from oracles import dense_evolve, dense_features, subgradient_oracle

pytestmark = pytest.mark.acceptance

CSV = os.environ.get("QRC_CREDIT_CSV", "")
BLOCKED = "BLOCKED: credit-card CSV unavailable (set QRC_CREDIT_CSV)"
C6 = ReservoirConfig().c6_rad_um6_per_us


def _have_csv() -> bool:
    return bool(CSV) and Path(CSV).exists()


def _finish(verdict, number, name, passed, detail):
    verdict(number, name, passed, detail)
    if not passed:
        pytest.fail(f"criterion {number}: {detail}")


# ---------------------------------------------------------------- 1


TABLE_SPLITS = {"train": (20720, 4623), "validation": (4440, 991), "test": (4441, 991)}


def test_c01_dataset_regression(verdict):
    # data-independent part: the published composition splits into the published counts
    surrogate = data.split(data.labeled_with_counts(29601, 6605, seed=0), seed=0).sizes()
    arithmetic_ok = surrogate == TABLE_SPLITS
    if not _have_csv():
        _finish(verdict, 1, "dataset regression", False,
                f"{BLOCKED}; split arithmetic on the published class composition "
                f"{'matches' if arithmetic_ok else 'DIFFERS'}: {surrogate}")
    t0 = time.perf_counter()
    raw = data.load_raw(CSV)
    cleaned = data.clean(raw)
    sizes = data.split(cleaned, seed=0).sizes()
    elapsed = time.perf_counter() - t0
    got = (len(raw), len(cleaned), int(cleaned[data.LABEL].sum()), sizes)
    ok = got == (30000, 29601, 6605, TABLE_SPLITS) and elapsed < 10
    _finish(verdict, 1, "dataset regression", ok, f"rows/cleaned/class1/splits = {got}, {elapsed:.1f} s")


# ---------------------------------------------------------------- 2

TABLE2 = [
    {"PAY_3", "PAY_4"}, {"PAY_5", "PAY_6"}, {f"PAY_AMT{k}" for k in range(1, 7)}, {"MARRIAGE_1"},
    {f"BILL_AMT{k}" for k in range(1, 7)}, {"MARRIAGE_2"}, {"PAY_1"}, {"LIMIT_BAL"}, {"AGE"},
    {"EDUCATION"}, {"PAY_2"}, {"SEX_1"},
]


def test_c02_preprocess_regression(verdict):
    if not _have_csv():
        _finish(verdict, 2, "preprocess regression", False, BLOCKED)
    t0 = time.perf_counter()
    cleaned = data.clean(data.load_raw(CSV))
    encoded = one_hot_encode(cleaned)
    scaled = apply_maxabs(fit_maxabs(encoded), encoded)
    pca = fit_pca(scaled)
    clustering = cluster_features(pca)
    elapsed = time.perf_counter() - t0
    groups = [set(m) for m in clustering.members().values()]
    cumulative = float(pca.explained_variance_ratio.sum())
    bill = {f"BILL_AMT{k}" for k in range(1, 7)}
    pay_amt = {f"PAY_AMT{k}" for k in range(1, 7)}
    hard = (pca.n_components == 11 and 0.98 <= cumulative <= 1.0 and clustering.n_clusters == 12
            and bill in groups and pay_amt in groups and elapsed < 60)
    full = sorted(map(sorted, groups)) == sorted(map(sorted, TABLE2))
    detail = (f"components={pca.n_components}, cumulative={cumulative:.4f}, clusters={clustering.n_clusters}, "
              f"full grouping match={full}, {elapsed:.1f} s")
    _finish(verdict, 2, "preprocess regression", hard, detail)


# ---------------------------------------------------------------- 3


def test_c03_feature_dimensionality(verdict):
    x = np.random.default_rng(0).uniform(-1, 1, 12)
    det = run_sample(x, ReservoirConfig.for_encoding("detuning")).flat().size
    pos = run_sample(x, ReservoirConfig.for_encoding("position")).flat().size
    ok = det == 390 == n_features(12, 5) and pos == 455 == n_features(13, 5)
    _finish(verdict, 3, "feature dimensionality", ok, f"detuning={det}, position={pos}")


# ---------------------------------------------------------------- 4


def _random_config(rng):
    n = int(rng.integers(1, 7))
    encoding = str(rng.choice(["detuning", "position"]))
    width = n if encoding == "detuning" else max(n - 1, 1)
    cfg = ReservoirConfig.for_encoding(
        encoding,
        r0_um=float(rng.uniform(6.0, 12.0)),
        displacement_scale=float(rng.uniform(0.0, 1.0)),
        omega_max_rad_per_us=float(rng.uniform(1.0, 4 * math.pi)),
        delta_global_rad_per_us=float(rng.uniform(-2 * math.pi, 2 * math.pi)),
        delta_local_rad_per_us=float(rng.uniform(0, 3 * math.pi)),
        timestep_us=float(rng.uniform(0.2, 0.6)),
        n_timesteps=int(rng.integers(1, 6)),
    )
    return cfg, encode(rng.uniform(-1, 1, width), cfg)


def test_c04_emulator_matches_dense_oracle(verdict):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(20):
        cfg, sample = _random_config(rng)
        program = reservoir_program(sample, cfg)
        got = exact_features(evolve(sample, program, cfg)).values
        want = np.array([dense_features(psi, sample.n_atoms)
                         for psi in dense_evolve(sample, program, C6, list(program.timestep_times))])
        worst = max(worst, float(np.max(np.abs(got - want))))
    elapsed = time.perf_counter() - t0
    _finish(verdict, 4, "emulator oracle equivalence", worst < 1e-8 and elapsed < 120,
            f"max entry error {worst:.2e} over 20 configs, {elapsed:.1f} s")


# ---------------------------------------------------------------- 5


def _constant_program(n, omega, duration, times):
    return PulseProgram(Waveform.constant(omega, duration), Waveform.constant(0.0, duration),
                        Waveform.constant(0.0, duration), Waveform.constant(0.0, duration),
                        np.zeros(n), tuple(times))


def test_c05_physics_invariants(verdict):
    details, ok = [], True
    cfg = ReservoirConfig.for_encoding("position")
    x = np.random.default_rng(5).uniform(-1, 1, 12)
    sample = encode(x, cfg)
    program = reservoir_program(sample, cfg, timestep_times=np.linspace(0.25, 2.5, 10))
    snaps = evolve(sample, program, cfg)
    norm_dev = max(abs(s.norm - 1.0) for s in snaps)
    ok &= sample.n_atoms == 13 and norm_dev < 1e-6
    details.append(f"n=13 norm deviation {norm_dev:.1e}")

    omega = 2 * math.pi
    times = np.linspace(0.1, 2.0, 10)
    single = EncodedSample(np.zeros(1), np.zeros(1), "detuning")
    z = exact_features(evolve(single, _constant_program(1, omega, 2.0, times), ReservoirConfig())).values[:, 0]
    rabi_err = float(np.max(np.abs(z - np.cos(omega * times))))
    ok &= rabi_err < 1e-6
    details.append(f"single-atom <Z> error {rabi_err:.1e}")

    spins = crc_evolve(sample, reservoir_program(sample, cfg), cfg)
    spin_dev = max(float(np.max(np.abs(s.norms() - 1.0))) for s in spins)
    ok &= spin_dev < 1e-8
    details.append(f"spin norm deviation {spin_dev:.1e}")

    free = ReservoirConfig.for_encoding("detuning", r0_um=1000.0)
    s_free = encode(np.random.default_rng(6).uniform(-1, 1, 6), free)
    p_free = reservoir_program(s_free, free)
    quantum = exact_features(evolve(s_free, p_free, free)).values[:, :6]
    classical = crc_features(crc_evolve(s_free, p_free, free)).values[:, :6]
    one_body = float(np.max(np.abs(quantum - classical)))
    ok &= one_body < 1e-4
    details.append(f"non-interacting CRC vs QRC one-body {one_body:.1e}")
    _finish(verdict, 5, "physics invariants", bool(ok), "; ".join(details))


# ---------------------------------------------------------------- 6


def test_c06_shot_statistics(verdict):
    cfg = ReservoirConfig()
    rng = np.random.default_rng(66)
    shots = 1000
    inside = total = 0
    exact_rows = []
    for k in range(20):
        sample = encode(rng.uniform(-1, 1, 12), cfg)
        snaps = evolve(sample, reservoir_program(sample, cfg), cfg)
        exact = exact_features(snaps).values
        noisy = sample_shots(snaps, shots, seed=17, sample_index=k).values
        bound = 5.0 * np.sqrt(np.clip(1.0 - exact**2, 0.0, None) / shots)
        inside += int(np.sum(np.abs(noisy - exact) <= bound))
        total += exact.size
        exact_rows.append(exact)
    table = FeatureTable(np.arange(20), np.stack(exact_rows), 12, "exact")
    corr = harness.correlate_features(table, table)
    fraction = inside / total
    ok = fraction >= 0.99 and corr.per_timestep == [1.0] * 5 and corr.mean == 1.0
    _finish(verdict, 6, "shot statistics", ok,
            f"{fraction:.4%} of {total} entries inside the 5-sigma band; self-correlation {corr.per_timestep}")


# ---------------------------------------------------------------- 7

TABLES = {  # dataset: (smote, ksmote class 1, cc) as (class1, class0)
    "CARDS_30000": {"none": (4623, 16097), "smote": (16097, 16097), "ksmote": (16101, 16097), "cc": (4623, 4623)},
    "CARDS_2500": {"none": (402, 1397), "smote": (1397, 1397), "ksmote": (1400, 1397), "cc": (402, 402)},
    "CARDS_1000": {"none": (156, 544), "smote": (544, 544), "ksmote": (547, 544), "cc": (156, 156)},
}


def _convex_violation(X, synth, pairs):
    """Largest distance of a synthetic row from the segment between its two parents."""
    a, b = X[pairs[:, 0]], X[pairs[:, 1]]
    d = b - a
    denom = np.einsum("ij,ij->i", d, d)
    u = np.where(denom > 0, np.einsum("ij,ij->i", synth - a, d) / np.where(denom > 0, denom, 1.0), 0.0)
    outside = np.maximum(-u, 0.0) + np.maximum(u - 1.0, 0.0)
    residual = np.linalg.norm(synth - (a + np.clip(u, 0, 1)[:, None] * d), axis=1)
    return float(max(outside.max(initial=0.0), residual.max(initial=0.0)))


def test_c07_resampling_regression(verdict):
    if _have_csv():
        cleaned = data.clean(data.load_raw(CSV))
        source = "real records"
    else:
        cleaned = data.labeled_with_counts(29601, 6605, seed=0)
        source = "synthetic records with the published class composition"
    from qrc_credit.preprocess import fit_preprocessing, preprocessed_arrays

    state = fit_preprocessing(cleaned)
    nested = data.nested_datasets(cleaned, seed=0)
    ok, notes, worst_convex = True, [], 0.0
    for name, table in TABLES.items():
        train = data.split(nested[name], seed=0).train
        X, y = preprocessed_arrays(state, train)
        counts = {"none": (int((y == 1).sum()), int((y == 0).sum()))}
        plan = ResamplePlan(seed=0)
        Xs, ys, prov = smote(X, y, plan, provenance=True)
        counts["smote"] = (int((ys == 1).sum()), int((ys == 0).sum()))
        worst_convex = max(worst_convex, _convex_violation(X, Xs[len(X):], prov))
        Xk, yk, provk = ksmote(X, y, plan, provenance=True)
        counts["ksmote"] = (int((yk == 1).sum()), int((yk == 0).sum()))
        worst_convex = max(worst_convex, _convex_violation(X, Xk[len(X):], provk))
        _, yc = cluster_centroids(X, y, plan)
        counts["cc"] = (int((yc == 1).sum()), int((yc == 0).sum()))
        for method in ("none", "smote", "cc"):
            ok &= counts[method] == table[method]
        ok &= abs(counts["ksmote"][0] - table["ksmote"][0]) <= 5 and counts["ksmote"][1] == table["ksmote"][1]
        notes.append(f"{name} {counts}")
    ok &= worst_convex <= 1e-9
    _finish(verdict, 7, "resampling regression", bool(ok),
            f"{source}; convex check max {worst_convex:.1e}; " + "; ".join(notes))


# ---------------------------------------------------------------- 8


def _logistic_gradient(w, b, X, y, sw, C):
    """Hand-written gradient of sum_i s_i log(1 + exp(-t_i z_i)) + |w|^2 / (2C)."""
    t = np.where(y == 1, 1.0, -1.0)
    z = X @ w + b
    r = -sw * t / (1.0 + np.exp(t * z))
    return np.concatenate([X.T @ r + w / C, [r.sum()]])


def test_c08_classifier_correctness(verdict):
    details, ok = [], True
    records = data.clean(data.synthetic_records(4000, seed=8))
    from qrc_credit.preprocess import fit_preprocessing, preprocessed_arrays

    X, y = preprocessed_arrays(fit_preprocessing(records), records)
    worst_grad = 0.0
    for C in [g["C"] for g in GRIDS["logistic"]]:
        m = train_logistic(X, y, C)
        g_hand = _logistic_gradient(m.params["w"], m.params["b"], X, y, sample_weights(y), C)
        _, g_pkg = logistic_objective(m.params["w"], m.params["b"], X, np.where(y == 1, 1.0, -1.0),
                                      sample_weights(y), C)
        worst_grad = max(worst_grad, float(np.linalg.norm(g_hand)), float(np.linalg.norm(g_pkg)))
    ok &= worst_grad < 1e-6
    details.append(f"logistic max gradient norm {worst_grad:.1e}")

    worst_svm = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        Xs = rng.normal(size=(50, 5))
        ys = (Xs @ rng.normal(size=5) + 0.5 * rng.normal(size=50) > 0).astype(int)
        for C in (0.1, 1.0, 10.0):
            m = train_svm_linear(Xs, ys, C, tol=1e-8, max_passes=200_000)
            oracle = subgradient_oracle(Xs, ys, C, sample_weights(ys), iters=60_000)
            worst_svm = max(worst_svm, abs(m.info["primal"] - oracle))
    ok &= worst_svm < 1e-2
    details.append(f"SVM max |primal - oracle| {worst_svm:.1e}")

    rng = np.random.default_rng(3)
    model = init_mlp(12, seed=4, dropout=0.0)
    Xd = rng.normal(size=(8, 12))
    yd = rng.integers(0, 2, 8)
    _, grads = loss_and_gradients(model, Xd, yd)
    worst_fd, h = 0.0, 1e-6
    for p, g in zip(model.parameters(), grads):
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(flat.size, 30), replace=False)
        num = np.empty(len(picks))
        for k, idx in enumerate(picks):
            old = flat[idx]
            flat[idx] = old + h
            up = cross_entropy(forward(model, Xd), yd)
            flat[idx] = old - h
            down = cross_entropy(forward(model, Xd), yd)
            flat[idx] = old
            num[k] = (up - down) / (2 * h)
        ana = g.reshape(-1)[picks]
        worst_fd = max(worst_fd, float(np.linalg.norm(num - ana) / max(np.linalg.norm(num), np.linalg.norm(ana))))
    ok &= worst_fd < 1e-4
    details.append(f"DNN finite-difference relative error {worst_fd:.1e}")
    _finish(verdict, 8, "classifier correctness", bool(ok), "; ".join(details))


# ---------------------------------------------------------------- 9


def test_c09_desk_scale_benchmark(verdict, tmp_path):
    if not _have_csv():
        _finish(verdict, 9, "desk-scale benchmark", False, BLOCKED)
    t0 = time.perf_counter()
    cfg = harness.ExperimentConfig(dataset="CARDS_1000", data_csv=CSV, feature_source="qrc-sv",
                                   output_dir=str(tmp_path), reservoir=ReservoirConfig.for_encoding("detuning"))
    frame = harness.run_experiment(cfg).results
    elapsed = time.perf_counter() - t0
    ok_rows = frame[frame["error"].fillna("") == ""]
    qrc_best = ok_rows[ok_rows["classifier"] != "dnn"]["f1"].max()
    dnn = ok_rows[ok_rows["classifier"] == "dnn"].groupby("resampler")["f1"].mean()
    dnn_best = float(dnn.max())
    ok = abs(qrc_best - dnn_best) <= 0.10 and elapsed < 1800
    _finish(verdict, 9, "desk-scale benchmark", ok,
            f"best QRC F1 {qrc_best:.3f}, best DNN mean F1 {dnn_best:.3f}, {elapsed / 60:.1f} min")


# ---------------------------------------------------------------- 10


def _cached_reservoir(cfg, prepared) -> FeatureTable:
    cache = Path(os.environ.get("QRC_CREDIT_FEATURES", Path(CSV).with_suffix(".qrc-sv-detuning.csv")))
    ids, X = harness.all_features(prepared)
    if cache.exists():
        table = FeatureTable.load(cache)
        if table.meta.get("config_hash") == cfg.reservoir.hash():
            return table
    table = reservoir_table(X, ids, cfg.reservoir, mode="exact", n_jobs=os.cpu_count() or 1)
    table.save(cache)
    return table


def test_c10_training_time_ordering(verdict):
    if not _have_csv():
        _finish(verdict, 10, "training-time ordering", False,
                f"{BLOCKED}; also needs reservoir features for all 29601 samples")
    cfg = harness.ExperimentConfig(dataset="CARDS_30000", data_csv=CSV, feature_source="qrc-sv")
    prepared = harness.prepare_data(cfg)
    table = _cached_reservoir(cfg, prepared)
    parts = {p: (table.select(prepared.ids[p]).matrix(), prepared.arrays[p][1])
             for p in ("train", "validation")}
    # reported time: wall-clock summed over the grid-search fits, as in the results table
    seconds = {kind: grid_search(kind, parts["train"], parts["validation"]).train_time_s
               for kind in ("knn", "gnb", "logistic", "perceptron", "svm_linear")}
    seconds["dnn"] = dnn_grid_search(prepared.arrays["train"], prepared.arrays["validation"]).train_time_s
    fast = all(seconds[k] * 5 <= seconds["dnn"] for k in ("knn", "gnb", "logistic", "perceptron"))
    slowest = max(seconds, key=seconds.get) == "svm_linear"
    detail = ", ".join(f"{k} {v:.2f} s" for k, v in seconds.items())
    _finish(verdict, 10, "training-time ordering", fast and slowest, f"training seconds: {detail}")


# ---------------------------------------------------------------- 11


def test_c11_hardware_round_trip(verdict, tmp_path):
    if _have_csv():
        cleaned = data.clean(data.load_raw(CSV))
        source = "real records"
    else:
        cleaned = data.clean(data.synthetic_records(3000, seed=11))
        source = "synthetic records"
    cfg = harness.ExperimentConfig(dataset="CARDS_1000", replicas=6,
                                   reservoir=ReservoirConfig.for_encoding("detuning"))
    prepared = harness.prepare_data(cfg, cleaned)
    ids, X = harness.all_features(prepared)
    ids, X = ids[:20], X[:20]
    harness.export_for_hardware(cfg, tmp_path / "programs", prepared=prepared, sample_ids=ids)
    shots = harness.synthesize_shot_records(tmp_path / "programs", shots_per_replica=40, seed=2024)
    per_step = shots.groupby(["sample_id", "timestep"]).size()
    shots.to_csv(tmp_path / "shots.csv", index=False)
    n_atoms = X.shape[1]
    imported = import_hardware_features(tmp_path / "shots.csv", n_atoms, 5, sample_ids=ids)

    # reproduction: imported features equal the shot estimator applied to the same bitstrings
    worst = 0.0
    for s, sid in enumerate(ids):
        for k in range(1, 6):
            rows = shots[(shots["sample_id"] == sid) & (shots["timestep"] == k)]["bitstring"]
            bits = np.array([[int(c) for c in b] for b in rows])
            worst = max(worst, float(np.max(np.abs(imported.values[s, k - 1] - bitstrings_to_features(bits)))))
    exact = reservoir_table(X, ids, cfg.reservoir)
    corr = harness.correlate_features(exact, imported)
    ok = (per_step == 240).all() and len(per_step) == 100 and worst < 1e-12 and min(corr.per_timestep) > 0.9
    _finish(verdict, 11, "hardware-path round trip", bool(ok),
            f"{source}; 20 samples x 5 timesteps x 240 shots; reproduction error {worst:.1e}; "
            f"per-timestep correlation {[round(c, 4) for c in corr.per_timestep]}")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-v"]))
