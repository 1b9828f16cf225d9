from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from qrc_credit.encoding import (
    EncodedSample, PulseProgram, ReservoirConfig, Waveform, build_waveform, encode, reservoir_program,
)
from qrc_credit.errors import CompletenessError, ConfigurationError, FormatError, NumericalError
from qrc_credit.qrc import (
    FeatureTable, Integrator, QuantumState, evolve, exact_features, feature_names, hamiltonian_apply,
    import_hardware_features, interaction_diagonal, n_features, run_sample, sample_shots,
)

from oracles import dense_evolve, dense_features, dense_hamiltonian

C6 = ReservoirConfig().c6_rad_um6_per_us


def constant_program(n, omega, delta, duration, times, phase=0.0, local=None):
    local = np.zeros(n) if local is None else np.asarray(local, dtype=float)
    return PulseProgram(
        rabi=Waveform.constant(omega, duration),
        phase=Waveform.constant(phase, duration),
        global_detuning=Waveform.constant(delta, duration),
        local_detuning=Waveform.constant(1.0, duration),
        local_scale=local,
        timestep_times=tuple(times),
    )


def chain(n, pitch=10.0, scale=None):
    scale = np.zeros(n) if scale is None else np.asarray(scale, dtype=float)
    return EncodedSample(pitch * np.arange(n, dtype=float), scale, "detuning")


def random_case(rng):
    n = int(rng.integers(1, 7))
    encoding = str(rng.choice(["detuning", "position"]))
    width = n if encoding == "detuning" else max(n - 1, 1)
    cfg = ReservoirConfig.for_encoding(
        encoding,
        r0_um=float(rng.uniform(6.0, 12.0)),
        omega_max_rad_per_us=float(rng.uniform(1.0, 4 * math.pi)),
        delta_global_rad_per_us=float(rng.uniform(-2 * math.pi, 2 * math.pi)),
        delta_local_rad_per_us=float(rng.uniform(0, 3 * math.pi)),
        timestep_us=float(rng.uniform(0.2, 0.6)),
        n_timesteps=int(rng.integers(1, 4)),
    )
    x = rng.uniform(-1, 1, width)
    return cfg, encode(x, cfg)


# ---------------------------------------------------------------- hamiltonian


def test_hamiltonian_zero_drive_on_ground_is_zero():
    sample = chain(3)
    program = constant_program(3, 0.0, 0.0, 1.0, [1.0])
    out = hamiltonian_apply(QuantumState.ground(3), 0.3, sample, program, ReservoirConfig())
    assert np.all(out == 0)


def test_hamiltonian_pair_interaction_on_11():
    sample = chain(2)
    program = constant_program(2, 0.0, 0.0, 1.0, [1.0])
    psi = np.zeros(4, dtype=complex)
    psi[3] = 1.0
    out = hamiltonian_apply(psi, 0.1, sample, program, ReservoirConfig())
    dense = -1j * dense_hamiltonian(sample.positions, 0.0, 0.0, np.zeros(2), C6) @ psi
    assert out[3] == pytest.approx(-1j * C6 / 1e6, rel=1e-14)
    np.testing.assert_allclose(out, dense, atol=1e-9)


@pytest.mark.parametrize("n", range(1, 7))
def test_hamiltonian_matches_dense_matrix(n):
    rng = np.random.default_rng(n)
    pos = np.cumsum(rng.uniform(5, 15, n))
    sample = EncodedSample(pos, rng.uniform(-1, 1, n), "detuning")
    program = constant_program(n, 3.1, 1.7, 1.0, [1.0], phase=0.8, local=sample.local_scale)
    psi = rng.normal(size=2**n) + 1j * rng.normal(size=2**n)
    got = hamiltonian_apply(psi, 0.5, sample, program, ReservoirConfig())
    h = dense_hamiltonian(pos, 3.1, 0.8, program.detunings(0.5), C6)
    want = -1j * h @ psi
    assert np.max(np.abs(got - want)) <= 1e-12 * max(1.0, np.max(np.abs(want)))


def test_interaction_diagonal_counts_all_pairs():
    pos = np.array([0.0, 10.0, 20.0])
    d = interaction_diagonal(pos, C6)
    assert d[0b111] == pytest.approx(C6 * (2 / 1e6 + 1 / 20.0**6))


# ---------------------------------------------------------------- evolve


@pytest.mark.parametrize("method", ["expo", "rk4"])
def test_single_atom_rabi_oscillation(method):
    omega = 2 * math.pi
    times = np.linspace(0.05, 1.0, 10)
    program = constant_program(1, omega, 0.0, 1.0, times)
    states = evolve(chain(1), program, ReservoirConfig(), Integrator(method=method))
    z = exact_features(states).values[:, 0]
    np.testing.assert_allclose(z, np.cos(omega * times), atol=1e-6)


def test_quarter_period_gives_zero():
    program = constant_program(1, 2 * math.pi, 0.0, 0.5, [0.25])
    z = exact_features(evolve(chain(1), program, ReservoirConfig())).values[0, 0]
    assert abs(z) < 1e-6


def test_no_drive_keeps_ground_state():
    n = 4
    program = constant_program(n, 0.0, 3.0, 1.0, [0.5, 1.0], local=[1, -1, 0.5, 0])
    states = evolve(chain(n), program, ReservoirConfig())
    for s in states:
        assert abs(abs(s.amplitudes[0]) - 1) < 1e-12
    assert np.all(exact_features(states).values == 1.0)


@pytest.mark.parametrize("method", ["expo", "rk4"])
def test_four_atoms_match_dense_propagator(method):
    rng = np.random.default_rng(4)
    cfg = ReservoirConfig(timestep_us=0.3, n_timesteps=3)
    sample = encode(rng.uniform(-1, 1, 4), cfg)
    program = reservoir_program(sample, cfg)
    got = evolve(sample, program, cfg, Integrator(method=method))
    want = dense_evolve(sample, program, C6, list(program.timestep_times))
    for s, w in zip(got, want):
        assert np.max(np.abs(s.amplitudes - w)) < 1e-8


def test_time_dependent_phase_matches_dense():
    n = 3
    sample = chain(n, 8.0, [0.3, -0.5, 1.0])
    program = PulseProgram(
        rabi=build_waveform(5.0, 0.6, 0.1),
        phase=Waveform((0.0, 0.6), (0.0, 2.0)),
        global_detuning=build_waveform(1.5, 0.6, 0.1),
        local_detuning=build_waveform(2.0, 0.6, 0.1),
        local_scale=sample.local_scale,
        timestep_times=(0.2, 0.6),
    )
    got = evolve(sample, program, ReservoirConfig())
    want = dense_evolve(sample, program, C6, [0.2, 0.6])
    for s, w in zip(got, want):
        assert np.max(np.abs(s.amplitudes - w)) < 1e-8


def test_halving_convergence_contract():
    cfg = ReservoirConfig()
    sample = encode(np.linspace(-1, 1, 12), cfg)
    program = reservoir_program(sample, cfg)
    integ = Integrator()
    a = evolve(sample, program, cfg, integ)
    b = evolve(sample, program, cfg, Integrator(max_step=integ.step() / 2))
    assert max(np.max(np.abs(x.amplitudes - y.amplitudes)) for x, y in zip(a, b)) < 1e-8


def test_verify_raises_when_tolerance_unreachable():
    cfg = ReservoirConfig(timestep_us=0.2, n_timesteps=1)
    sample = encode(np.zeros(3), cfg)
    program = reservoir_program(sample, cfg)
    with pytest.raises(NumericalError):
        evolve(sample, program, cfg, Integrator(method="rk4", max_step=0.02, min_step=0.004, tol=1e-30, verify=True))


def test_timestep_beyond_duration_rejected():
    program = constant_program(1, 1.0, 0.0, 1.0, [1.5])
    with pytest.raises(ConfigurationError):
        evolve(chain(1), program, ReservoirConfig())


def test_norm_conserved_thirteen_atoms():
    cfg = ReservoirConfig.for_encoding("position")
    x = np.random.default_rng(13).uniform(-1, 1, 12)
    sample = encode(x, cfg)
    states = evolve(sample, reservoir_program(sample, cfg), cfg)
    assert sample.n_atoms == 13
    assert max(abs(s.norm - 1.0) for s in states) < 1e-6


# ---------------------------------------------------------------- features


def test_feature_dimensionality():
    x = np.random.default_rng(0).uniform(-1, 1, 12)
    det = run_sample(x, ReservoirConfig.for_encoding("detuning"))
    pos = run_sample(x, ReservoirConfig.for_encoding("position"))
    assert det.flat().size == 390 == n_features(12, 5)
    assert pos.flat().size == 455 == n_features(13, 5)
    assert det.names[:2] == ["z_0", "z_1"] and det.names[12] == "zz_0_1" and det.names[-1] == "zz_10_11"


def test_ground_snapshot_features_are_one():
    f = exact_features([QuantumState.ground(5)])
    assert f.values.shape == (1, 15)
    assert np.all(f.values == 1.0)


@pytest.mark.parametrize("case", range(20))
def test_features_match_dense_oracle(case):
    rng = np.random.default_rng(100 + case)
    cfg, sample = random_case(rng)
    program = reservoir_program(sample, cfg)
    got = exact_features(evolve(sample, program, cfg)).values
    want = np.array([dense_features(psi, sample.n_atoms)
                     for psi in dense_evolve(sample, program, C6, list(program.timestep_times))])
    assert np.max(np.abs(got - want)) < 1e-8


@settings(max_examples=15, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**31 - 1))
def test_permutation_covariance(n, seed):
    rng = np.random.default_rng(seed)
    pos = np.cumsum(rng.uniform(6, 12, n))
    scale = rng.uniform(-1, 1, n)
    perm = rng.permutation(n)
    times = [0.2, 0.4]
    a = EncodedSample(pos, scale, "detuning")
    # same geometry, atoms relabelled: atom k of b is atom perm[k] of a
    b = EncodedSample(pos[perm], scale[perm], "detuning")
    pa = constant_program(n, 4.0, 1.0, 0.4, times, local=scale)
    pb = constant_program(n, 4.0, 1.0, 0.4, times, local=scale[perm])
    fa = exact_features(evolve(a, pa, ReservoirConfig())).values
    fb = exact_features(evolve(b, pb, ReservoirConfig())).values
    np.testing.assert_allclose(fb[:, :n], fa[:, perm], atol=1e-9)
    names = feature_names(n)
    for col, name in enumerate(names[n:], start=n):
        i, j = (int(v) for v in name.split("_")[1:])
        p, q = sorted((perm[i], perm[j]))
        np.testing.assert_allclose(fb[:, col], fa[:, names.index(f"zz_{p}_{q}")], atol=1e-9)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=1, max_size=5), st.sampled_from(["detuning", "position"]))
def test_features_bounded(x, encoding):
    cfg = ReservoirConfig.for_encoding(encoding, n_timesteps=2)
    f = run_sample(np.array(x), cfg).values
    assert np.all(np.abs(f) <= 1.0)
    assert f.shape[0] == 2


# ---------------------------------------------------------------- shots


def excited_state(n):
    psi = np.zeros(2**n, dtype=complex)
    psi[-1] = 1
    return QuantumState(psi, n)


def test_shots_on_excited_state_are_exact():
    f = sample_shots([excited_state(1)], 17, seed=1)
    assert f.values[0, 0] == -1.0


def test_shots_equal_superposition_concentrate():
    plus = QuantumState(np.array([1, 1], dtype=complex) / np.sqrt(2), 1)
    f = sample_shots([plus], 10_000, seed=7)
    assert abs(f.values[0, 0]) <= 5 / np.sqrt(10_000)


def test_shots_deterministic_and_seed_dependent():
    cfg = ReservoirConfig(n_timesteps=2)
    x = np.linspace(-1, 1, 4)
    a = run_sample(x, cfg, mode="shots", shots=100, seed=3, sample_index=2).values
    b = run_sample(x, cfg, mode="shots", shots=100, seed=3, sample_index=2).values
    c = run_sample(x, cfg, mode="shots", shots=100, seed=4, sample_index=2).values
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_shots_within_statistical_band():
    rng = np.random.default_rng(5)
    cfg = ReservoirConfig()
    inside = total = 0
    for k in range(4):
        sample = encode(rng.uniform(-1, 1, 8), cfg)
        snaps = evolve(sample, reservoir_program(sample, cfg), cfg)
        exact = exact_features(snaps).values
        shots = sample_shots(snaps, 1000, seed=11, sample_index=k).values
        band = 5 * np.sqrt((1 - exact**2) / 1000) + 1e-12
        inside += int(np.sum(np.abs(shots - exact) <= band))
        total += exact.size
    assert inside / total >= 0.99


def test_shot_budget_per_replica():
    assert 240 // 6 == 40


# ---------------------------------------------------------------- hardware import


def shot_frame(n_samples, n_timesteps, n_atoms, replicas, shots, bit="0"):
    rows = [
        (s, k, r, bit * n_atoms)
        for s in range(n_samples) for k in range(1, n_timesteps + 1)
        for r in range(replicas) for _ in range(shots)
    ]
    return pd.DataFrame(rows, columns=["sample_id", "timestep", "replica", "bitstring"])


def test_import_all_zero_bitstrings():
    table = import_hardware_features(shot_frame(2, 5, 12, 6, 40), 12, 5)
    assert table.values.shape == (2, 5, 78)
    assert table.matrix().shape == (2, 390)
    assert np.all(table.values == 1.0)
    assert table.meta["shots_min"] == 240


def test_import_rejects_short_bitstring():
    frame = shot_frame(1, 5, 12, 1, 2)
    frame.loc[3, "bitstring"] = "0" * 11
    with pytest.raises(FormatError):
        import_hardware_features(frame, 12, 5)


def test_import_reports_missing_timestep():
    frame = shot_frame(2, 5, 3, 1, 2)
    frame = frame[~((frame.sample_id == 1) & (frame.timestep == 3))]
    with pytest.raises(CompletenessError) as info:
        import_hardware_features(frame, 3, 5)
    assert info.value.missing == [(1, 3)]


def test_import_pool_vs_replica_average():
    rows = [(0, 1, 0, "11"), (0, 1, 1, "00"), (0, 1, 1, "00"), (0, 1, 1, "00")]
    frame = pd.DataFrame(rows, columns=["sample_id", "timestep", "replica", "bitstring"])
    pooled = import_hardware_features(frame, 2, 1).values[0, 0]
    averaged = import_hardware_features(frame, 2, 1, pool=False).values[0, 0]
    assert pooled[0] == pytest.approx(0.5)
    assert averaged[0] == pytest.approx(0.0)


def test_feature_table_roundtrip(tmp_path):
    values = np.random.default_rng(0).uniform(-1, 1, (3, 2, 6))
    table = FeatureTable(np.array([5, 7, 9]), values, 3, "exact", {"seed": 1})
    table.save(tmp_path / "f.csv")
    back = FeatureTable.load(tmp_path / "f.csv")
    assert list(back.sample_ids) == [5, 7, 9]
    np.testing.assert_allclose(back.values, values, atol=1e-11)
    assert back.mode == "exact" and back.meta["seed"] == 1
    assert list(pd.read_csv(tmp_path / "f.csv").columns[:4]) == ["sample_id", "timestep", "z_0", "z_1"]
