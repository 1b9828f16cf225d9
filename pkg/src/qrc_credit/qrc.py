"""Noiseless statevector emulation of a driven Rydberg chain and its readout.

H/hbar = (Omega/2) sum_i (e^{i phi}|0_i><1_i| + h.c.) - sum_i Delta_i n_i
         + sum_{i<j} C6 / r_ij^6 n_i n_j

The reservoir output at every timestep is <Z_i> for all atoms followed by
<Z_i Z_j> for i < j (lexicographic), with Z = 1 - 2 n so the ground state
reads +1.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.special import jv

from . import _kernels
from .encoding import EncodedSample, PulseProgram, ReservoirConfig, encode, reservoir_program
from .errors import CompletenessError, ConfigurationError, FormatError, NumericalError

# commutator-free fourth-order exponential integrator (two exponentials per step)
_CF4_NODES = (0.5 - math.sqrt(3) / 6, 0.5 + math.sqrt(3) / 6)
_CF4_A1 = (3 - 2 * math.sqrt(3)) / 12
_CF4_A2 = (3 + 2 * math.sqrt(3)) / 12


@dataclass(frozen=True)
class QuantumState:
    amplitudes: np.ndarray
    n: int
    time: float = 0.0

    @classmethod
    def ground(cls, n: int) -> "QuantumState":
        psi = np.zeros(2**n, dtype=np.complex128)
        psi[0] = 1.0
        return cls(psi, n)

    @property
    def norm(self) -> float:
        return float(np.sqrt(np.vdot(self.amplitudes, self.amplitudes).real))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass(frozen=True)
class Integrator:
    """Propagation settings.

    ``method="expo"`` propagates constant-drive segments exactly with a
    Chebyshev expansion and ramps with a fourth-order commutator-free
    exponential scheme of step ``max_step``. ``method="rk4"`` uses classic
    fixed-step Runge-Kutta everywhere. With ``verify=True`` the step is halved
    until two successive runs agree to ``tol`` in every amplitude.
    """

    method: str = "expo"
    max_step: float | None = None
    min_step: float = 1e-6
    tol: float = 1e-8
    verify: bool = False

    def step(self) -> float:
        if self.max_step is not None:
            return self.max_step
        return 2.5e-3 if self.method == "expo" else 1e-3


@lru_cache(maxsize=32)
def occupations(n: int) -> np.ndarray:
    """(2^n, n) matrix of atom occupations per basis index."""
    b = np.arange(2**n)[:, None]
    return ((b >> np.arange(n)) & 1).astype(np.float64)


@lru_cache(maxsize=32)
def z_signs(n: int) -> np.ndarray:
    return 1.0 - 2.0 * occupations(n)


def interaction_matrix(positions, c6: float) -> np.ndarray:
    """V_ij = C6 / r_ij^6 for i != j, zero diagonal (1-D positions or (n, d) points)."""
    p = np.asarray(positions, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    r = np.linalg.norm(p[:, None, :] - p[None, :, :], axis=-1)
    with np.errstate(divide="ignore"):
        v = np.where(r > 0, c6 / r**6, 0.0)
    np.fill_diagonal(v, 0.0)
    return v


def interaction_diagonal(positions, c6: float) -> np.ndarray:
    v = interaction_matrix(positions, c6)
    occ = occupations(len(v))
    return 0.5 * np.einsum("bi,ij,bj->b", occ, v, occ)


class _Drive:
    """H(t) pieces for one (sample, program) pair."""

    def __init__(self, sample: EncodedSample, program: PulseProgram, c6: float):
        self.n = sample.n_atoms
        self.program = program
        self.occ = occupations(self.n)
        self.v_diag = interaction_diagonal(sample.positions, c6)

    def diag(self, t: float) -> np.ndarray:
        return self.v_diag - self.occ @ self.program.detunings(t)

    def rabi(self, t: float) -> complex:
        return self.program.rabi_complex(t)

    def constant_on(self, a: float, b: float) -> bool:
        p = self.program
        return all(
            float(wf(a)) == float(wf(b))
            for wf in (p.rabi, p.phase, p.global_detuning, p.local_detuning)
        )


def hamiltonian_apply(state, t: float, sample: EncodedSample, program: PulseProgram,
                      cfg: ReservoirConfig) -> np.ndarray:
    """Matrix-free time derivative -i H(t) psi."""
    psi = state.amplitudes if isinstance(state, QuantumState) else np.asarray(state, dtype=np.complex128)
    drive = _Drive(sample, program, cfg.c6_rad_um6_per_us)
    out = np.empty_like(psi)
    _kernels.apply_h(np.ascontiguousarray(psi), drive.diag(t), drive.rabi(t), drive.n, out)
    return -1j * out


def _chebyshev_coefficients(x: float) -> np.ndarray:
    kmax = int(x + 12 * max(x, 1.0) ** (1 / 3) + 40)
    k = np.arange(kmax + 1)
    bessel = jv(k, x)
    significant = np.flatnonzero(np.abs(bessel) > 1e-17)
    keep = int(significant[-1]) + 1 if significant.size else 1
    c = 2.0 * (-1j) ** k[:keep] * bessel[:keep]
    c[0] /= 2.0
    return c.astype(np.complex128)


def expm_apply(psi: np.ndarray, diag: np.ndarray, w: complex, n: int, tau: float) -> np.ndarray:
    """exp(-i tau H) psi for H = diag + Rabi(w), by Chebyshev expansion."""
    if tau == 0:
        return psi.copy()
    if w == 0:
        return psi * np.exp(-1j * tau * diag)
    spread = n * abs(w) / 2
    lo, hi = diag.min() - spread, diag.max() + spread
    center, radius = 0.5 * (hi + lo), 0.5 * (hi - lo)
    coeffs = _chebyshev_coefficients(radius * tau)
    out = _kernels.chebyshev_propagate(psi, diag, complex(w), n, center, radius, coeffs)
    return out * np.exp(-1j * center * tau)


def _segments(program: PulseProgram, t_end: float) -> list[tuple[float, float]]:
    marks = set(float(t) for t in program.breakpoints() if t <= t_end)
    marks.update(float(t) for t in program.timestep_times)
    marks.add(0.0)
    times = sorted(marks)
    return [(a, b) for a, b in zip(times[:-1], times[1:]) if b - a > 1e-14]


def _propagate(drive: _Drive, t_end: float, method: str, step: float) -> dict[float, np.ndarray]:
    n = drive.n
    psi = np.zeros(2**n, dtype=np.complex128)
    psi[0] = 1.0
    wanted = set(float(t) for t in drive.program.timestep_times)
    snaps = {}
    if 0.0 in wanted:
        snaps[0.0] = psi.copy()
    for a, b in _segments(drive.program, t_end):
        length = b - a
        if method == "rk4":
            steps = max(1, math.ceil(length / step - 1e-9))
            om_a, om_b = float(drive.program.rabi(a)), float(drive.program.rabi(b))
            ph_a, ph_b = float(drive.program.phase(a)), float(drive.program.phase(b))
            psi = _kernels.rk4_segment(psi, drive.diag(a), drive.diag(b), om_a, om_b,
                                       ph_a, ph_b, n, length, steps)
        elif drive.constant_on(a, b):
            psi = expm_apply(psi, drive.diag(a), drive.rabi(a), n, length)
        else:
            steps = max(1, math.ceil(length / step - 1e-9))
            h = length / steps
            for s in range(steps):
                t0 = a + s * h
                t1, t2 = t0 + _CF4_NODES[0] * h, t0 + _CF4_NODES[1] * h
                d1, d2 = drive.diag(t1), drive.diag(t2)
                w1, w2 = drive.rabi(t1), drive.rabi(t2)
                psi = expm_apply(psi, _CF4_A2 * d1 + _CF4_A1 * d2, _CF4_A2 * w1 + _CF4_A1 * w2, n, h)
                psi = expm_apply(psi, _CF4_A1 * d1 + _CF4_A2 * d2, _CF4_A1 * w1 + _CF4_A2 * w2, n, h)
        if b in wanted:
            snaps[b] = psi.copy()
    return snaps


def evolve(sample: EncodedSample, program: PulseProgram, cfg: ReservoirConfig,
           integrator: Integrator | None = None) -> list[QuantumState]:
    """Integrate from |0...0> and return the state at each program timestep time."""
    integrator = integrator or Integrator()
    if integrator.method not in ("expo", "rk4"):
        raise ConfigurationError(f"unknown integrator {integrator.method!r}")
    times = list(program.timestep_times)
    if not times:
        return []
    t_end = max(times)
    if t_end > program.duration + 1e-12:
        raise ConfigurationError(
            f"last timestep {t_end} us lies beyond the program duration {program.duration} us"
        )
    drive = _Drive(sample, program, cfg.c6_rad_um6_per_us)
    step = integrator.step()
    snaps = _propagate(drive, t_end, integrator.method, step)
    if integrator.verify:
        while True:
            finer = _propagate(drive, t_end, integrator.method, step / 2)
            gap = max(float(np.max(np.abs(snaps[t] - finer[t]))) for t in times)
            snaps = finer
            if gap < integrator.tol:
                break
            step /= 2
            if step / 2 < integrator.min_step:
                raise NumericalError(
                    f"no convergence to {integrator.tol:g} down to step {step:g} us (gap {gap:.3g})"
                )
    states = [QuantumState(snaps[t], drive.n, t) for t in times]
    for s in states:
        if abs(s.norm - 1.0) > 1e-6:
            raise NumericalError(f"norm drifted to {s.norm:.9f} at t = {s.time} us")
    return states


# ---------------------------------------------------------------- readout


def feature_names(n: int) -> list[str]:
    names = [f"z_{i}" for i in range(n)]
    names += [f"zz_{i}_{j}" for i in range(n) for j in range(i + 1, n)]
    return names


def n_features(n_atoms: int, n_timesteps: int) -> int:
    return (n_atoms + n_atoms * (n_atoms - 1) // 2) * n_timesteps


def _observables(weights: np.ndarray, n: int) -> np.ndarray:
    """<Z_i> then <Z_i Z_j> (i < j) for a (possibly unnormalised) weight vector over basis states."""
    z = z_signs(n)
    total = weights.sum()
    zi = weights @ z / total
    zz = (z * weights[:, None]).T @ z / total
    iu = np.triu_indices(n, k=1)
    return np.clip(np.concatenate([zi, zz[iu]]), -1.0, 1.0)


@dataclass(frozen=True)
class ReservoirFeatures:
    """Per-sample readout, shape (n_timesteps, n + n(n-1)/2)."""

    values: np.ndarray
    n_atoms: int
    mode: str = "exact"
    shots: int | None = None

    @property
    def names(self) -> list[str]:
        return feature_names(self.n_atoms)

    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)


def exact_features(snapshots: list[QuantumState]) -> ReservoirFeatures:
    if not snapshots:
        raise ConfigurationError("no snapshots")
    n = snapshots[0].n
    rows = [_observables(s.probabilities(), n) for s in snapshots]
    return ReservoirFeatures(np.array(rows), n, "exact")


def shot_rng(seed: int, sample_index: int, timestep: int) -> np.random.Generator:
    """Independent stream per (master seed, sample, timestep)."""
    return np.random.default_rng([seed, sample_index, timestep])


def sample_counts(state: QuantumState, shots: int, rng: np.random.Generator) -> np.ndarray:
    p = state.probabilities()
    p = np.clip(p, 0.0, None)
    return rng.multinomial(shots, p / p.sum())


def sample_shots(snapshots: list[QuantumState], shots_per_timestep: int, seed: int,
                 sample_index: int = 0) -> ReservoirFeatures:
    """Empirical Z / ZZ means from Born-rule bitstring draws."""
    if shots_per_timestep < 1:
        raise ConfigurationError("need at least one shot per timestep")
    n = snapshots[0].n
    rows = []
    for k, state in enumerate(snapshots, start=1):
        counts = sample_counts(state, shots_per_timestep, shot_rng(seed, sample_index, k))
        rows.append(_observables(counts.astype(float), n))
    return ReservoirFeatures(np.array(rows), n, "shots", shots_per_timestep)


def bitstrings_to_features(bits: np.ndarray) -> np.ndarray:
    """Features from a (shots, n) 0/1 matrix."""
    z = 1.0 - 2.0 * np.asarray(bits, dtype=float)
    n = z.shape[1]
    zi = z.mean(axis=0)
    zz = z.T @ z / z.shape[0]
    iu = np.triu_indices(n, k=1)
    return np.concatenate([zi, zz[iu]])


def run_sample(features, cfg: ReservoirConfig, *, mode: str = "exact", shots: int | None = None,
               seed: int = 0, sample_index: int = 0, integrator: Integrator | None = None) -> ReservoirFeatures:
    """Encode one preprocessed sample, evolve it, read it out."""
    sample = encode(features, cfg)
    program = reservoir_program(sample, cfg)
    snaps = evolve(sample, program, cfg, integrator)
    if mode == "exact":
        return exact_features(snaps)
    if mode == "shots":
        return sample_shots(snaps, int(shots), seed, sample_index)
    raise ConfigurationError(f"unknown readout mode {mode!r}")


# ---------------------------------------------------------------- tables


@dataclass
class FeatureTable:
    """Reservoir features for many samples, shape (samples, timesteps, observables)."""

    sample_ids: np.ndarray
    values: np.ndarray
    n_atoms: int
    mode: str
    meta: dict = field(default_factory=dict)

    @property
    def names(self) -> list[str]:
        if self.mode == "preprocessed":
            return [f"f{i}" for i in range(self.values.shape[2])]
        return feature_names(self.n_atoms)

    @property
    def n_timesteps(self) -> int:
        return self.values.shape[1]

    def matrix(self) -> np.ndarray:
        """Classifier input: timestep-major flattening per sample."""
        return self.values.reshape(len(self.sample_ids), -1)

    def select(self, ids) -> "FeatureTable":
        lookup = {int(s): k for k, s in enumerate(self.sample_ids)}
        try:
            idx = [lookup[int(s)] for s in ids]
        except KeyError as exc:
            raise CompletenessError(f"sample {exc.args[0]} has no reservoir features", [exc.args[0]])
        return FeatureTable(np.asarray(ids), self.values[idx], self.n_atoms, self.mode, dict(self.meta))

    def to_frame(self) -> pd.DataFrame:
        s, t, o = self.values.shape
        frame = pd.DataFrame(self.values.reshape(s * t, o), columns=self.names)
        frame.insert(0, "timestep", np.tile(np.arange(1, t + 1), s))
        frame.insert(0, "sample_id", np.repeat(self.sample_ids, t))
        return frame

    def save(self, path: str | Path) -> None:
        path = Path(path)
        self.to_frame().to_csv(path, index=False, float_format="%.12g")
        meta = {"mode": self.mode, "n_atoms": self.n_atoms, "n_timesteps": self.n_timesteps,
                "ordering": "z_i ascending, then zz_i_j lexicographic (i<j)", **self.meta}
        path.with_suffix(path.suffix + ".meta.json").write_text(json.dumps(meta, indent=1, default=str))

    @classmethod
    def load(cls, path: str | Path) -> "FeatureTable":
        path = Path(path)
        frame = pd.read_csv(path)
        meta_path = path.with_suffix(path.suffix + ".meta.json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        names = [c for c in frame.columns if c not in ("sample_id", "timestep")]
        if meta.get("mode") == "preprocessed":
            n = len(names)
            expected = [f"f{i}" for i in range(n)]
        else:
            n = sum(1 for c in names if c.startswith("z_"))
            expected = feature_names(n)
        if names != expected:
            raise FormatError(f"{path}: unexpected feature columns")
        frame = frame.sort_values(["sample_id", "timestep"], kind="stable")
        ids = frame["sample_id"].unique()
        t = int(frame["timestep"].max()) if len(frame) else 0
        if len(frame) != len(ids) * t:
            raise CompletenessError(f"{path}: ragged timesteps")
        values = frame[names].to_numpy().reshape(len(ids), t, len(names))
        mode = meta.pop("mode", "exact")
        meta.pop("n_atoms", None)
        return cls(ids, values, n, mode, meta)


def reservoir_table(X: np.ndarray, sample_ids, cfg: ReservoirConfig, *, mode: str = "exact",
                    shots: int | None = None, seed: int = 0, integrator: Integrator | None = None,
                    n_jobs: int = 1, progress=None) -> FeatureTable:
    """Run the emulator over every row of ``X``.

    Work is split by sample; each result depends only on its own row, the
    config and the seed, so ``n_jobs`` does not change the output.
    """
    X = np.asarray(X, dtype=float)
    args = [(X[k], cfg, mode, shots, seed, k, integrator) for k in range(len(X))]
    if n_jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(n_jobs) as pool:
            rows = list(pool.map(_run_args, args, chunksize=16))
    else:
        rows = []
        for k, a in enumerate(args):
            rows.append(_run_args(a))
            if progress is not None:
                progress(k + 1, len(args))
    n_atoms = rows[0].n_atoms if rows else (X.shape[1] + (cfg.encoding == "position"))
    values = np.stack([r.values for r in rows]) if rows else np.zeros((0, cfg.n_timesteps, 0))
    meta = {"encoding": cfg.encoding, "config_hash": cfg.hash(), "seed": seed}
    if mode == "shots":
        meta["shots"] = shots
    return FeatureTable(np.asarray(sample_ids), values, n_atoms, mode, meta)


def _run_args(args):
    x, cfg, mode, shots, seed, k, integrator = args
    return run_sample(x, cfg, mode=mode, shots=shots, seed=seed, sample_index=k, integrator=integrator)


# ---------------------------------------------------------------- hardware records


def read_shot_records(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, dtype={"bitstring": str})
    needed = ["sample_id", "timestep", "replica", "bitstring"]
    missing = [c for c in needed if c not in frame.columns]
    if missing:
        raise FormatError(f"{path}: missing column(s) {missing}")
    bad = ~frame["bitstring"].astype(str).str.fullmatch(r"[01]+")
    if bad.any():
        row = int(np.flatnonzero(bad.to_numpy())[0])
        raise FormatError(f"{path}: row {row} bitstring {frame['bitstring'].iloc[row]!r} is not binary")
    return frame


def import_hardware_features(records, n_atoms: int, n_timesteps: int, sample_ids=None,
                             pool: bool = True) -> FeatureTable:
    """Rebuild reservoir features from hardware shot records.

    ``records`` is a path or frame with columns sample_id, timestep (1-based),
    replica, bitstring; character i of a bitstring is atom i of that replica
    (1 = Rydberg). With ``pool=True`` shots of all replicas are pooled before
    averaging; otherwise per-replica estimates are averaged.
    """
    frame = records if isinstance(records, pd.DataFrame) else read_shot_records(records)
    lengths = frame["bitstring"].astype(str).str.len()
    wrong = lengths != n_atoms
    if wrong.any():
        row = int(np.flatnonzero(wrong.to_numpy())[0])
        raise FormatError(
            f"row {row}: bitstring has {lengths.iloc[row]} bits, expected {n_atoms}"
        )
    ids = np.unique(frame["sample_id"]) if sample_ids is None else np.asarray(sample_ids)
    present = set(zip(frame["sample_id"].astype(int), frame["timestep"].astype(int)))
    missing = [(int(s), k) for s in ids for k in range(1, n_timesteps + 1) if (int(s), k) not in present]
    if missing:
        preview = ", ".join(f"({s}, {k})" for s, k in missing[:10])
        raise CompletenessError(f"{len(missing)} (sample, timestep) pair(s) without shots: {preview}", missing)

    values = np.empty((len(ids), n_timesteps, n_atoms + n_atoms * (n_atoms - 1) // 2))
    index = {int(s): k for k, s in enumerate(ids)}
    for (sid, step), group in frame.groupby(["sample_id", "timestep"]):
        if int(sid) not in index or not 1 <= int(step) <= n_timesteps:
            continue
        bits = np.array([[c == "1" for c in s] for s in group["bitstring"]], dtype=float)
        if pool:
            row = bitstrings_to_features(bits)
        else:
            reps = group["replica"].to_numpy()
            row = np.mean([bitstrings_to_features(bits[reps == r]) for r in np.unique(reps)], axis=0)
        values[index[int(sid)], int(step) - 1] = row
    shots = frame.groupby(["sample_id", "timestep"]).size()
    meta = {"source": "hardware", "pooled": pool, "shots_min": int(shots.min()), "shots_max": int(shots.max())}
    return FeatureTable(ids, values, n_atoms, "hardware", meta)
