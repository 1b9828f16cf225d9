"""Classical (mean-field) counterpart of the Rydberg reservoir.

Each atom becomes a unit spin S_i with occupation n_i = (1 + S_i^z) / 2 and
precesses as dS_i/dt = 2 B_i x S_i in the field

    B_i = (Omega/2)(cos phi, sin phi, 0) + (0, 0, -Delta_i/2 + sum_j V_ij (1 + S_j^z) / 4).

The factor 2 reproduces the single-atom quantum dynamics exactly. Features
are z_i = -S_i^z and products z_i z_j, laid out like the quantum readout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .encoding import EncodedSample, PulseProgram, ReservoirConfig, encode, reservoir_program
from .errors import ConfigurationError, NumericalError
from .qrc import FeatureTable, ReservoirFeatures, interaction_matrix

DEFAULT_STEP_US = 1e-3


@dataclass(frozen=True)
class SpinState:
    spins: np.ndarray  # (N, 3)
    time: float = 0.0

    @classmethod
    def ground(cls, n: int) -> "SpinState":
        s = np.zeros((n, 3))
        s[:, 2] = -1.0
        return cls(s)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.spins, axis=-1)


@dataclass(frozen=True)
class SpinIntegrator:
    """Fixed-step RK4 with per-step renormalisation; optional halving check."""

    step: float = DEFAULT_STEP_US
    min_step: float = 1e-6
    tol: float = 1e-8
    verify: bool = False


def _field(s, v, scale, omega, phase, delta_g, delta_l):
    """Batched effective field; s (B, N, 3), v (B, N, N), scale (B, N)."""
    b = np.empty_like(s)
    b[..., 0] = 0.5 * omega * math.cos(phase)
    b[..., 1] = 0.5 * omega * math.sin(phase)
    detuning = delta_g + delta_l * scale
    b[..., 2] = -0.5 * detuning + 0.25 * np.einsum("bij,bj->bi", v, 1.0 + s[..., 2])
    return b


def effective_field(spins, t: float, sample: EncodedSample, program: PulseProgram,
                    cfg: ReservoirConfig) -> np.ndarray:
    s = np.asarray(spins, dtype=float)[None]
    v = interaction_matrix(sample.positions, cfg.c6_rad_um6_per_us)[None]
    scale = np.asarray(program.local_scale, dtype=float)[None]
    return _field(s, v, scale, float(program.rabi(t)), float(program.phase(t)),
                  float(program.global_detuning(t)), float(program.local_detuning(t)))[0]


def _drive(program: PulseProgram, t: float) -> tuple[float, float, float, float]:
    return (float(program.rabi(t)), float(program.phase(t)),
            float(program.global_detuning(t)), float(program.local_detuning(t)))


def _integrate(v, scale, program: PulseProgram, times, step: float) -> list[np.ndarray]:
    bsz, n = scale.shape
    s = np.zeros((bsz, n, 3))
    s[..., 2] = -1.0
    marks = sorted(set(float(t) for t in program.breakpoints() if t <= max(times))
                   | set(float(t) for t in times) | {0.0})
    wanted = set(float(t) for t in times)
    snaps = {0.0: s.copy()} if 0.0 in wanted else {}

    def rhs(state, t):
        return 2.0 * np.cross(_field(state, v, scale, *_drive(program, t)), state)

    for a, b in zip(marks[:-1], marks[1:]):
        steps = max(1, math.ceil((b - a) / step - 1e-9))
        h = (b - a) / steps
        for k in range(steps):
            t = a + k * h
            k1 = rhs(s, t)
            k2 = rhs(s + 0.5 * h * k1, t + 0.5 * h)
            k3 = rhs(s + 0.5 * h * k2, t + 0.5 * h)
            k4 = rhs(s + h * k3, t + h)
            s = s + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            s /= np.linalg.norm(s, axis=-1, keepdims=True)
        if b in wanted:
            snaps[b] = s.copy()
    if not np.all(np.isfinite(s)):
        raise NumericalError("spin integration produced non-finite values")
    return [snaps[float(t)] for t in times]


def _integrate_checked(v, scale, program, times, integrator: SpinIntegrator):
    step = integrator.step
    out = _integrate(v, scale, program, times, step)
    if integrator.verify:
        while True:
            finer = _integrate(v, scale, program, times, step / 2)
            gap = max(float(np.max(np.abs(a - b))) for a, b in zip(out, finer))
            out = finer
            if gap < integrator.tol:
                break
            step /= 2
            if step / 2 < integrator.min_step:
                raise NumericalError(
                    f"spin dynamics did not converge to {integrator.tol:g} down to step {step:g} us"
                )
    return out


def crc_evolve(sample: EncodedSample, program: PulseProgram, cfg: ReservoirConfig,
               integrator: SpinIntegrator | None = None) -> list[SpinState]:
    """Spin snapshots at every program timestep, starting from all spins down."""
    integrator = integrator or SpinIntegrator()
    times = list(program.timestep_times)
    if max(times) > program.duration + 1e-12:
        raise ConfigurationError("last timestep lies beyond the program duration")
    v = interaction_matrix(sample.positions, cfg.c6_rad_um6_per_us)[None]
    scale = np.asarray(program.local_scale, dtype=float)[None]
    snaps = _integrate_checked(v, scale, program, times, integrator)
    return [SpinState(s[0], t) for s, t in zip(snaps, times)]


def _readout(z: np.ndarray) -> np.ndarray:
    """z (..., N) -> (..., N + N(N-1)/2) with pair products in lexicographic order."""
    n = z.shape[-1]
    iu = np.triu_indices(n, k=1)
    pairs = z[..., iu[0]] * z[..., iu[1]]
    return np.clip(np.concatenate([z, pairs], axis=-1), -1.0, 1.0)


def crc_features(snapshots: list[SpinState]) -> ReservoirFeatures:
    z = np.array([-s.spins[:, 2] for s in snapshots])
    return ReservoirFeatures(_readout(z), z.shape[1], "crc")


def crc_table(X: np.ndarray, sample_ids, cfg: ReservoirConfig, integrator: SpinIntegrator | None = None,
              batch_size: int = 1024) -> FeatureTable:
    """Classical reservoir features for every row of ``X``, integrated in batches."""
    integrator = integrator or SpinIntegrator()
    X = np.asarray(X, dtype=float)
    chunks = []
    n_atoms = None
    for start in range(0, len(X), batch_size):
        rows = X[start:start + batch_size]
        samples = [encode(x, cfg) for x in rows]
        program = reservoir_program(samples[0], cfg)
        v = np.stack([interaction_matrix(s.positions, cfg.c6_rad_um6_per_us) for s in samples])
        scale = np.stack([np.asarray(s.local_scale, dtype=float) for s in samples])
        snaps = _integrate_checked(v, scale, program, list(program.timestep_times), integrator)
        z = np.stack([-s[..., 2] for s in snaps], axis=1)  # (B, T, N)
        chunks.append(_readout(z))
        n_atoms = samples[0].n_atoms
    values = np.concatenate(chunks) if chunks else np.zeros((0, cfg.n_timesteps, 0))
    meta = {"encoding": cfg.encoding, "config_hash": cfg.hash()}
    return FeatureTable(np.asarray(sample_ids), values, n_atoms or 0, "crc", meta)
