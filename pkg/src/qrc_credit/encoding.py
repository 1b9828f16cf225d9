"""Pulse waveforms, data encodings and register layout for Rydberg arrays.

Units throughout: time in microseconds, angular frequencies in rad/us,
distances in micrometres, C6 in rad/us * um^6.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, EncodingError, LayoutError

TWO_PI = 2.0 * math.pi
C6_DEFAULT = TWO_PI * 862690.0

REGISTER_WIDTH_UM = 75.0
REGISTER_HEIGHT_UM = 125.0
MIN_DISTANCE_UM = 4.0
MIN_ROW_SPACING_UM = 4.0
REPLICA_GAP_UM = 15.0
LANE_PITCH_UM = 10.0
_GEOM_TOL = 1e-9


@dataclass(frozen=True)
class Waveform:
    """Piecewise-linear waveform given by (time, value) breakpoints."""

    times: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or t.size < 2:
            raise ConfigurationError("waveform needs matching 1-D time/value lists (>= 2 points)")
        if t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ConfigurationError("waveform times must start at 0 and strictly increase")
        if not np.all(np.isfinite(v)):
            raise ConfigurationError("waveform values must be finite")

    @classmethod
    def constant(cls, value: float, duration: float) -> "Waveform":
        return cls((0.0, float(duration)), (float(value), float(value)))

    @property
    def duration(self) -> float:
        return self.times[-1]

    def __call__(self, t):
        return np.interp(t, self.times, self.values)

    def scaled(self, factor: float) -> "Waveform":
        return Waveform(self.times, tuple(factor * v for v in self.values))

    def breakpoints(self) -> list[tuple[float, float]]:
        return list(zip(self.times, self.values))


def build_waveform(peak: float, duration: float, ramp: float) -> Waveform:
    """Trapezoid: linear ramp 0 -> peak, hold, linear ramp back to 0."""
    if ramp <= 0:
        raise ConfigurationError(f"ramp must be positive, got {ramp}")
    if duration <= 2 * ramp:
        raise ConfigurationError(
            f"duration {duration} us leaves no hold time after two {ramp} us ramps"
        )
    return Waveform(
        (0.0, ramp, duration - ramp, duration),
        (0.0, float(peak), float(peak), 0.0),
    )


@dataclass(frozen=True)
class ReservoirConfig:
    r0_um: float = 10.0
    displacement_scale: float = 1.0
    delta_local_rad_per_us: float = TWO_PI
    omega_max_rad_per_us: float = TWO_PI
    delta_global_rad_per_us: float = math.pi
    ramp_us: float = 0.05
    timestep_us: float = 0.5
    n_timesteps: int = 5
    c6_rad_um6_per_us: float = C6_DEFAULT
    encoding: str = "detuning"

    def __post_init__(self):
        if self.encoding not in ("position", "detuning"):
            raise ConfigurationError(f"unknown encoding {self.encoding!r}")
        if self.r0_um <= 0:
            raise ConfigurationError("r0 must be positive")
        if self.ramp_us <= 0:
            raise ConfigurationError("ramp must be positive")
        if self.n_timesteps < 1:
            raise ConfigurationError("need at least one timestep")
        if self.c6_rad_um6_per_us <= 0:
            raise ConfigurationError("C6 must be positive")
        if self.timestep_us <= 2 * self.ramp_us:
            raise ConfigurationError("timestep must exceed two ramp durations")

    @classmethod
    def for_encoding(cls, encoding: str, **overrides) -> "ReservoirConfig":
        """Working point used for each encoding (global detuning differs)."""
        base = {"encoding": encoding}
        if encoding == "position":
            base["delta_global_rad_per_us"] = 2.0
        base.update(overrides)
        return cls(**base)

    @property
    def duration_us(self) -> float:
        return self.n_timesteps * self.timestep_us

    @property
    def timestep_times(self) -> list[float]:
        return [k * self.timestep_us for k in range(1, self.n_timesteps + 1)]

    def with_(self, **changes) -> "ReservoirConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True)
class EncodedSample:
    positions: np.ndarray
    local_scale: np.ndarray
    encoding: str

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    @property
    def length(self) -> float:
        return float(self.positions[-1] - self.positions[0])


@dataclass(frozen=True)
class PulseProgram:
    rabi: Waveform
    phase: Waveform
    global_detuning: Waveform
    local_detuning: Waveform
    local_scale: np.ndarray
    timestep_times: tuple[float, ...]

    @property
    def duration(self) -> float:
        return self.rabi.duration

    def breakpoints(self) -> np.ndarray:
        """Union of breakpoint times of every waveform."""
        times = set()
        for w in (self.rabi, self.phase, self.global_detuning, self.local_detuning):
            times.update(w.times)
        return np.array(sorted(times))

    def detunings(self, t: float) -> np.ndarray:
        """Per-site detuning at time ``t``."""
        return self.global_detuning(t) + self.local_scale * self.local_detuning(t)

    def rabi_complex(self, t: float) -> complex:
        return complex(self.rabi(t) * np.exp(1j * self.phase(t)))


def encode_position(features, cfg: ReservoirConfig) -> EncodedSample:
    """Gap i = r0 * (1 + lambda * (f_i + 1) / 2); n features -> n + 1 atoms."""
    f = np.asarray(features, dtype=float)
    remapped = (f + 1.0) / 2.0
    if np.any(remapped < -1e-9) or np.any(remapped > 1 + 1e-9):
        worst = f[np.argmax(np.abs(remapped - 0.5))]
        raise EncodingError(f"feature value {worst} lies outside [-1, 1]")
    if cfg.displacement_scale < 0:
        raise EncodingError("displacement scale must be non-negative")
    remapped = np.clip(remapped, 0.0, 1.0)
    gaps = cfg.r0_um * (1.0 + cfg.displacement_scale * remapped)
    positions = np.concatenate([[0.0], np.cumsum(gaps)])
    return EncodedSample(positions, np.zeros(len(positions)), "position")


def encode_detuning(features, cfg: ReservoirConfig) -> EncodedSample:
    """One atom per feature at pitch r0; feature i scales the local detuning of atom i."""
    f = np.asarray(features, dtype=float)
    positions = cfg.r0_um * np.arange(len(f), dtype=float)
    return EncodedSample(positions, f.copy(), "detuning")


def encode(features, cfg: ReservoirConfig) -> EncodedSample:
    if cfg.encoding == "position":
        return encode_position(features, cfg)
    return encode_detuning(features, cfg)


def reservoir_program(sample: EncodedSample, cfg: ReservoirConfig, duration: float | None = None,
                      timestep_times=None) -> PulseProgram:
    """Drive program for one sample; all drives share the trapezoid profile."""
    duration = cfg.duration_us if duration is None else duration
    times = tuple(cfg.timestep_times if timestep_times is None else timestep_times)
    local_peak = cfg.delta_local_rad_per_us if sample.encoding == "detuning" else 0.0
    return PulseProgram(
        rabi=build_waveform(cfg.omega_max_rad_per_us, duration, cfg.ramp_us),
        phase=Waveform.constant(0.0, duration),
        global_detuning=build_waveform(cfg.delta_global_rad_per_us, duration, cfg.ramp_us),
        local_detuning=build_waveform(local_peak, duration, cfg.ramp_us),
        local_scale=np.asarray(sample.local_scale, dtype=float),
        timestep_times=times,
    )


def export_programs(sample: EncodedSample, cfg: ReservoirConfig) -> list[PulseProgram]:
    """One program per timestep k, each restarting from the ground state and lasting k * timestep."""
    return [
        reservoir_program(sample, cfg, duration=t, timestep_times=(t,))
        for t in cfg.timestep_times
    ]


# ---------------------------------------------------------------- register


@dataclass(frozen=True)
class RegisterLayout:
    sites: np.ndarray  # (M, 2) x, y in um
    local_scale: np.ndarray
    replica_count: int
    replica_of: list[tuple[int, int]]
    embedding: str = "column"

    def replica_sites(self, r: int) -> np.ndarray:
        idx = [k for k, (rep, _) in enumerate(self.replica_of) if rep == r]
        return self.sites[idx]


@dataclass(frozen=True)
class Violation:
    rule: str
    sites: tuple[int, ...]
    detail: str = ""

    def __str__(self):
        return f"{self.rule} {self.sites}: {self.detail}"


def _fold(d: np.ndarray, lane_length: float) -> tuple[np.ndarray, np.ndarray]:
    # lane k holds chain coordinates in (k L, (k + 1) L]; odd lanes run backwards
    lane = np.maximum(np.ceil(d / lane_length - _GEOM_TOL).astype(int) - 1, 0)
    offset = d - lane * lane_length
    along = np.where(lane % 2 == 0, offset, lane_length - offset)
    return lane, np.clip(along, 0.0, lane_length)


def embed_register(sample: EncodedSample, replicas: int, cfg: ReservoirConfig | None = None,
                   embedding: str = "auto") -> RegisterLayout:
    """Place ``replicas`` copies of the 1-D array inside the 2-D register.

    Arrays no longer than the register height become vertical columns,
    replicated along x with a 15 um gap between bounding boxes. Longer arrays
    are folded into a serpentine: detuning-encoded arrays fold along y into
    columns 10 um apart (uniform pitch keeps rows aligned); position-encoded
    arrays fold along x into rows 10 um apart and are replicated along y, so
    the minimum row spacing always holds.
    """
    if replicas < 1:
        raise LayoutError("need at least one replica")
    d = np.asarray(sample.positions, dtype=float) - sample.positions[0]
    length = float(d[-1]) if d.size else 0.0
    if embedding == "auto":
        embedding = "column" if length <= REGISTER_HEIGHT_UM + _GEOM_TOL else "serpentine"
    if embedding == "column":
        if length > REGISTER_HEIGHT_UM + _GEOM_TOL:
            raise LayoutError(
                f"register-height: array length {length:g} um exceeds {REGISTER_HEIGHT_UM:g} um"
            )
        lane = np.zeros(d.size, dtype=int)
        along = d
        vertical = True
    elif embedding == "serpentine":
        vertical = sample.encoding != "position"
        lane_length = REGISTER_HEIGHT_UM if vertical else REGISTER_WIDTH_UM
        lane, along = _fold(d, lane_length)
    else:
        raise ConfigurationError(f"unknown embedding {embedding!r}")

    breadth = float(lane.max()) * LANE_PITCH_UM if d.size else 0.0
    room = REGISTER_WIDTH_UM if vertical else REGISTER_HEIGHT_UM
    needed = replicas * breadth + (replicas - 1) * REPLICA_GAP_UM
    if needed > room + _GEOM_TOL:
        axis = "width" if vertical else "height"
        raise LayoutError(
            f"register-{axis}: {replicas} replicas need {needed:g} um > {room:g} um"
        )
    sites, scales, owner = [], [], []
    for r in range(replicas):
        shift = r * (breadth + REPLICA_GAP_UM)
        across = lane * LANE_PITCH_UM + shift
        xy = np.column_stack([across, along]) if vertical else np.column_stack([along, across])
        sites.append(xy)
        scales.append(np.asarray(sample.local_scale, dtype=float))
        owner.extend((r, i) for i in range(d.size))
    return RegisterLayout(
        np.round(np.vstack(sites), 10),
        np.concatenate(scales),
        replicas,
        owner,
        embedding,
    )


def validate_layout(layout: RegisterLayout) -> list[Violation]:
    """Hardware constraint check; returns every violation found (empty if valid)."""
    out: list[Violation] = []
    xy = np.asarray(layout.sites, dtype=float)
    for k, (x, y) in enumerate(xy):
        if not (-_GEOM_TOL <= x <= REGISTER_WIDTH_UM + _GEOM_TOL and -_GEOM_TOL <= y <= REGISTER_HEIGHT_UM + _GEOM_TOL):
            out.append(Violation("register-bounds", (k,), f"site ({x:g}, {y:g}) outside 75 x 125 um"))
    m = len(xy)
    for a in range(m):
        for b in range(a + 1, m):
            dist = float(np.hypot(*(xy[a] - xy[b])))
            dy = abs(xy[a, 1] - xy[b, 1])
            if dist < MIN_DISTANCE_UM - _GEOM_TOL:
                out.append(Violation("min-distance", (a, b), f"{dist:.4f} um < {MIN_DISTANCE_UM:g} um"))
            if 1e-6 < dy < MIN_ROW_SPACING_UM - _GEOM_TOL:
                out.append(Violation("row-spacing", (a, b), f"rows {dy:.4f} um apart"))
            ra, rb = layout.replica_of[a][0], layout.replica_of[b][0]
            if ra != rb and dist < REPLICA_GAP_UM - _GEOM_TOL:
                out.append(Violation("replica-separation", (a, b), f"{dist:.4f} um < {REPLICA_GAP_UM:g} um"))
    return out


# ---------------------------------------------------------------- export


def _points(w: Waveform) -> list[list[float]]:
    return [[round(t, 6), round(v, 10)] for t, v in w.breakpoints()]


def program_document(program: PulseProgram, layout: RegisterLayout, *, sample_id, timestep: int,
                     cfg: ReservoirConfig) -> dict:
    return {
        "format": "qrc-credit/program",
        "version": 1,
        "metadata": {
            "sample_id": sample_id,
            "timestep": timestep,
            "encoding": cfg.encoding,
            "config_hash": cfg.hash(),
            "replicas": layout.replica_count,
            "embedding": layout.embedding,
        },
        "register": {
            "sites_um": [[round(float(x), 4), round(float(y), 4)] for x, y in layout.sites],
            "local_scale": [round(float(s), 10) for s in layout.local_scale],
            "replica_of": [list(pair) for pair in layout.replica_of],
        },
        "duration_us": round(program.duration, 6),
        "waveforms_rad_per_us": {
            "rabi": _points(program.rabi),
            "phase_rad": _points(program.phase),
            "global_detuning": _points(program.global_detuning),
            "local_detuning": _points(program.local_detuning),
        },
    }


def write_program_documents(sample_id, sample: EncodedSample, cfg: ReservoirConfig, replicas: int,
                            out_dir: str | Path) -> list[Path]:
    layout = embed_register(sample, replicas, cfg)
    bad = validate_layout(layout)
    if bad:
        raise LayoutError(f"sample {sample_id}: {bad[0]}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for k, program in enumerate(export_programs(sample, cfg), start=1):
        path = out_dir / f"sample_{sample_id}_t{k}.json"
        doc = program_document(program, layout, sample_id=sample_id, timestep=k, cfg=cfg)
        path.write_text(json.dumps(doc))
        paths.append(path)
    return paths
