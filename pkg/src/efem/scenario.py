"""Synthetic main-steam-line-break transient campaigns.

Each channel follows a piecewise analytic response: steady state before the
break, a linear stage-1 ramp (slope proportional to break size) for a fixed
trip delay, then a stage-2 exponential relaxation toward a new equilibrium.
The first ``n_targets`` channels carry the monitored plant parameters; the
rest are lagged/scaled copies of targets plus pure-noise distractors.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError

TRIP_DELAY_S = 60.0
MAX_BREAK_M2 = 0.13
N_DEFAULT_SIZES = 20


def default_break_sizes() -> list[float]:
    """20 break areas evenly spaced from 0.005 m² to 0.13 m².

    A literal 0.005 m² grid over that interval would have 26 points; the
    campaign keeps both endpoints and the count of 20.
    """
    return [float(round(s, 6)) for s in np.linspace(0.005, MAX_BREAK_M2, N_DEFAULT_SIZES)]


# name, nominal value, dynamic range, stage-1 gain, stage-2 equilibrium (base, severity), time constant s
_TARGETS = [
    ("Reactor Thermal Power", 100.0, 100.0, +0.12, -0.92, +0.10, 60.0),
    ("Pressure of Containment", 0.10, 0.20, +0.30, +0.20, +0.80, 300.0),
    ("Temperature of Containment", 40.0, 80.0, +0.20, +0.10, +0.70, 400.0),
    ("Hot-leg #1 Temperature", 327.0, 30.0, -0.10, -0.30, -0.50, 250.0),
    ("Hot-leg #2 Temperature", 327.0, 30.0, -0.10, -0.30, -0.50, 250.0),
    ("Hot-leg #3 Temperature", 327.0, 30.0, -0.10, -0.30, -0.50, 250.0),
    ("Cold-leg #1 Temperature", 292.0, 30.0, -0.15, -0.40, -0.50, 250.0),
    ("Cold-leg #2 Temperature", 292.0, 30.0, -0.15, -0.40, -0.50, 250.0),
    ("Cold-leg #3 Temperature", 292.0, 30.0, -0.15, -0.40, -0.50, 250.0),
    ("Pressurizer Temperature", 345.0, 20.0, -0.10, -0.30, -0.50, 300.0),
    ("Pressurizer Level", 60.0, 60.0, -0.30, -0.50, -0.40, 200.0),
    ("Pressurizer Pressure", 15.5, 6.0, -0.20, -0.30, -0.60, 200.0),
    ("Loop#1 Flow", 100.0, 100.0, +0.02, -0.10, -0.30, 150.0),
    ("Loop#2 Flow", 100.0, 100.0, +0.02, -0.10, -0.30, 150.0),
    ("Loop#3 Flow", 100.0, 100.0, +0.02, -0.10, -0.30, 150.0),
    ("SG#1 Pressure", 6.7, 6.0, -0.15, -0.20, -0.60, 250.0),
    ("SG#2 Pressure", 6.7, 6.0, -0.15, -0.20, -0.60, 250.0),
    ("SG#3 Pressure", 6.7, 6.0, -0.15, -0.20, -0.60, 250.0),
    ("SG#1 Steam Flow", 540.0, 1000.0, +0.50, -0.90, +0.60, 120.0),
    ("SG#2 Steam Flow", 540.0, 1000.0, +0.50, -0.90, +0.60, 120.0),
    ("SG#3 Steam Flow", 540.0, 1000.0, +0.50, -0.90, +0.60, 120.0),
    ("SG#1 Narrow Range Level", 50.0, 50.0, -0.30, -0.60, -0.30, 300.0),
    ("SG#2 Narrow Range Level", 50.0, 50.0, -0.30, -0.60, -0.30, 300.0),
    ("SG#3 Narrow Range Level", 50.0, 50.0, -0.30, -0.60, -0.30, 300.0),
]
TARGET_NAMES = [row[0] for row in _TARGETS]


def _loop_factor(name: str) -> float:
    # loop 1 carries the break; the intact loops respond less
    if "#2" in name:
        return 0.85
    if "#3" in name:
        return 0.7
    return 1.0


@dataclass(frozen=True)
class ScenarioConfig:
    break_size: float = 0.13
    fault_time: float = 400.0
    sample_interval: float = 10.0
    steps_per_scenario: int = 1000
    n_channels: int = 78
    n_targets: int = 24
    noise_std: float = 0.01
    seed: int = 0

    @property
    def fault_index(self) -> int:
        return int(round(self.fault_time / self.sample_interval))

    def validate(self) -> None:
        if not self.sample_interval > 0:
            raise ConfigurationError("sample_interval must be positive")
        ratio = self.fault_time / self.sample_interval
        if self.fault_time < 0 or abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError(
                "fault_time must be a non-negative exact multiple of sample_interval"
            )
        if not self.break_size > 0:
            raise ConfigurationError("break_size must be > 0")
        if not self.steps_per_scenario * self.sample_interval > self.fault_time:
            raise ConfigurationError("steps_per_scenario * sample_interval must exceed fault_time")
        if self.n_targets < 1 or self.n_targets > len(_TARGETS):
            raise ConfigurationError(f"n_targets must be in [1, {len(_TARGETS)}]")
        if self.n_targets > self.n_channels:
            raise ConfigurationError("n_targets must not exceed n_channels")
        if self.noise_std < 0:
            raise ConfigurationError("noise_std must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")


@dataclass
class ScenarioSeries:
    time_s: np.ndarray
    values: np.ndarray
    channel_names: list[str]
    target_indices: list[int]
    break_size: float
    seed: int
    fault_time: float = 400.0
    noise_std: float = 0.0
    ranges: np.ndarray = field(default=None, repr=False)

    @property
    def fault_index(self) -> int:
        dt = self.time_s[1] - self.time_s[0]
        return int(round((self.fault_time - self.time_s[0]) / dt))

    @property
    def target_names(self) -> list[str]:
        return [self.channel_names[i] for i in self.target_indices]

    def to_csv(self, path) -> Path:
        """Write ``time_s,<channels>`` CSV plus a ``.meta.json`` sidecar."""
        path = Path(path)
        header = ",".join(["time_s", *self.channel_names])
        lines = [header]
        for t, row in zip(self.time_s, self.values):
            lines.append(",".join([repr(float(t)), *(repr(float(v)) for v in row)]))
        path.write_text("\n".join(lines) + "\n")
        meta = {
            "break_size": self.break_size,
            "seed": self.seed,
            "fault_time": self.fault_time,
            "targets": self.target_names,
        }
        meta_path = path.with_suffix(".meta.json")
        meta_path.write_text(json.dumps(meta, indent=2) + "\n")
        return path

    @classmethod
    def from_csv(cls, path) -> "ScenarioSeries":
        path = Path(path)
        with path.open() as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        names = header[1:]
        targets = [names.index(n) for n in meta["targets"]]
        return cls(
            time_s=data[:, 0],
            values=data[:, 1:],
            channel_names=names,
            target_indices=targets,
            break_size=float(meta["break_size"]),
            seed=int(meta["seed"]),
            fault_time=float(meta["fault_time"]),
        )


def _channel_rng(seed: int, channel: int) -> np.random.Generator:
    # Philox is counter-based; one key per (seed, channel) keeps streams independent
    return np.random.Generator(np.random.Philox(key=(int(seed) << 32) | channel))


def _target_response(elapsed: np.ndarray, profile, severity: float) -> np.ndarray:
    name, base, span, gain, eq0, eq1, tau = profile
    k = _loop_factor(name)
    out = np.full(elapsed.shape, base, dtype=float)
    ramp_end = base + span * k * gain * severity
    equilibrium = base + span * k * (eq0 + eq1 * np.sqrt(severity))
    # larger breaks relax faster
    tau_eff = tau / (0.5 + severity)
    stage1 = (elapsed > 0) & (elapsed <= TRIP_DELAY_S)
    out[stage1] = base + span * k * gain * severity * elapsed[stage1] / TRIP_DELAY_S
    stage2 = elapsed > TRIP_DELAY_S
    decay = np.exp(-(elapsed[stage2] - TRIP_DELAY_S) / tau_eff)
    out[stage2] = equilibrium + (ramp_end - equilibrium) * decay
    return out


def _aux_layout(n_aux: int, n_targets: int):
    """(source target or None, lag steps, scale, offset) per auxiliary channel."""
    layout = []
    for a in range(n_aux):
        if a % 3 == 2:
            layout.append((None, 0, 1.0, 10.0 + a))
        else:
            src = a % n_targets
            lag = (a // n_targets) % 4
            scale = 0.5 + 0.25 * (a % 5)
            if a % 2:
                scale = -scale
            layout.append((src, lag, scale, 5.0 * (a % 7)))
    return layout


def generate_scenario(config: ScenarioConfig) -> ScenarioSeries:
    config.validate()
    n = config.steps_per_scenario
    dt = config.sample_interval
    time_s = np.arange(n, dtype=float) * dt
    fault_idx = config.fault_index
    # rows at and after the fault index respond; elapsed > 0 there
    elapsed = np.where(np.arange(n) >= fault_idx, time_s - config.fault_time + dt, 0.0)
    severity = config.break_size / MAX_BREAK_M2

    n_t = config.n_targets
    clean = np.empty((n, config.n_channels))
    ranges = np.empty(config.n_channels)
    names = []
    for c in range(n_t):
        profile = _TARGETS[c]
        clean[:, c] = _target_response(elapsed, profile, severity)
        ranges[c] = profile[2]
        names.append(profile[0])
    for a, (src, lag, scale, offset) in enumerate(_aux_layout(config.n_channels - n_t, n_t)):
        c = n_t + a
        if src is None:
            clean[:, c] = offset
            ranges[c] = 1.0
            names.append(f"AUX{a + 1:02d} Noise")
        else:
            shifted = np.concatenate([np.full(lag, clean[0, src]), clean[: n - lag, src]])
            clean[:, c] = offset + scale * shifted
            ranges[c] = abs(scale) * ranges[src]
            names.append(f"AUX{a + 1:02d} {TARGET_NAMES[src]} x{scale:+.2f} lag{lag}")

    values = clean.copy()
    if config.noise_std > 0:
        for c in range(config.n_channels):
            noise = _channel_rng(config.seed, c).standard_normal(n)
            values[:, c] += config.noise_std * ranges[c] * noise
    return ScenarioSeries(
        time_s=time_s,
        values=values,
        channel_names=names,
        target_indices=list(range(n_t)),
        break_size=config.break_size,
        seed=config.seed,
        fault_time=config.fault_time,
        noise_std=config.noise_std,
        ranges=ranges,
    )


def generate_campaign(base: ScenarioConfig, sizes=None) -> list[ScenarioSeries]:
    """One scenario per break size; scenario ``k`` uses seed ``base.seed + k``."""
    if sizes is None:
        sizes = default_break_sizes()
    sizes = list(sizes)
    if not sizes:
        raise ConfigurationError("break size list is empty")
    if any(not s > 0 for s in sizes):
        raise ConfigurationError("break sizes must all be positive")
    return [
        generate_scenario(replace(base, break_size=float(s), seed=base.seed + k))
        for k, s in enumerate(sizes)
    ]
