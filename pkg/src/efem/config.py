"""Run configuration: flat ``section.key = value`` text files.

Lines are ``key = value``; ``#`` starts a comment; blank lines are ignored.
Every key maps to one RunConfig field (``train.lr`` -> ``train_lr``);
unknown keys are errors. Defaults describe the desk benchmark.

Keys::

    scenario.break_sizes     default | comma list of break areas (m^2)
    scenario.steps           samples per scenario
    scenario.fault_time      break time (s)
    scenario.sample_interval sampling period (s)
    scenario.n_channels      total channels
    scenario.n_targets       forecast target channels
    scenario.noise_std       noise level, fraction of channel range
    data.threshold           min |Spearman rho| for feature selection
    data.window_len          input steps L
    data.horizon             forecast steps H
    data.stride              spacing of window start offsets
    data.split               train,val,test scenario ratio
    network.hidden_dim       recurrent width per direction
    network.n_layers         stacked recurrent layers
    network.linear_dim       residual head width
    network.n_linear         residual head blocks
    network.dropout_rate     drop probability
    loss.weights             reference | fuzzy | three comma numbers (shape,time,space)
    loss.opinions            expert opinion file used when loss.weights = fuzzy
    loss.gamma               Soft-DTW smoothing
    train.lr                 Adam learning rate
    train.weight_decay       L2 decay folded into the gradient
    train.batch_size         mini-batch size
    train.epochs             passes over the training windows
    train.clip               global gradient-norm clip (0 disables)
    train.seed               master seed
    uncertainty.n_passes     MC dropout passes
    compare.models           all | comma list of zoo names
    output.dir               output directory
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigurationError
from .scenario import ScenarioConfig, default_break_sizes


@dataclass(frozen=True)
class RunConfig:
    scenario_break_sizes: str = "default"
    scenario_steps: int = 1000
    scenario_fault_time: float = 400.0
    scenario_sample_interval: float = 10.0
    scenario_n_channels: int = 78
    scenario_n_targets: int = 24
    scenario_noise_std: float = 0.01
    data_threshold: float = 0.4
    data_window_len: int = 40
    data_horizon: int = 128
    data_stride: int = 200
    data_split: str = "8,1,1"
    network_hidden_dim: int = 64
    network_n_layers: int = 2
    network_linear_dim: int = 520
    network_n_linear: int = 2
    network_dropout_rate: float = 0.2
    loss_weights: str = "reference"
    loss_opinions: str = ""
    loss_gamma: float = 0.1
    train_lr: float = 0.001
    train_weight_decay: float = 1e-4
    train_batch_size: int = 16
    train_epochs: int = 50
    train_clip: float = 5.0
    train_seed: int = 42
    uncertainty_n_passes: int = 100
    compare_models: str = "all"
    output_dir: str = "results"

    def validate(self) -> "RunConfig":
        if self.train_batch_size < 1:
            raise ConfigurationError("train.batch_size must be >= 1")
        if self.train_epochs < 1:
            raise ConfigurationError("train.epochs must be >= 1")
        if self.train_lr <= 0:
            raise ConfigurationError("train.lr must be > 0")
        if self.uncertainty_n_passes < 2:
            raise ConfigurationError("uncertainty.n_passes must be >= 2")
        if self.loss_gamma < 0:
            raise ConfigurationError("loss.gamma must be >= 0")
        if self.loss_opinions and not Path(self.loss_opinions).is_file():
            raise ConfigurationError(f"loss.opinions file not found: {self.loss_opinions}")
        self.split_ratio()
        self.break_sizes()
        self.scenario_config().validate()
        return self

    def break_sizes(self) -> list[float]:
        if self.scenario_break_sizes.strip().lower() == "default":
            return default_break_sizes()
        try:
            return [float(v) for v in self.scenario_break_sizes.split(",") if v.strip()]
        except ValueError:
            raise ConfigurationError("scenario.break_sizes must be 'default' or numbers") from None

    def split_ratio(self) -> tuple[int, int, int]:
        try:
            ratio = tuple(int(v) for v in self.data_split.split(","))
        except ValueError:
            raise ConfigurationError("data.split must be three integers") from None
        if len(ratio) != 3 or min(ratio) < 1:
            raise ConfigurationError("data.split must be three positive integers")
        return ratio

    def scenario_config(self) -> ScenarioConfig:
        return ScenarioConfig(
            fault_time=self.scenario_fault_time,
            sample_interval=self.scenario_sample_interval,
            steps_per_scenario=self.scenario_steps,
            n_channels=self.scenario_n_channels,
            n_targets=self.scenario_n_targets,
            noise_std=self.scenario_noise_std,
            seed=self.train_seed,
        )

    def with_overrides(self, **kw) -> "RunConfig":
        return replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            section, key = f.name.split("_", 1)
            lines.append(f"{section}.{key} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    def digest(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _convert(name, raw: str):
    kind = _FIELDS[name].type
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigurationError(f"{name.replace('_', '.', 1)} expects {kind}, got {raw!r}") from None
    return raw


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {lineno}: expected 'key = value'")
        key, raw = (part.strip() for part in line.split("=", 1))
        name = key.replace(".", "_", 1)
        if "." not in key or name not in _FIELDS:
            raise ConfigurationError(f"line {lineno}: unknown key {key!r}")
        values[name] = _convert(name, raw)
    return replace(base or RunConfig(), **values)


def load_config(path=None, **overrides) -> RunConfig:
    cfg = RunConfig()
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file not found: {p}")
        cfg = parse_config(p.read_text(), cfg)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides).validate()
