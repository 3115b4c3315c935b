"""Z-score normalization, Spearman feature screening, windowing and splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DataError,
    SelectionError,
    ShapeError,
    SplitError,
    UndefinedCorrelationError,
    WindowError,
)
from .scenario import ScenarioSeries

SIGMA_FLOOR = 1e-12


@dataclass
class NormStats:
    mu: np.ndarray
    sigma: np.ndarray
    flagged: np.ndarray = None
    channel_names: list[str] | None = None

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=float)
        self.sigma = np.asarray(self.sigma, dtype=float)
        if self.flagged is None:
            self.flagged = np.zeros(self.mu.shape, dtype=bool)
        if self.mu.shape != self.sigma.shape:
            raise ShapeError("mu and sigma must have equal length")
        if np.any(self.sigma < 0):
            raise DataError("sigma must be non-negative")

    def __len__(self):
        return self.mu.size

    def subset(self, indices) -> "NormStats":
        idx = list(indices)
        names = None if self.channel_names is None else [self.channel_names[i] for i in idx]
        return NormStats(self.mu[idx], self.sigma[idx], self.flagged[idx], names)

    def to_csv(self, path) -> Path:
        path = Path(path)
        names = self.channel_names or [str(i) for i in range(len(self))]
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["channel", "mu", "sigma"])
            for n, m, s in zip(names, self.mu, self.sigma):
                w.writerow([n, repr(float(m)), repr(float(s))])
        return path

    @classmethod
    def from_csv(cls, path) -> "NormStats":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            mu=[float(r["mu"]) for r in rows],
            sigma=[float(r["sigma"]) for r in rows],
            channel_names=[r["channel"] for r in rows],
        )


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, ScenarioSeries):
        return np.asarray(data.values, dtype=float)
    if isinstance(data, (list, tuple)) and data and isinstance(data[0], ScenarioSeries):
        return np.vstack([s.values for s in data])
    arr = np.asarray(data, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def zscore_fit_apply(series, stats: NormStats | None = None):
    """Standardize per channel; fit the statistics when ``stats`` is omitted.

    ``series`` may be a ScenarioSeries, a list of them (pooled), or a
    rows x channels array. Uses the population standard deviation; channels
    whose sigma falls below 1e-12 get sigma = 1 and are flagged.
    """
    x = _as_matrix(series)
    if x.size == 0:
        raise DataError("cannot normalize an empty series")
    bad = np.argwhere(~np.isfinite(x))
    if bad.size:
        row, col = bad[0]
        raise DataError(f"non-finite value at row {row}, channel {col}")
    if stats is None:
        mu = x.mean(axis=0)
        sigma = np.sqrt(((x - mu) ** 2).mean(axis=0))
        flagged = sigma < SIGMA_FLOOR
        sigma = np.where(flagged, 1.0, sigma)
        names = series.channel_names if isinstance(series, ScenarioSeries) else None
        if isinstance(series, (list, tuple)) and series and isinstance(series[0], ScenarioSeries):
            names = series[0].channel_names
        stats = NormStats(mu, sigma, flagged, names)
    elif len(stats) != x.shape[1]:
        raise ShapeError(f"stats cover {len(stats)} channels, data has {x.shape[1]}")
    return (x - stats.mu) / stats.sigma, stats


def inverse_standardize(normalized, stats: NormStats) -> np.ndarray:
    """Map standardized values back to physical units: mu + value * sigma."""
    y = np.asarray(normalized, dtype=float)
    if y.shape[-1] != len(stats):
        raise ShapeError(f"last axis has {y.shape[-1]} channels, stats cover {len(stats)}")
    return stats.mu + y * stats.sigma


def spearman(x, y) -> float:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ShapeError("spearman needs equal-length vectors")
    if x.size < 3:
        raise ShapeError("spearman needs at least 3 observations")
    rx = rankdata(x) - (x.size + 1) / 2.0
    ry = rankdata(y) - (y.size + 1) / 2.0
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0:
        raise UndefinedCorrelationError("rank variance is zero; correlation undefined")
    return float(np.clip((rx @ ry) / denom, -1.0, 1.0))


def feature_correlations(campaign, target_indices) -> np.ndarray:
    """Max |Spearman rho| of every channel against any target, pooled over the campaign."""
    x = _as_matrix(campaign)
    ranks = rankdata(x, axis=0)
    ranks -= ranks.mean(axis=0)
    norms = np.sqrt((ranks**2).sum(axis=0))
    safe = np.where(norms > 0, norms, 1.0)
    unit = ranks / safe
    rho = unit.T @ unit[:, list(target_indices)]
    # zero-variance channels carry no rank information
    rho[norms == 0, :] = 0.0
    return np.abs(np.clip(rho, -1.0, 1.0)).max(axis=1)


def select_features(campaign, target_indices, threshold: float = 0.4) -> list[int]:
    if not campaign:
        raise SelectionError("campaign is empty")
    max_rho = feature_correlations(campaign, target_indices)
    chosen = set(np.flatnonzero(max_rho >= threshold).tolist())
    if not chosen:
        raise SelectionError(f"no channel reaches |rho| >= {threshold}; lower the threshold")
    chosen.update(int(i) for i in target_indices)
    return sorted(chosen)


def write_selection_report(path, names, max_rho, selected) -> Path:
    path = Path(path)
    sel = set(selected)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["channel", "max_abs_rho", "selected"])
        for i, (n, r) in enumerate(zip(names, max_rho)):
            w.writerow([n, f"{float(r):.6f}", int(i in sel)])
    return path


@dataclass(frozen=True)
class WindowConfig:
    window_len: int = 40
    horizon: int = 128
    # spacing between window start offsets; 1 enumerates every offset
    stride: int = 1

    def __post_init__(self):
        if self.window_len < 1 or self.horizon < 1 or self.stride < 1:
            raise WindowError("window_len, horizon and stride must all be >= 1")


@dataclass
class WindowedDataset:
    inputs: np.ndarray
    targets: np.ndarray
    stats: NormStats
    feature_indices: list[int]
    target_indices: list[int]
    # (scenario position, start row) of each sample
    origins: list[tuple[int, int]] = field(default_factory=list)

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def target_stats(self) -> NormStats:
        return self.stats.subset(self.target_indices)

    def subset(self, idx) -> "WindowedDataset":
        idx = np.asarray(idx, dtype=np.intp)
        return WindowedDataset(
            self.inputs[idx],
            self.targets[idx],
            self.stats,
            self.feature_indices,
            self.target_indices,
            [self.origins[i] for i in idx] if self.origins else [],
        )


def make_windows(
    normalized,
    cfg: WindowConfig,
    feature_indices,
    target_indices,
    stats: NormStats,
) -> WindowedDataset:
    """Cut (L x D input, H x K target) pairs at every stride-th start offset.

    ``normalized`` is a list of standardized steps x channels matrices, one per
    scenario; windows never cross a scenario boundary.
    """
    L, H = cfg.window_len, cfg.horizon
    feats = list(feature_indices)
    targs = list(target_indices)
    xs, ys, origins = [], [], []
    for s, mat in enumerate(normalized):
        mat = np.asarray(mat, dtype=float)
        steps = mat.shape[0]
        if steps < L + H:
            raise WindowError(f"scenario {s} has {steps} steps, needs at least {L + H}")
        starts = np.arange(0, steps - L - H + 1, cfg.stride)
        rows = starts[:, None] + np.arange(L + H)[None, :]
        block = mat[rows]
        xs.append(block[:, :L][:, :, feats])
        ys.append(block[:, L:][:, :, targs])
        origins.extend((s, int(st)) for st in starts)
    return WindowedDataset(
        np.concatenate(xs), np.concatenate(ys), stats, feats, targs, origins
    )


def split_campaign(campaign, ratio=(8, 1, 1), seed: int = 0):
    """Assign whole scenarios to train/val/test so no window leaks across splits."""
    n = len(campaign)
    total = sum(ratio)
    if n < total:
        raise SplitError(f"need at least {total} scenarios for ratio {ratio}, got {n}")
    n_val = int(round(n * ratio[1] / total))
    n_test = int(round(n * ratio[2] / total))
    if min(n_val, n_test, n - n_val - n_test) < 1:
        raise SplitError(f"ratio {ratio} leaves an empty split for {n} scenarios")
    order = np.random.default_rng(seed).permutation(n)
    test = sorted(order[:n_test].tolist())
    val = sorted(order[n_test : n_test + n_val].tolist())
    train = sorted(order[n_test + n_val :].tolist())
    pick = lambda idx: [campaign[i] for i in idx]
    return pick(train), pick(val), pick(test)
