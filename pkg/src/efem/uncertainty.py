"""Monte Carlo dropout ensembles, 95% bands and export in physical units."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataprep import NormStats, inverse_standardize
from .errors import ConfigurationError, ShapeError

Z95 = 1.96
DEFAULT_PASSES = 100


@dataclass
class PredictiveEnsemble:
    passes: np.ndarray  # n_passes x [B x] H x K
    seed: int

    @property
    def n_passes(self) -> int:
        return self.passes.shape[0]


@dataclass
class ConfidenceBand:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    level: float = 0.95
    units: str = "normalized"

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower


def mc_dropout_predict(model, window, n_passes: int = DEFAULT_PASSES, seed: int = 0) -> PredictiveEnsemble:
    """Stochastic forward passes with dropout kept active.

    ``window`` is one L x D input or a batch (B, L, D). Pass ``p`` draws its
    masks from its own stream seeded by ``(seed, p)``, so the ensemble does
    not depend on evaluation order.
    """
    if n_passes < 2:
        raise ConfigurationError("n_passes must be >= 2")
    x = np.asarray(window, dtype=float)
    single = x.ndim == 2
    if single:
        x = x[None]
    outs = []
    for p in range(n_passes):
        rng = np.random.default_rng([seed, p])
        y = model.forward(x, mode="mc", rng=rng)
        outs.append(y[0] if single else y)
    return PredictiveEnsemble(np.stack(outs), seed)


def confidence_band(ens: PredictiveEnsemble) -> ConfidenceBand:
    passes = np.asarray(ens.passes, dtype=float)
    # reduce offsets from the first pass so identical passes give exactly zero width
    d = passes - passes[0]
    mu = passes[0] + d.mean(axis=0)
    sd = d.std(axis=0, ddof=1)
    return ConfidenceBand(mu, mu - Z95 * sd, mu + Z95 * sd)


def postprocess(band: ConfidenceBand, stats: NormStats, target_indices=None) -> ConfidenceBand:
    """Inverse-standardize a band; ``stats`` may cover all channels or just the targets."""
    if target_indices is not None:
        stats = stats.subset(target_indices)
    if band.mean.shape[-1] != len(stats):
        raise ShapeError(f"band has {band.mean.shape[-1]} channels, stats cover {len(stats)}")
    return ConfidenceBand(
        inverse_standardize(band.mean, stats),
        inverse_standardize(band.lower, stats),
        inverse_standardize(band.upper, stats),
        band.level,
        "physical",
    )


def coverage(band: ConfidenceBand, truth) -> float:
    truth = np.asarray(truth, dtype=float)
    inside = (truth >= band.lower) & (truth <= band.upper)
    return float(inside.mean())


def write_prediction_csv(path, time_s, truth, band: ConfidenceBand, channel: int) -> Path:
    """Per-channel export of one forecast window."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "time_s", "truth", "mean", "lower95", "upper95"])
        for h in range(band.mean.shape[0]):
            w.writerow([
                h + 1,
                f"{float(time_s[h]):.1f}",
                f"{float(truth[h, channel]):.6f}",
                f"{float(band.mean[h, channel]):.6f}",
                f"{float(band.lower[h, channel]):.6f}",
                f"{float(band.upper[h, channel]):.6f}",
            ])
    return path
