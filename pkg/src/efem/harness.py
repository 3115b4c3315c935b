"""Training loop, evaluation, the model zoo comparison and file emission."""
from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import fuzzy
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .dataprep import (
    NormStats,
    WindowConfig,
    WindowedDataset,
    feature_correlations,
    make_windows,
    select_features,
    split_campaign,
    zscore_fit_apply,
)
from .errors import ConfigurationError, ShapeError, TrainingError
from .network import NetworkConfig, RecurrentForecaster, adam_step, clip_grad_norm
from .scenario import generate_campaign
from .similarity import composite_loss, hard_dtw_tdi_batch, point_metrics
from .uncertainty import confidence_band, mc_dropout_predict, postprocess

log = logging.getLogger(__name__)

METRICS = ("mse", "rmse", "mae", "mape", "dtw", "tdi")


@dataclass(frozen=True)
class ModelZooEntry:
    name: str
    cell: str
    bidirectional: bool
    residual_head: bool
    loss: str  # "mse" or "efem"

    @property
    def uses_score(self) -> bool:
        return self.loss == "efem"


MODEL_ZOO = (
    ModelZooEntry("RNN", "rnn", False, False, "mse"),
    ModelZooEntry("LSTM", "lstm", False, False, "mse"),
    ModelZooEntry("BiLSTM", "lstm", True, False, "mse"),
    ModelZooEntry("Res-RNN", "rnn", False, True, "mse"),
    ModelZooEntry("Res-LSTM", "lstm", False, True, "mse"),
    ModelZooEntry("Res-BiLSTM", "lstm", True, True, "mse"),
    ModelZooEntry("EFEM-BiLSTM", "lstm", True, True, "efem"),
)
ZOO_BY_NAME = {e.name: e for e in MODEL_ZOO}


def zoo_entry(name: str) -> ModelZooEntry:
    if name not in ZOO_BY_NAME:
        raise ConfigurationError(f"unknown model {name!r}; choose from {', '.join(ZOO_BY_NAME)}")
    return ZOO_BY_NAME[name]


def select_zoo(cfg: RunConfig) -> list[ModelZooEntry]:
    raw = cfg.compare_models.strip()
    if raw.lower() == "all":
        return list(MODEL_ZOO)
    names = [n.strip() for n in raw.split(",") if n.strip()]
    if len(set(names)) != len(names):
        raise ConfigurationError("compare.models lists a model twice")
    return [zoo_entry(n) for n in names]


# ------------------------------------------------------------------ data
@dataclass
class PreparedData:
    train: WindowedDataset
    val: WindowedDataset
    test: WindowedDataset
    feature_indices: list[int]
    target_indices: list[int]
    channel_names: list[str]
    max_rho: np.ndarray
    stats: NormStats
    test_scenarios: list = field(default_factory=list)


def prepare_data(cfg: RunConfig, campaign=None) -> PreparedData:
    """Generate (or reuse) the campaign, split by scenario, fit stats and features on train."""
    if campaign is None:
        campaign = generate_campaign(cfg.scenario_config(), cfg.break_sizes())
    train_s, val_s, test_s = split_campaign(campaign, cfg.split_ratio(), cfg.train_seed)
    targets = list(campaign[0].target_indices)
    features = select_features(train_s, targets, cfg.data_threshold)
    max_rho = feature_correlations(train_s, targets)
    _, stats = zscore_fit_apply(train_s)
    wcfg = WindowConfig(cfg.data_window_len, cfg.data_horizon, cfg.data_stride)

    def windows(scen):
        normed = [zscore_fit_apply(s, stats)[0] for s in scen]
        return make_windows(normed, wcfg, features, targets, stats)

    return PreparedData(
        windows(train_s), windows(val_s), windows(test_s), features, targets,
        list(campaign[0].channel_names), max_rho, stats, test_s,
    )


def network_config(entry: ModelZooEntry, data: PreparedData, cfg: RunConfig, **kw) -> NetworkConfig:
    d = len(data.feature_indices) + (1 if entry.uses_score else 0)
    params = dict(
        input_dim=d,
        n_targets=len(data.target_indices),
        hidden_dim=cfg.network_hidden_dim,
        n_layers=cfg.network_n_layers,
        cell=entry.cell,
        bidirectional=entry.bidirectional,
        residual_head=entry.residual_head,
        linear_dim=cfg.network_linear_dim,
        n_linear=cfg.network_n_linear,
        window_len=cfg.data_window_len,
        horizon=cfg.data_horizon,
        dropout_rate=cfg.network_dropout_rate,
        seed=cfg.train_seed,
    )
    params.update(kw)
    return NetworkConfig(**params)


def loss_weights(cfg: RunConfig) -> tuple[float, float, float]:
    source = cfg.loss_weights.strip().lower()
    if source == "reference":
        return fuzzy.default_loss_weights()
    if source == "fuzzy":
        matrix = fuzzy.load_opinions(cfg.loss_opinions or None)
        return fuzzy.derive_loss_weights(fuzzy.score_metrics(matrix))
    try:
        w = [float(v) for v in cfg.loss_weights.split(",")]
    except ValueError:
        raise ConfigurationError(f"loss.weights {cfg.loss_weights!r} is not understood") from None
    if len(w) != 3 or min(w) < 0 or sum(w) <= 0:
        raise ConfigurationError("explicit loss.weights needs three non-negative numbers")
    total = sum(w)
    return tuple(v / total for v in w)


def with_score(X: np.ndarray, s: float) -> np.ndarray:
    """Append the constant feedback-score channel as the last input feature."""
    chan = np.broadcast_to(fuzzy.score_channel(s, X.shape[1])[None, :, None], X.shape[:2] + (1,))
    return np.concatenate([X, chan], axis=-1)


# -------------------------------------------------------------- training
@dataclass
class TrainResult:
    entry: ModelZooEntry
    model: RecurrentForecaster
    log: list[dict]
    score: float | None
    weights: tuple[float, float, float] | None


def predict(model: RecurrentForecaster, X, score=None, batch=64) -> np.ndarray:
    outs = []
    for lo in range(0, X.shape[0], batch):
        xb = X[lo:lo + batch]
        if score is not None:
            xb = with_score(xb, score)
        outs.append(model.forward(xb, "eval"))
    return np.concatenate(outs)


def series_metrics(y_hat, y) -> dict:
    """Pooled normalized-space MSE/RMSE/MAE plus mean hard DTW and TDI over all series."""
    B, H, K = y.shape
    pm = point_metrics(y_hat, y)
    xs = y_hat.transpose(0, 2, 1).reshape(-1, H)
    ys = y.transpose(0, 2, 1).reshape(-1, H)
    dtw, tdi = hard_dtw_tdi_batch(xs, ys)
    return {"mse": pm["mse"], "rmse": pm["rmse"], "mae": pm["mae"],
            "dtw": float(dtw.mean()), "tdi": float(tdi.mean()),
            "dtw_series": dtw.reshape(B, K), "tdi_series": tdi.reshape(B, K)}


def train_model(entry: ModelZooEntry, data: PreparedData, cfg: RunConfig,
                net_cfg: NetworkConfig | None = None, clip: float | None = None) -> TrainResult:
    """Mini-batch Adam training; the EFEM entry also runs the per-epoch feedback loop."""
    net_cfg = net_cfg or network_config(entry, data, cfg)
    model = RecurrentForecaster(net_cfg)
    rng = np.random.default_rng(cfg.train_seed)
    clip = cfg.train_clip if clip is None else clip
    weights = loss_weights(cfg) if entry.uses_score else None
    X, Y = data.train.inputs, data.train.targets
    n = X.shape[0]
    bs = cfg.train_batch_size
    history: list[dict] = []
    s = fuzzy.feedback_score([], weights) if entry.uses_score else None
    records = []
    for epoch in range(cfg.train_epochs):
        order = rng.permutation(n)
        total = 0.0
        for lo in range(0, n, bs):
            idx = order[lo:lo + bs]
            xb = with_score(X[idx], s) if entry.uses_score else X[idx]
            yb = Y[idx]
            y_hat = model.forward(xb, "train", rng)
            if entry.uses_score:
                loss, grad = composite_loss(y_hat, yb, weights, cfg.loss_gamma)
            else:
                err = y_hat - yb
                loss = float(np.mean(err * err))
                grad = 2.0 * err / err.size
            if not np.isfinite(loss):
                raise TrainingError(f"{entry.name}: non-finite loss at epoch {epoch}")
            model.backward(grad)
            clip_grad_norm(model.params, clip)
            adam_step(model.params, cfg.train_lr, weight_decay=cfg.train_weight_decay)
            total += loss * len(idx)
        rec = {"epoch": epoch, "train_loss": total / n}
        if entry.uses_score:
            rec["score_in"] = s
        if len(data.val):
            vm = series_metrics(predict(model, data.val.inputs, s), data.val.targets)
            rec.update({f"val_{k}": vm[k] for k in ("mse", "dtw", "tdi")})
            if entry.uses_score:
                history.append({k: vm[k] for k in ("dtw", "tdi", "mse")})
                s = fuzzy.feedback_score(history, weights)
                rec["score_out"] = s
        records.append(rec)
        log.info("%s epoch %d loss %.6g", entry.name, epoch, rec["train_loss"])
    return TrainResult(entry, model, records, s, weights)


def checkpoint_extra(result: TrainResult, data: PreparedData, cfg: RunConfig) -> dict:
    return {
        "model_name": result.entry.name,
        "score": result.score,
        "loss_weights": result.weights,
        "feature_indices": data.feature_indices,
        "target_indices": data.target_indices,
        "config_digest": cfg.digest(),
    }


def save_trained(path, result: TrainResult, data: PreparedData, cfg: RunConfig) -> Path:
    return save_checkpoint(path, result.model, extra=checkpoint_extra(result, data, cfg))


def load_trained(path, data: PreparedData) -> TrainResult:
    model, _, extra = load_checkpoint(path)
    if extra.get("feature_indices") != data.feature_indices:
        raise ShapeError("checkpoint feature channels differ from the prepared data")
    entry = zoo_entry(extra["model_name"])
    w = extra.get("loss_weights")
    return TrainResult(entry, model, [], extra.get("score"), tuple(w) if w else None)


# ------------------------------------------------------------ evaluation
def evaluate_model(result: TrainResult, dataset: WindowedDataset) -> dict:
    """Six-metric row (pooled) plus the same metrics per target channel.

    MSE, RMSE, MAE, DTW and TDI are computed on standardized values; MAPE on
    physical units, since standardized targets cross zero.
    """
    cfg = result.model.config
    if dataset.inputs.shape[1:] != (cfg.window_len, cfg.input_dim - (1 if result.entry.uses_score else 0)):
        raise ShapeError("checkpoint input shape does not match the evaluation data")
    y_hat = predict(result.model, dataset.inputs, result.score)
    return metrics_row(result.entry.name, y_hat, dataset)


def metrics_row(name: str, y_hat, dataset: WindowedDataset) -> dict:
    y = dataset.targets
    tstats = dataset.target_stats
    phys_hat = tstats.mu + y_hat * tstats.sigma
    phys = tstats.mu + y * tstats.sigma
    sm = series_metrics(y_hat, y)
    row = {"model": name}
    row.update({k: sm[k] for k in ("mse", "rmse", "mae")})
    row["mape"] = point_metrics(phys_hat, phys)["mape_percent"]
    row["dtw"] = sm["dtw"]
    row["tdi"] = sm["tdi"]
    per = {}
    names = tstats.channel_names or [str(i) for i in range(y.shape[2])]
    for k, cname in enumerate(names):
        pk = point_metrics(y_hat[:, :, k], y[:, :, k])
        per[cname] = {
            "mse": pk["mse"], "rmse": pk["rmse"], "mae": pk["mae"],
            "mape": point_metrics(phys_hat[:, :, k], phys[:, :, k])["mape_percent"],
            "dtw": float(sm["dtw_series"][:, k].mean()),
            "tdi": float(sm["tdi_series"][:, k].mean()),
        }
    row["per_channel"] = per
    return row


def _threads() -> int:
    raw = os.environ.get("EFEM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ConfigurationError(f"EFEM_THREADS must be an integer, got {raw!r}") from None


@dataclass
class ComparisonResult:
    rows: list[dict]
    trained: dict[str, TrainResult]
    meta: dict


def compare_models(zoo, data: PreparedData, cfg: RunConfig) -> ComparisonResult:
    """Train and test every entry on the same data and seed; rows sorted by MSE then name."""
    zoo = list(zoo)
    if len(zoo) < 2:
        raise ConfigurationError("compare needs at least two models")
    names = [e.name for e in zoo]
    if len(set(names)) != len(names):
        raise ConfigurationError("model names must be unique")

    def run(entry):
        res = train_model(entry, data, cfg)
        return res, evaluate_model(res, data.test)

    workers = min(_threads(), len(zoo))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(run, zoo))
    else:
        outcomes = [run(e) for e in zoo]
    trained = {res.entry.name: res for res, _ in outcomes}
    rows = sorted((row for _, row in outcomes), key=lambda r: (r["mse"], r["model"]))
    meta = {"seed": cfg.train_seed, "config_digest": cfg.digest(),
            "n_train": len(data.train), "n_val": len(data.val), "n_test": len(data.test)}
    return ComparisonResult(rows, trained, meta)


# ---------------------------------------------------------------- output
def _fmt(v: float) -> str:
    return f"{v:.10g}"


def write_report(out_dir, rows: list[dict], meta: dict) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "report.csv"
    with csv_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", *METRICS])
        for r in rows:
            w.writerow([r["model"], *(_fmt(r[m]) for m in METRICS)])
    chan_path = out / "report_per_channel.csv"
    with chan_path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "channel", *METRICS])
        for r in rows:
            for cname, vals in r["per_channel"].items():
                w.writerow([r["model"], cname, *(_fmt(vals[m]) for m in METRICS)])
    json_path = out / "report.json"
    payload = {"meta": meta, "models": rows}
    json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return [csv_path, chan_path, json_path]


def write_train_log(path, records: list[dict]) -> Path:
    path = Path(path)
    keys = sorted({k for r in records for k in r}, key=lambda k: (k != "epoch", k))
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(keys)
        for r in records:
            w.writerow([_fmt(r[k]) if isinstance(r.get(k), float) else r.get(k, "") for k in keys])
    return path


def showcase_window(dataset: WindowedDataset, fault_index: int) -> int:
    """Index of the first test window of the first scenario starting at or after the fault."""
    first = dataset.origins[0][0]
    cands = [i for i, (s, st) in enumerate(dataset.origins) if s == first]
    after = [i for i in cands if dataset.origins[i][1] >= fault_index]
    return after[0] if after else cands[-1]


@dataclass
class BandExport:
    model_name: str
    band: object  # ConfidenceBand in physical units, H x K
    truth: np.ndarray
    history: np.ndarray
    time_future: np.ndarray
    time_history: np.ndarray
    channel_names: list[str]


def predictive_band(result: TrainResult, data: PreparedData, cfg: RunConfig, idx=None) -> BandExport:
    test = data.test
    scen = data.test_scenarios[0] if data.test_scenarios else None
    fault_idx = scen.fault_index if scen is not None else 0
    idx = showcase_window(test, fault_idx) if idx is None else idx
    x = test.inputs[idx]
    if result.entry.uses_score:
        x = with_score(x[None], result.score)[0]
    ens = mc_dropout_predict(result.model, x, cfg.uncertainty_n_passes, cfg.train_seed)
    band = postprocess(confidence_band(ens), test.target_stats)
    tstats = test.target_stats
    s_pos, start = test.origins[idx]
    L, H = cfg.data_window_len, cfg.data_horizon
    scen = data.test_scenarios[s_pos]
    t = scen.time_s
    truth = scen.values[start + L:start + L + H][:, data.target_indices]
    history = scen.values[start:start + L][:, data.target_indices]
    return BandExport(result.entry.name, band, truth, history, t[start + L:start + L + H],
                      t[start:start + L], tstats.channel_names)


def _slug(name: str) -> str:
    return "".join(c if c.isalnum() else "_" for c in name).strip("_").lower()


def write_band_files(out_dir, export: BandExport) -> list[Path]:
    """Per-target prediction CSVs and SVG plots (no timestamps, byte-stable)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .uncertainty import write_prediction_csv

    out = Path(out_dir)
    (out / "predictions").mkdir(parents=True, exist_ok=True)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    paths = []
    band = export.band
    with matplotlib.rc_context({"svg.hashsalt": "efem", "svg.fonttype": "none"}):
        for k, cname in enumerate(export.channel_names):
            slug = f"{k:02d}_{_slug(cname)}"
            paths.append(write_prediction_csv(out / "predictions" / f"{slug}.csv",
                                              export.time_future, export.truth, band, k))
            fig, ax = plt.subplots(figsize=(7, 3.2))
            ax.plot(export.time_history, export.history[:, k], color="0.4", lw=1, label="history")
            ax.plot(export.time_future, export.truth[:, k], color="k", lw=1, label="truth")
            ax.plot(export.time_future, band.mean[:, k], color="tab:red", lw=1.2, label="mean forecast")
            ax.fill_between(export.time_future, band.lower[:, k], band.upper[:, k],
                            color="tab:red", alpha=0.25, lw=0, label="95% band")
            ax.set_title(f"{export.model_name}: {cname}", fontsize=9)
            ax.set_xlabel("time (s)")
            ax.legend(fontsize=7, loc="best")
            fig.tight_layout()
            svg = out / "plots" / f"{slug}.svg"
            fig.savefig(svg, format="svg", metadata={"Date": None, "Creator": None})
            plt.close(fig)
            paths.append(svg)
    return paths


def emit_outputs(out_dir, comparison: ComparisonResult, bands: list[BandExport] | None = None) -> list[Path]:
    paths = write_report(out_dir, comparison.rows, comparison.meta)
    for b in bands or []:
        paths.extend(write_band_files(Path(out_dir) / _slug(b.model_name), b))
    return paths
