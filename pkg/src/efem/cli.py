"""Command line entry point: ``efem <subcommand> [--config PATH] [--seed N] [--out DIR]``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import fuzzy, harness
from .config import load_config
from .dataprep import write_selection_report
from .errors import EfemError
from .scenario import ScenarioSeries, generate_campaign


def _common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="run configuration file (key = value)")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--out", help="override output.dir")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="efem", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write the synthetic scenario campaign as CSV")
    _common(p)
    p = sub.add_parser("select", help="Spearman feature screening and normalization stats")
    _common(p)
    p.add_argument("--data", help="campaign directory written by 'generate' (default: regenerate)")
    p = sub.add_parser("train", help="train one model of the zoo and save a checkpoint")
    _common(p)
    p.add_argument("--model", default="EFEM-BiLSTM", help="zoo entry name")
    p = sub.add_parser("predict", help="MC-dropout forecast with 95%% bands for the test split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("evaluate", help="six-metric evaluation of a checkpoint on the test split")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p = sub.add_parser("compare", help="train and evaluate the model zoo")
    _common(p)
    p.add_argument("--no-plots", action="store_true", help="skip prediction CSVs and SVGs")
    p = sub.add_parser("fuzzy-score", help="score metrics from an expert opinion file")
    _common(p)
    p.add_argument("--opinions", help="opinion file (default: bundled reference panel)")
    p.add_argument("--beta", type=float, default=fuzzy.DEFAULT_BETA)
    return parser


def _config(args):
    return load_config(args.config, train_seed=args.seed, output_dir=args.out)


def _load_campaign(directory: Path):
    files = sorted(directory.glob("scenario_*.csv"))
    if not files:
        raise EfemError(f"no scenario_*.csv files in {directory}")
    return [ScenarioSeries.from_csv(f) for f in files]


def cmd_generate(args, cfg, out: Path):
    camp_dir = out / "campaign"
    camp_dir.mkdir(parents=True, exist_ok=True)
    campaign = generate_campaign(cfg.scenario_config(), cfg.break_sizes())
    for k, s in enumerate(campaign):
        s.to_csv(camp_dir / f"scenario_{k:02d}.csv")
    print(f"wrote {len(campaign)} scenarios to {camp_dir}")


def cmd_select(args, cfg, out: Path):
    campaign = _load_campaign(Path(args.data)) if args.data else None
    data = harness.prepare_data(cfg, campaign)
    out.mkdir(parents=True, exist_ok=True)
    write_selection_report(out / "selection.csv", data.channel_names, data.max_rho, data.feature_indices)
    data.stats.to_csv(out / "norm_stats.csv")
    print(f"selected {len(data.feature_indices)} of {len(data.channel_names)} channels")


def cmd_train(args, cfg, out: Path):
    data = harness.prepare_data(cfg)
    entry = harness.zoo_entry(args.model)
    result = harness.train_model(entry, data, cfg)
    models = out / "models"
    models.mkdir(parents=True, exist_ok=True)
    slug = harness._slug(entry.name)
    ckpt = harness.save_trained(models / f"{slug}.npz", result, data, cfg)
    harness.write_train_log(models / f"{slug}_log.csv", result.log)
    print(f"saved {ckpt}")


def cmd_predict(args, cfg, out: Path):
    data = harness.prepare_data(cfg)
    result = harness.load_trained(args.checkpoint, data)
    export = harness.predictive_band(result, data, cfg)
    paths = harness.write_band_files(out / harness._slug(result.entry.name), export)
    print(f"wrote {len(paths)} files under {out}")


def cmd_evaluate(args, cfg, out: Path):
    data = harness.prepare_data(cfg)
    result = harness.load_trained(args.checkpoint, data)
    row = harness.evaluate_model(result, data.test)
    meta = {"seed": cfg.train_seed, "config_digest": cfg.digest(), "n_test": len(data.test)}
    paths = harness.write_report(out / f"evaluate_{harness._slug(result.entry.name)}", [row], meta)
    print(json.dumps({k: row[k] for k in ("model", *harness.METRICS)}))
    print(f"wrote {paths[0]}")


def cmd_compare(args, cfg, out: Path):
    data = harness.prepare_data(cfg)
    comparison = harness.compare_models(harness.select_zoo(cfg), data, cfg)
    bands = []
    if not args.no_plots:
        name = "EFEM-BiLSTM" if "EFEM-BiLSTM" in comparison.trained else comparison.rows[0]["model"]
        bands.append(harness.predictive_band(comparison.trained[name], data, cfg))
    harness.emit_outputs(out, comparison, bands)
    for r in comparison.rows:
        print(r["model"], " ".join(f"{m}={r[m]:.6g}" for m in harness.METRICS))


def cmd_fuzzy(args, cfg, out: Path):
    matrix = fuzzy.load_opinions(args.opinions)
    scores = fuzzy.score_metrics(matrix, args.beta)
    out.mkdir(parents=True, exist_ok=True)
    path = fuzzy.write_scores(out / "fuzzy_scores.csv", scores)
    lam = fuzzy.derive_loss_weights(scores)
    for m, s in scores.items():
        print(f"{m},{s:.3f}")
    print("loss weights (shape,time,space): " + ",".join(f"{v:.3f}" for v in lam))
    print(f"wrote {path}")


COMMANDS = {
    "generate": cmd_generate,
    "select": cmd_select,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "compare": cmd_compare,
    "fuzzy-score": cmd_fuzzy,
}


def _cap_threads():
    raw = os.environ.get("EFEM_THREADS")
    if raw and raw.isdigit() and int(raw) > 0:
        import numba

        numba.set_num_threads(min(int(raw), numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _cap_threads()
        cfg = _config(args)
        COMMANDS[args.command](args, cfg, Path(cfg.output_dir))
    except (EfemError, OSError) as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
