"""Batch command-line front end.

Commands: ``synth`` (generate a corpus), ``build`` (align a dataset),
``train`` (walk-forward experiment), ``report`` (tables from predictions),
``lag-analysis`` (signal Sharpe by lag bin).

Every flag has a counterpart key in a flat INI config file (section named
after the command, underscores for dashes); explicit flags win over config
values, which win over defaults. Exit codes: 0 success, 1 validation
failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import report as report_mod
from .data import (
    AlignedDataset,
    ValidationError,
    WebSchema,
    align_bars,
    align_event,
    load_ohlcv,
    load_web,
)
from .metrics import lag_signal_sharpe
from .models import MODEL_KINDS, ConfigError, ModelConfig
from .synth import SynthConfig, write_corpus
from .walkforward import TrainConfig, get_protocol, load_run_predictions, run_experiment

logger = logging.getLogger(__name__)


class CliError(ValidationError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse would sys.exit(2) on usage errors; route through the
    # validation-failure path (exit 1) instead.
    def error(self, message):
        raise CliError(message)


def _load_config(path: str | None, section: str) -> dict[str, str]:
    if not path:
        return {}
    cp = configparser.ConfigParser()
    read = cp.read(path)
    if not read:
        raise CliError(f"config file not found: {path}")
    if not cp.has_section(section):
        return {}
    return dict(cp.items(section))


def _opt(args, cfg: dict[str, str], name: str, default, cast=str):
    """flag > config > default."""
    flag_val = getattr(args, name.replace("-", "_"), None)
    if flag_val is not None:
        return flag_val
    if name in cfg:
        raw = cfg[name]
        if cast is bool:
            return raw.strip().lower() in ("1", "true", "yes", "on")
        return cast(raw)
    return default


def _split_csv(value) -> list[str]:
    if isinstance(value, list):
        return value
    return [v.strip() for v in str(value).split(",") if v.strip()]


# -- commands ----------------------------------------------------------------------


def cmd_synth(args) -> int:
    cfg = _load_config(args.config, "synth")
    out = Path(_opt(args, cfg, "out", None) or _fail("synth: --out is required"))
    kwargs = {}
    for name, cast in [("n_bars", int), ("seed", int), ("sigma_bar", float), ("drift", float),
                       ("events_per_day", float), ("jump_scale", float),
                       ("signal_strength", float), ("utility_gain", float),
                       ("reversal_gain", float), ("tau_max", float), ("horizon_bars", int),
                       ("embedding_noise", float), ("distractor_dims", int),
                       ("start_price", float)]:
        val = _opt(args, cfg, name, None, cast)
        if val is not None:
            kwargs[name] = cast(val)
    lo = _opt(args, cfg, "window_lo", None, float)
    hi = _opt(args, cfg, "window_hi", None, float)
    if (lo is None) != (hi is None):
        raise CliError("synth: provide both window-lo and window-hi or neither")
    if lo is not None:
        kwargs["utility_window"] = (float(lo), float(hi))
    try:
        synth_config = SynthConfig(**kwargs)
    except ValueError as exc:
        raise CliError(f"synth: invalid config: {exc}") from exc
    manifest = write_corpus(synth_config, out)
    print(f"wrote corpus to {out} ({manifest['n_bars']} bars, "
          f"{manifest['n_snapshots']} snapshots, seed {synth_config.seed})")
    return 0


def cmd_build(args) -> int:
    cfg = _load_config(args.config, "build")
    prices = _opt(args, cfg, "prices", None) or _fail("build: --prices is required")
    web_path = _opt(args, cfg, "web", None) or _fail("build: --web is required")
    out = _opt(args, cfg, "out", None) or _fail("build: --out is required")
    schema_path = _opt(args, cfg, "schema", None)
    schema = WebSchema.load(schema_path) if schema_path else WebSchema()
    tau_max = _opt(args, cfg, "tau_max", 180.0, float)
    window = _opt(args, cfg, "window", 64, int)
    horizon = _opt(args, cfg, "horizon", 4, int)
    asset = _opt(args, cfg, "asset", "SYNTH")
    min_strength = _opt(args, cfg, "min_strength", None, float)
    strength_field = _opt(args, cfg, "strength_field", None)

    bars, bar_report = load_ohlcv(prices)
    web, web_report = load_web(web_path, schema)
    for lineno, reason in bar_report.rejected + web_report.rejected:
        print(f"  rejected line {lineno}: {reason}", file=sys.stderr)
    if bar_report.rejected or web_report.rejected:
        raise CliError(
            f"build: {len(bar_report.rejected)} bar rows and "
            f"{len(web_report.rejected)} web lines failed validation")
    dataset = align_event(bars, web, tau_max=tau_max, window_len=window, horizon=horizon,
                          asset=asset, min_strength=min_strength,
                          strength_field=strength_field)
    dataset.save(out)
    stats = dataset.stats()
    print(f"dataset written to {out}")
    print(stats.format())
    print(f"dropped: {dataset.meta['n_dropped_lag']} beyond tau_max"
          + (f", {dataset.meta['n_dropped_strength']} below min_strength"
             if min_strength is not None else ""))
    print(f"hash: {dataset.content_hash()}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config, "train")
    dataset_path = _opt(args, cfg, "dataset", None) or _fail("train: --dataset is required")
    out = _opt(args, cfg, "out", None) or _fail("train: --out is required")
    protocol = get_protocol(_opt(args, cfg, "protocol", "nonoverlap"))
    kinds = _split_csv(_opt(args, cfg, "kinds", "price_tx,gated_xattn"))
    seeds = [int(s) for s in _split_csv(_opt(args, cfg, "seeds", "0"))]
    jobs = _opt(args, cfg, "jobs", 1, int)
    for kind in kinds:
        if kind not in MODEL_KINDS:
            raise CliError(f"train: unknown model kind '{kind}'; known: {', '.join(MODEL_KINDS)}")
    train_config = TrainConfig(
        epochs=_opt(args, cfg, "epochs", 30, int),
        patience=_opt(args, cfg, "patience", 7, int),
        batch_size=_opt(args, cfg, "batch", 64, int),
        lr=_opt(args, cfg, "lr", 1e-3, float),
        weight_decay=_opt(args, cfg, "wd", 1e-3, float),
    )
    model_config = ModelConfig(
        kind=kinds[0],
        dropout=_opt(args, cfg, "dropout", 0.3, float),
        d=_opt(args, cfg, "d", 32, int),
        heads=_opt(args, cfg, "heads", 4, int),
        price_layers=_opt(args, cfg, "layers", 2, int),
    )
    dataset = AlignedDataset.load(dataset_path)
    manifest = run_experiment(dataset, out, protocol, kinds, seeds,
                              model_config=model_config, train_config=train_config,
                              jobs=jobs, progress=True)
    done = sum(1 for r in manifest.records.values() if r.status == "done")
    skipped = len(manifest.records) - done
    print(f"run complete: {done} trained, {skipped} skipped, manifest at {manifest.path}")
    return 0


def cmd_report(args) -> int:
    cfg = _load_config(args.config, "report")
    run_dir = _opt(args, cfg, "run", None) or _fail("report: --run is required")
    out = _opt(args, cfg, "out", None) or str(Path(run_dir) / "report")
    baselines = _split_csv(_opt(args, cfg, "baselines", "price_tx"))
    resamples = _opt(args, cfg, "resamples", 10000, int)
    boot_seed = _opt(args, cfg, "bootstrap_seed", 0, int)
    preds = load_run_predictions(run_dir)
    payload = report_mod.build_report(preds, out, baselines=baselines,
                                      bootstrap_resamples=resamples, bootstrap_seed=boot_seed)
    for warning in payload["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    print((Path(out) / "report.txt").read_text(), end="")
    print(f"tables written to {out}")
    return 0


def cmd_lag_analysis(args) -> int:
    cfg = _load_config(args.config, "lag-analysis")
    prices = _opt(args, cfg, "prices", None) or _fail("lag-analysis: --prices is required")
    web_path = _opt(args, cfg, "web", None) or _fail("lag-analysis: --web is required")
    out = _opt(args, cfg, "out", None) or _fail("lag-analysis: --out is required")
    schema_path = _opt(args, cfg, "schema", None)
    schema = WebSchema.load(schema_path) if schema_path else WebSchema()
    tau_max = _opt(args, cfg, "tau_max", 180.0, float)
    horizon = _opt(args, cfg, "horizon", 4, int)
    bin_width = _opt(args, cfg, "bin_width", 30.0, float)

    bars, _ = load_ohlcv(prices)
    web, _ = load_web(web_path, schema)
    aligned = align_bars(bars, web, tau_max=tau_max, horizon=horizon)
    rep = lag_signal_sharpe(aligned.tau_lag, aligned.direction_score, aligned.future_return,
                            tau_max=tau_max, bin_width=bin_width, horizon_bars=horizon)
    report_mod.write_lag_csv(Path(out), rep)
    print(f"{len(aligned)} bar-aligned samples")
    for row in rep.rows():
        flag = "  (low count)" if row["low_count"] else ""
        sr = "n/a" if row["sharpe"] is None else f"{row['sharpe']:+.3f}"
        print(f"  [{row['bin_lo']:5.1f}, {row['bin_hi']:5.1f}) n={row['count']:5d} SR={sr}{flag}")
    print(f"lag table written to {out}")
    return 0


def _fail(message: str):
    raise CliError(message)


def build_parser() -> _Parser:
    parser = _Parser(prog="lagfusion",
                     description="Asynchronous multimodal fusion: corpus, training, evaluation.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", help="INI config file; section per command")
        p.add_argument("--out", help="output path")

    p = sub.add_parser("synth", help="generate a synthetic corpus")
    add_common(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-bars", type=int)
    p.add_argument("--events-per-day", type=float)
    p.add_argument("--signal-strength", type=float)
    p.add_argument("--window-lo", type=float)
    p.add_argument("--window-hi", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("build", help="align a corpus into a dataset")
    add_common(p)
    p.add_argument("--prices")
    p.add_argument("--web")
    p.add_argument("--schema")
    p.add_argument("--tau-max", type=float)
    p.add_argument("--window", type=int)
    p.add_argument("--horizon", type=int)
    p.add_argument("--asset")
    p.add_argument("--min-strength", type=float)
    p.add_argument("--strength-field")
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("train", help="walk-forward experiment")
    add_common(p)
    p.add_argument("--dataset")
    p.add_argument("--protocol", choices=["standard", "scaling", "nonoverlap"])
    p.add_argument("--kinds", help="comma-separated model kinds")
    p.add_argument("--seeds", help="comma-separated seeds")
    p.add_argument("--jobs", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--wd", type=float)
    p.add_argument("--dropout", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("report", help="tables from a run's predictions")
    add_common(p)
    p.add_argument("--run")
    p.add_argument("--baselines", help="comma-separated baseline kinds for delta columns")
    p.add_argument("--resamples", type=int)
    p.add_argument("--bootstrap-seed", type=int)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("lag-analysis", help="signal Sharpe stratified by modality lag")
    add_common(p)
    p.add_argument("--prices")
    p.add_argument("--web")
    p.add_argument("--schema")
    p.add_argument("--tau-max", type=float)
    p.add_argument("--horizon", type=int)
    p.add_argument("--bin-width", type=float)
    p.set_defaults(func=cmd_lag_analysis)

    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except (CliError, ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit 2
        print(f"runtime failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
