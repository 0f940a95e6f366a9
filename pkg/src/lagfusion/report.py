"""Report tables derived from prediction files.

Everything here is recomputable from the prediction CSVs alone; no training
state is consulted, so a report can always be regenerated byte-identically.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .metrics import (
    BootstrapResult,
    FoldMetrics,
    LagBinReport,
    ModelSummary,
    fold_metrics,
    matched_fold_bootstrap,
    summarize_model,
)


def per_fold_metrics(preds: dict[str, np.ndarray]) -> list[FoldMetrics]:
    """Split concatenated prediction rows into (model, seed, fold) groups and
    score each group."""
    out = []
    models = preds["model"]
    seeds = preds["seed"]
    folds = preds["fold"]
    keys = sorted({(str(m), int(s), int(f)) for m, s, f in zip(models, seeds, folds)})
    for model, seed, fold in keys:
        mask = (models == model) & (seeds == seed) & (folds == fold)
        out.append(fold_metrics(model, seed, fold, preds["probability"][mask],
                                preds["label"][mask], preds["future_return"][mask]))
    return out


def summarize(preds: dict[str, np.ndarray]) -> dict[str, ModelSummary]:
    rows = per_fold_metrics(preds)
    by_model: dict[str, list[FoldMetrics]] = {}
    for r in rows:
        by_model.setdefault(r.model, []).append(r)
    return {m: summarize_model(v) for m, v in sorted(by_model.items())}


def pairwise_bootstrap(summaries: dict[str, ModelSummary], model_a: str, model_b: str,
                       resamples: int = 10000, seed: int = 0) -> BootstrapResult:
    """Matched-fold bootstrap on seed-averaged per-fold Sharpe, restricted to
    folds where both models have a defined value."""
    fa = summaries[model_a].fold_means
    fb = summaries[model_b].fold_means
    common = sorted(set(fa) & set(fb))
    return matched_fold_bootstrap({f: fa[f] for f in common}, {f: fb[f] for f in common},
                                  resamples=resamples, seed=seed)


def _fmt(x, digits: int = 6) -> str:
    if x is None:
        return "n/a"
    return f"{x:.{digits}f}"


def write_main_csv(path: Path, summaries: dict[str, ModelSummary],
                   baselines: list[str]) -> None:
    names = sorted(summaries)
    avail = [b for b in baselines if b in summaries]
    header = ["model", "n_seeds", "n_folds", "mean_sharpe", "std_seeds", "std_folds",
              "ci95_lo", "ci95_hi", "mean_sharpe_windows"]
    header += [f"delta_vs_{b}" for b in avail]
    header += ["hit_rate", "mean_trades", "mean_drawdown"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for name in names:
            s = summaries[name]
            ci_lo = ci_hi = None
            if s.mean_sharpe is not None and s.ci_half_width is not None:
                ci_lo, ci_hi = s.mean_sharpe - s.ci_half_width, s.mean_sharpe + s.ci_half_width
            row = [name, s.n_seeds, s.n_folds, _fmt(s.mean_sharpe), _fmt(s.std_seeds),
                   _fmt(s.std_folds), _fmt(ci_lo), _fmt(ci_hi), _fmt(s.mean_sharpe_windows)]
            for b in avail:
                base = summaries[b].mean_sharpe
                delta = None
                if base is not None and s.mean_sharpe is not None:
                    delta = s.mean_sharpe - base
                row.append(_fmt(delta))
            row += [_fmt(s.mean_hit_rate), _fmt(s.mean_trades, 2), _fmt(s.mean_drawdown)]
            w.writerow(row)


def write_aux_csv(path: Path, summaries: dict[str, ModelSummary]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "auc", "brier", "hit_rate"])
        for name in sorted(summaries):
            s = summaries[name]
            w.writerow([name, _fmt(s.mean_auc), _fmt(s.mean_brier), _fmt(s.mean_hit_rate)])


def write_bootstrap_csv(path: Path, results: dict[tuple[str, str], BootstrapResult]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["model", "baseline", "mean_delta", "ci95_lo", "ci95_hi",
                    "positive_folds", "n_folds", "resamples"])
        for (a, b), r in sorted(results.items()):
            w.writerow([a, b, _fmt(r.mean_delta), _fmt(r.ci_lo), _fmt(r.ci_hi),
                        r.positive_folds, r.n_folds, r.resamples])


def write_lag_csv(path: Path, report: LagBinReport) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_lo", "bin_hi", "count", "annualised_sharpe", "low_count"])
        for row in report.rows():
            w.writerow([_fmt(row["bin_lo"], 1), _fmt(row["bin_hi"], 1), row["count"],
                        _fmt(row["sharpe"], 4), int(row["low_count"])])


def render_text(summaries: dict[str, ModelSummary],
                boot: dict[tuple[str, str], BootstrapResult]) -> str:
    lines = ["model            mean_SR  std(seeds)  95% CI            hit    AUC     Brier"]
    for name in sorted(summaries):
        s = summaries[name]
        if s.mean_sharpe is not None and s.ci_half_width is not None:
            ci = f"[{s.mean_sharpe - s.ci_half_width:+.3f}, {s.mean_sharpe + s.ci_half_width:+.3f}]"
        else:
            ci = "n/a"
        lines.append(
            f"{name:16s} {_fmt(s.mean_sharpe, 3):>7s}  {_fmt(s.std_seeds, 3):>9s}  {ci:16s}  "
            f"{_fmt(s.mean_hit_rate, 3):>5s}  {_fmt(s.mean_auc, 3):>5s}  {_fmt(s.mean_brier, 3):>5s}")
    if boot:
        lines.append("")
        lines.append("matched-fold bootstrap (seed-averaged fold Sharpe deltas):")
        for (a, b), r in sorted(boot.items()):
            lines.append(f"  {a} - {b}: delta={r.mean_delta:+.3f} "
                         f"CI[{r.ci_lo:+.3f}, {r.ci_hi:+.3f}] "
                         f"positive {r.positive_folds}/{r.n_folds} folds")
    return "\n".join(lines) + "\n"


def build_report(preds: dict[str, np.ndarray], out_dir: str | Path,
                 baselines: list[str] | None = None,
                 bootstrap_resamples: int = 10000, bootstrap_seed: int = 0) -> dict:
    """Emit main/auxiliary/bootstrap CSVs, a JSON dump and a text rendering.

    ``baselines`` names the delta columns; pairs missing from the run are
    skipped with a warning entry rather than failing the whole report.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    summaries = summarize(preds)
    baselines = baselines or []
    warnings = [f"baseline '{b}' not present in predictions; delta column omitted"
                for b in baselines if b not in summaries]
    boot: dict[tuple[str, str], BootstrapResult] = {}
    for b in baselines:
        if b not in summaries:
            continue
        for name in summaries:
            if name == b:
                continue
            common = set(summaries[name].fold_means) & set(summaries[b].fold_means)
            if len(common) >= 2:
                boot[(name, b)] = pairwise_bootstrap(summaries, name, b,
                                                     resamples=bootstrap_resamples,
                                                     seed=bootstrap_seed)
    write_main_csv(out_dir / "main_comparison.csv", summaries, baselines)
    write_aux_csv(out_dir / "auxiliary_metrics.csv", summaries)
    if boot:
        write_bootstrap_csv(out_dir / "bootstrap.csv", boot)
    text = render_text(summaries, boot)
    (out_dir / "report.txt").write_text(text)
    payload = {
        "models": {name: {k: v for k, v in asdict(s).items()}
                   for name, s in summaries.items()},
        "bootstrap": {f"{a}__vs__{b}": asdict(r) for (a, b), r in boot.items()},
        "warnings": warnings,
    }
    with open(out_dir / "report.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload
