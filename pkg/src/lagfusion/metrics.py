"""Classification, calibration, trading and interval statistics.

All functions are pure over immutable prediction arrays. Metrics that can be
undefined (single-class AUC, Sharpe of fewer than two trades, hit rate with
no trades) return ``None`` rather than a sentinel number, and report builders
propagate the missingness explicitly.

Sharpe conventions: the primary ``sharpe`` scales by the square root of the
number of executed trades; the alternative that scales by the number of test
windows in scope is reported alongside as ``sharpe_windows`` wherever both
make sense, because the two diverge exactly when many predictions stay flat.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as _scipy_stats
from scipy.stats import rankdata

LONG_THRESHOLD = 0.55
SHORT_THRESHOLD = 0.45

#: Two-sided 95% Student-t quantiles (t_{0.975, df}) for df = 1..30.
T_TABLE_95 = {
    1: 12.7062, 2: 4.3027, 3: 3.1824, 4: 2.7764, 5: 2.5706,
    6: 2.4469, 7: 2.3646, 8: 2.3060, 9: 2.2622, 10: 2.2281,
    11: 2.2010, 12: 2.1788, 13: 2.1604, 14: 2.1448, 15: 2.1314,
    16: 2.1199, 17: 2.1098, 18: 2.1009, 19: 2.0930, 20: 2.0860,
    21: 2.0796, 22: 2.0739, 23: 2.0687, 24: 2.0639, 25: 2.0595,
    26: 2.0555, 27: 2.0518, 28: 2.0484, 29: 2.0452, 30: 2.0423,
}


def t_quantile_95(df: int) -> float:
    if df < 1:
        raise ValueError("t quantile needs df >= 1")
    if df in T_TABLE_95:
        return T_TABLE_95[df]
    return float(_scipy_stats.t.ppf(0.975, df))


def auc(probabilities: np.ndarray, labels: np.ndarray) -> float | None:
    """Rank-based AUC, identical to the Mann-Whitney statistic
    P(score+ > score-) + 0.5 * P(tie). ``None`` when one class is absent."""
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels)
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(p, method="average")
    pos_rank_sum = ranks[y == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def brier(probabilities: np.ndarray, labels: np.ndarray) -> float:
    p = np.asarray(probabilities, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean((p - y) ** 2))


@dataclass
class TradeRecord:
    sample_id: int
    position: str           # "long" | "short" | "flat"
    realized_return: float  # 0.0 when flat
    tau_lag: float = 0.0
    fold: int = -1
    seed: int = -1


def threshold_trades(probabilities: np.ndarray, future_returns: np.ndarray,
                     theta_long: float = LONG_THRESHOLD,
                     theta_short: float = SHORT_THRESHOLD,
                     sample_ids: np.ndarray | None = None) -> list[TradeRecord]:
    """Inclusive threshold rule: long when p >= theta_long, short when
    p <= theta_short, flat otherwise. Shorts realize the negated return."""
    if not theta_short < theta_long:
        raise ValueError(f"need theta_short < theta_long, got {theta_short} >= {theta_long}")
    p = np.asarray(probabilities, dtype=np.float64)
    r = np.asarray(future_returns, dtype=np.float64)
    ids = np.arange(len(p)) if sample_ids is None else np.asarray(sample_ids)
    out = []
    for i in range(len(p)):
        if p[i] >= theta_long:
            out.append(TradeRecord(int(ids[i]), "long", float(r[i])))
        elif p[i] <= theta_short:
            out.append(TradeRecord(int(ids[i]), "short", float(-r[i])))
        else:
            out.append(TradeRecord(int(ids[i]), "flat", 0.0))
    return out


def executed_returns(trades: list[TradeRecord]) -> np.ndarray:
    return np.array([t.realized_return for t in trades if t.position != "flat"])


def sharpe(returns: np.ndarray, n_periods: int | None = None) -> float | None:
    """mean/std(ddof=1) scaled by sqrt(n_periods).

    ``n_periods`` defaults to the number of returns (trade-count convention);
    pass the test-window count for the windows convention. ``None`` when
    fewer than two returns or zero dispersion.
    """
    r = np.asarray(returns, dtype=np.float64)
    if len(r) < 2:
        return None
    sd = r.std(ddof=1)
    if sd == 0.0:
        return None
    n = len(r) if n_periods is None else n_periods
    return float(r.mean() / sd * math.sqrt(n))


def max_drawdown(returns: np.ndarray) -> float:
    """Worst peak-to-trough decline of the cumulative-sum equity curve,
    reported as a number <= 0 (0 for a monotone curve or no trades)."""
    r = np.asarray(returns, dtype=np.float64)
    if len(r) == 0:
        return 0.0
    equity = np.cumsum(r)
    running_max = np.maximum.accumulate(np.concatenate([[0.0], equity]))[1:]
    return float(np.minimum(equity - running_max, 0.0).min())


def hit_rate(trades: list[TradeRecord]) -> float | None:
    """Fraction of executed trades with strictly positive realized return
    (a zero-return trade counts as a miss). ``None`` with no trades."""
    executed = [t for t in trades if t.position != "flat"]
    if not executed:
        return None
    return sum(1 for t in executed if t.realized_return > 0.0) / len(executed)


# -- lag-stratified signal analysis ----------------------------------------------


@dataclass
class LagBinReport:
    bin_edges: list[tuple[float, float]]
    counts: list[int]
    sharpes: list[float | None]
    low_count: list[bool]
    periods_per_year: float

    def rows(self) -> list[dict]:
        return [
            {"bin_lo": lo, "bin_hi": hi, "count": c,
             "sharpe": s, "low_count": flag}
            for (lo, hi), c, s, flag in zip(self.bin_edges, self.counts, self.sharpes,
                                            self.low_count)
        ]


def lag_signal_sharpe(tau_lag: np.ndarray, direction_score: np.ndarray,
                      future_return: np.ndarray, tau_max: float = 180.0,
                      bin_width: float = 30.0, horizon_bars: int = 4,
                      low_count_threshold: int = 10) -> LagBinReport:
    """Annualised Sharpe of the sign(direction_score) rule per lag bin.

    Bins [k*w, (k+1)*w) partition [0, tau_max] (the last bin is closed above).
    The annualisation factor is sqrt((365*24*4)/H) for 15-minute bars held H
    bars. Bins under ``low_count_threshold`` samples are flagged.
    """
    tau = np.asarray(tau_lag, dtype=np.float64)
    s = np.sign(np.asarray(direction_score, dtype=np.float64))
    r = s * np.asarray(future_return, dtype=np.float64)
    periods = 365.0 * 24.0 * 4.0 / horizon_bars
    n_bins = int(math.ceil(tau_max / bin_width))
    edges, counts, sharpes, flags = [], [], [], []
    for k in range(n_bins):
        lo = k * bin_width
        hi = min((k + 1) * bin_width, tau_max)
        in_bin = (tau >= lo) & ((tau < hi) if k < n_bins - 1 else (tau <= hi))
        active = in_bin & (s != 0.0)
        rr = r[active]
        ann = None
        if len(rr) >= 2 and rr.std(ddof=1) > 0.0:
            ann = float(rr.mean() / rr.std(ddof=1) * math.sqrt(periods))
        edges.append((lo, hi))
        counts.append(int(in_bin.sum()))
        sharpes.append(ann)
        flags.append(int(in_bin.sum()) < low_count_threshold)
    return LagBinReport(edges, counts, sharpes, flags, periods)


# -- interval statistics -----------------------------------------------------------


def seed_t_interval(seed_means: np.ndarray) -> tuple[float, float]:
    """Mean and 95% t-interval half-width over per-seed means (n >= 2)."""
    x = np.asarray(seed_means, dtype=np.float64)
    n = len(x)
    if n < 2:
        raise ValueError("t interval needs at least 2 seed means")
    half = t_quantile_95(n - 1) * x.std(ddof=1) / math.sqrt(n)
    return float(x.mean()), float(half)


@dataclass
class BootstrapResult:
    mean_delta: float
    ci_lo: float
    ci_hi: float
    n_folds: int
    positive_folds: int
    resamples: int

    @property
    def half_width(self) -> float:
        return (self.ci_hi - self.ci_lo) / 2.0


def matched_fold_bootstrap(fold_values_a: dict[int, float], fold_values_b: dict[int, float],
                           resamples: int = 10000, seed: int = 0,
                           lower_pct: float = 2.5, upper_pct: float = 97.5) -> BootstrapResult:
    """Percentile bootstrap CI for the mean per-fold delta between two models
    evaluated on identical fold assignments (values are each fold's metric,
    already averaged across seeds). Fold resampling is with replacement."""
    if set(fold_values_a) != set(fold_values_b):
        raise ValueError("matched-fold bootstrap requires identical fold sets")
    folds = sorted(fold_values_a)
    deltas = np.array([fold_values_a[f] - fold_values_b[f] for f in folds])
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0xB007)))
    idx = rng.integers(0, len(deltas), size=(resamples, len(deltas)))
    means = deltas[idx].mean(axis=1)
    lo, hi = np.percentile(means, [lower_pct, upper_pct])
    return BootstrapResult(
        mean_delta=float(deltas.mean()),
        ci_lo=float(lo), ci_hi=float(hi),
        n_folds=len(deltas),
        positive_folds=int((deltas > 0.0).sum()),
        resamples=resamples,
    )


# -- per-fold metric bundles -------------------------------------------------------


@dataclass
class FoldMetrics:
    model: str
    seed: int
    fold: int
    n_test: int
    auc: float | None
    brier: float
    sharpe: float | None          # trade-count convention
    sharpe_windows: float | None  # test-window convention
    hit_rate: float | None
    max_drawdown: float
    n_trades: int


def fold_metrics(model: str, seed: int, fold: int, probabilities: np.ndarray,
                 labels: np.ndarray, future_returns: np.ndarray) -> FoldMetrics:
    trades = threshold_trades(probabilities, future_returns)
    rets = executed_returns(trades)
    return FoldMetrics(
        model=model, seed=seed, fold=fold, n_test=len(probabilities),
        auc=auc(probabilities, labels),
        brier=brier(probabilities, labels),
        sharpe=sharpe(rets),
        sharpe_windows=sharpe(rets, n_periods=len(probabilities)),
        hit_rate=hit_rate(trades),
        max_drawdown=max_drawdown(rets),
        n_trades=len(rets),
    )


@dataclass
class ModelSummary:
    """Aggregates for one model across folds and seeds."""

    model: str
    n_folds: int
    n_seeds: int
    mean_sharpe: float | None          # mean of per-seed means
    std_seeds: float | None            # std (ddof=1) of per-seed means
    std_folds: float | None            # std across all (seed, fold) values
    ci_half_width: float | None        # 95% t-interval over seed means
    mean_sharpe_windows: float | None
    mean_auc: float | None
    mean_brier: float | None
    mean_hit_rate: float | None
    mean_drawdown: float | None
    mean_trades: float | None
    seed_means: dict[int, float] = field(default_factory=dict)
    fold_means: dict[int, float] = field(default_factory=dict)  # per fold, averaged over seeds


def _mean_or_none(values: list[float]) -> float | None:
    return float(np.mean(values)) if values else None


def summarize_model(rows: list[FoldMetrics]) -> ModelSummary:
    """Aggregate one model's fold metrics at both reporting levels: across
    seed means (headline mean, std, t-interval) and across pooled fold values."""
    model = rows[0].model
    seeds = sorted({r.seed for r in rows})
    by_seed: dict[int, list[float]] = {s: [] for s in seeds}
    by_fold: dict[int, list[float]] = {}
    pooled = []
    for r in rows:
        if r.sharpe is None:
            continue
        by_seed[r.seed].append(r.sharpe)
        by_fold.setdefault(r.fold, []).append(r.sharpe)
        pooled.append(r.sharpe)
    seed_means = {s: float(np.mean(v)) for s, v in by_seed.items() if v}
    fold_means = {f: float(np.mean(v)) for f, v in by_fold.items()}
    means = np.array(list(seed_means.values()))
    ci = None
    if len(means) >= 2:
        _, ci = seed_t_interval(means)
    return ModelSummary(
        model=model,
        n_folds=len({r.fold for r in rows}),
        n_seeds=len(seeds),
        mean_sharpe=float(means.mean()) if len(means) else None,
        std_seeds=float(means.std(ddof=1)) if len(means) >= 2 else None,
        std_folds=float(np.std(pooled, ddof=1)) if len(pooled) >= 2 else None,
        ci_half_width=ci,
        mean_sharpe_windows=_mean_or_none([r.sharpe_windows for r in rows
                                           if r.sharpe_windows is not None]),
        mean_auc=_mean_or_none([r.auc for r in rows if r.auc is not None]),
        mean_brier=_mean_or_none([r.brier for r in rows]),
        mean_hit_rate=_mean_or_none([r.hit_rate for r in rows if r.hit_rate is not None]),
        mean_drawdown=_mean_or_none([r.max_drawdown for r in rows]),
        mean_trades=_mean_or_none([float(r.n_trades) for r in rows]),
        seed_means=seed_means,
        fold_means=fold_means,
    )
