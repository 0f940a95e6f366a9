"""Loading, validation and causal alignment of price bars and web snapshots.

The pipeline here produces two sample sets from the same raw inputs:

* the event-aligned set (:func:`align_event`) used for model training, where
  each decision bar is paired with the latest snapshot no older than
  ``tau_max`` minutes and carries an L-bar feature window plus an H-bar-ahead
  label, and
* the bar-aligned set (:func:`align_bars`) used for lag-stratified signal
  analysis, which applies the same latest-predecessor pairing to every bar
  with enough future history, without requiring a price window.

All timestamps are epoch minutes (UTC). Bars sit on a fixed 15-minute grid;
snapshots may fall on any minute.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import storage

logger = logging.getLogger(__name__)

BAR_MINUTES = 15
EMBEDDING_DIM = 384
N_WEB_SCALARS = 13
WINDOW_LEN = 64
DEFAULT_TAU_MAX = 180.0
DEFAULT_HORIZON = 4

OHLCV_HEADER = ["timestamp", "open", "high", "low", "close", "volume"]

#: Feature layout of a price window: 5 per-window z-scored raw channels
#: followed by 11 derived technical features. The volume z-score shows up
#: twice by construction (as a raw z-scored channel and in the derived
#: block); the 16-wide layout keeps the 5 + 11 split intact.
FEATURE_NAMES = [
    "z_open", "z_high", "z_low", "z_close", "z_volume",
    "log_return_1", "momentum_4", "momentum_16", "volatility_16",
    "range_to_close", "pos_in_range", "body_ratio", "volume_z",
    "rsi_14", "ema12_rel", "ema26_rel",
]
N_FEATURES = len(FEATURE_NAMES)

_STD_FLOOR = 1e-8


class ValidationError(ValueError):
    """Raised when input files or configuration are unusable."""


# -- schema -------------------------------------------------------------------

DEFAULT_SCALAR_FIELDS = (
    "news_direction_score",
    "news_strength",
    "fear_greed",
    "social_sentiment",
    "social_volume",
    "whale_inflow",
    "whale_outflow",
    "active_addresses",
    "exchange_netflow",
    "funding_rate",
    "open_interest_change",
    "liquidation_volume",
    "news_count",
)


@dataclass(frozen=True)
class WebSchema:
    """Ordered names of the 13 snapshot scalars plus the designated
    directional field consumed by the lag analysis."""

    fields: tuple[str, ...] = DEFAULT_SCALAR_FIELDS
    direction_field: str = "news_direction_score"

    def __post_init__(self):
        if len(self.fields) != N_WEB_SCALARS:
            raise ValidationError(f"schema must name exactly {N_WEB_SCALARS} scalars, got {len(self.fields)}")
        if len(set(self.fields)) != len(self.fields):
            raise ValidationError("schema field names must be unique")
        if self.direction_field not in self.fields:
            raise ValidationError(f"direction field '{self.direction_field}' is not in the schema")

    @property
    def direction_index(self) -> int:
        return self.fields.index(self.direction_field)

    def index_of(self, name: str) -> int:
        if name not in self.fields:
            raise ValidationError(f"unknown schema field '{name}'")
        return self.fields.index(name)

    def to_dict(self) -> dict:
        return {"fields": list(self.fields), "direction_field": self.direction_field}

    @classmethod
    def from_dict(cls, d: dict) -> "WebSchema":
        return cls(fields=tuple(d["fields"]), direction_field=d["direction_field"])

    @classmethod
    def load(cls, path: str | Path) -> "WebSchema":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


# -- containers ----------------------------------------------------------------


@dataclass
class BarSeries:
    """Validated OHLCV bars, sorted, on the 15-minute grid (gaps allowed)."""

    ts: np.ndarray        # (N,) int64 epoch minutes
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __len__(self) -> int:
        return len(self.ts)

    def window(self, end_index: int, length: int) -> np.ndarray:
        """Raw (length, 5) slice of bars ending at ``end_index`` inclusive."""
        lo = end_index - length + 1
        return np.stack(
            [self.open[lo:end_index + 1], self.high[lo:end_index + 1],
             self.low[lo:end_index + 1], self.close[lo:end_index + 1],
             self.volume[lo:end_index + 1]], axis=1)


@dataclass
class WebSnapshot:
    timestamp: int
    scalars: np.ndarray
    embedding: np.ndarray
    direction_score: float


@dataclass
class WebSeries:
    """Validated web-intelligence snapshots sorted by timestamp."""

    ts: np.ndarray          # (M,) int64 epoch minutes
    scalars: np.ndarray     # (M, 13) ordered per schema
    embeddings: np.ndarray  # (M, 384)
    schema: WebSchema

    def __len__(self) -> int:
        return len(self.ts)

    @property
    def direction(self) -> np.ndarray:
        return self.scalars[:, self.schema.direction_index]

    def snapshot(self, i: int) -> WebSnapshot:
        return WebSnapshot(int(self.ts[i]), self.scalars[i].copy(), self.embeddings[i].copy(),
                           float(self.direction[i]))


@dataclass
class LoadReport:
    n_loaded: int = 0
    rejected: list[tuple[int, str]] = field(default_factory=list)   # (line number, reason)
    gaps: list[tuple[int, int, int]] = field(default_factory=list)  # (prev ts, next ts, bars missing)
    warnings: list[str] = field(default_factory=list)

    def summary(self) -> str:
        return (f"{self.n_loaded} loaded, {len(self.rejected)} rejected, "
                f"{len(self.gaps)} grid gaps")


def _parse_timestamp(raw: str) -> int:
    """Epoch seconds or ISO-8601 -> epoch minutes (floored)."""
    raw = raw.strip()
    try:
        seconds = float(raw)
    except ValueError:
        if raw.endswith("Z"):
            raw = raw[:-1] + "+00:00"
        dt = datetime.fromisoformat(raw)
        if dt.tzinfo is None:
            dt = dt.replace(tzinfo=timezone.utc)
        seconds = dt.timestamp()
    return int(math.floor(seconds / 60.0))


def load_ohlcv(path: str | Path) -> tuple[BarSeries, LoadReport]:
    """Read an OHLCV CSV with header ``timestamp,open,high,low,close,volume``.

    Rows violating the OHLC ordering (or carrying non-positive prices,
    negative volume, or unparseable fields) are rejected with their line
    number. Duplicate timestamps are an error; non-15-minute spacing is
    reported as gaps but the series is still returned.
    """
    report = LoadReport()
    rows = []
    if not Path(path).exists():
        raise ValidationError(f"{path}: file not found")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file")
        if [h.strip() for h in header] != OHLCV_HEADER:
            raise ValidationError(f"{path}: header must be exactly '{','.join(OHLCV_HEADER)}'")
        for lineno, parts in enumerate(reader, start=2):
            if not parts or parts == [""]:
                continue
            if len(parts) != 6:
                report.rejected.append((lineno, f"expected 6 fields, got {len(parts)}"))
                continue
            try:
                ts = _parse_timestamp(parts[0])
                o, h, l, c, v = (float(x) for x in parts[1:])
            except (ValueError, OverflowError) as exc:
                report.rejected.append((lineno, f"unparseable field: {exc}"))
                continue
            if min(o, h, l, c) <= 0.0:
                report.rejected.append((lineno, "non-positive price"))
                continue
            if v < 0.0:
                report.rejected.append((lineno, "negative volume"))
                continue
            if not (l <= min(o, c) and max(o, c) <= h):
                report.rejected.append((lineno, f"OHLC ordering violated (o={o} h={h} l={l} c={c})"))
                continue
            rows.append((ts, o, h, l, c, v))
    if not rows:
        raise ValidationError(f"{path}: no valid bars")
    rows.sort(key=lambda r: r[0])
    ts = np.array([r[0] for r in rows], dtype=np.int64)
    dup = np.flatnonzero(np.diff(ts) == 0)
    if dup.size:
        raise ValidationError(f"{path}: duplicate bar timestamp {ts[dup[0]]} (epoch minutes)")
    diffs = np.diff(ts)
    for i in np.flatnonzero(diffs != BAR_MINUTES):
        d = int(diffs[i])
        if d % BAR_MINUTES == 0:
            report.gaps.append((int(ts[i]), int(ts[i + 1]), d // BAR_MINUTES - 1))
        else:
            report.warnings.append(f"irregular spacing {d} min between {ts[i]} and {ts[i + 1]}")
    if report.gaps or report.warnings:
        logger.warning("ohlcv %s: %d gaps, %d irregular spacings", path, len(report.gaps),
                       len(report.warnings))
    cols = [np.array([r[k] for r in rows]) for k in range(1, 6)]
    report.n_loaded = len(rows)
    return BarSeries(ts, *cols), report


def load_web(path: str | Path, schema: WebSchema | None = None) -> tuple[WebSeries, LoadReport]:
    """Read snapshots from JSON-lines with per-line rejection reporting.

    Each line needs a ``timestamp``, a ``scalars`` object covering every
    schema field, and a numeric ``embedding`` of length 384. Extra scalar
    keys are tolerated and ignored.
    """
    schema = schema or WebSchema()
    report = LoadReport()
    recs = []
    if not Path(path).exists():
        raise ValidationError(f"{path}: file not found")
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                report.rejected.append((lineno, f"invalid JSON: {exc.msg}"))
                continue
            try:
                ts = _parse_timestamp(str(obj["timestamp"]))
            except (KeyError, ValueError) as exc:
                report.rejected.append((lineno, f"bad timestamp: {exc}"))
                continue
            scal = obj.get("scalars")
            if not isinstance(scal, dict):
                report.rejected.append((lineno, "missing 'scalars' object"))
                continue
            missing = [f for f in schema.fields if f not in scal]
            if missing:
                report.rejected.append((lineno, f"missing schema field '{missing[0]}'"))
                continue
            emb = obj.get("embedding")
            if not isinstance(emb, list) or len(emb) != EMBEDDING_DIM:
                got = len(emb) if isinstance(emb, list) else "none"
                report.rejected.append((lineno, f"embedding length {got}, expected {EMBEDDING_DIM}"))
                continue
            try:
                vec = np.array([float(scal[f]) for f in schema.fields])
                emb_arr = np.asarray(emb, dtype=np.float64)
            except (TypeError, ValueError):
                report.rejected.append((lineno, "non-numeric scalar or embedding entry"))
                continue
            if not (np.isfinite(vec).all() and np.isfinite(emb_arr).all()):
                report.rejected.append((lineno, "non-finite scalar or embedding entry"))
                continue
            recs.append((ts, vec, emb_arr))
    order = sorted(range(len(recs)), key=lambda i: recs[i][0])
    ts_arr = np.array([recs[i][0] for i in order], dtype=np.int64)
    scalars = (np.stack([recs[i][1] for i in order])
               if recs else np.empty((0, N_WEB_SCALARS)))
    embs = (np.stack([recs[i][2] for i in order])
            if recs else np.empty((0, EMBEDDING_DIM)))
    report.n_loaded = len(recs)
    if report.rejected:
        logger.warning("web %s: rejected %d lines", path, len(report.rejected))
    return WebSeries(ts_arr, scalars, embs, schema), report


# -- features and labels ---------------------------------------------------------


def _zscore_cols(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    scale = np.where(sd >= _STD_FLOOR, 1.0 / np.maximum(sd, _STD_FLOOR), 0.0)
    return (x - mu) * scale


def _ema(x: np.ndarray, span: int) -> np.ndarray:
    # y[i] = a*x[i] + (1-a)*y[i-1], y[0] = x[0]; vectorized via the scaled
    # cumulative sum (safe at L=64: the decay powers stay well inside fp64).
    a = 2.0 / (span + 1.0)
    decay = 1.0 - a
    n = len(x)
    pw = decay ** np.arange(n)
    inner = np.zeros(n)
    inner[1:] = np.cumsum(x[1:] / pw[1:])
    return pw * (x[0] + a * inner)


def featurize_window(window: np.ndarray) -> np.ndarray:
    """Turn a raw (L, 5) OHLCV window into the (L, 16) model input.

    Pure function of the window: per-window z-scores use the window's own
    statistics (std floored at 1e-8 so constant channels map to zeros), and
    every derived feature looks only at bars inside the window.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or window.shape[1] != 5:
        raise ValidationError(f"featurize_window expects (L, 5), got {window.shape}")
    L = window.shape[0]
    o, h, l, c, v = (window[:, k] for k in range(5))
    if np.min(window[:, :4]) <= 0.0:
        raise ValidationError("featurize_window requires strictly positive prices")
    feats = np.zeros((L, N_FEATURES))
    feats[:, :5] = _zscore_cols(window)

    logret = np.zeros(L)
    logret[1:] = np.log(c[1:] / c[:-1])
    feats[:, 5] = logret
    feats[4:, 6] = c[4:] / c[:-4] - 1.0
    if L > 16:
        feats[16:, 7] = c[16:] / c[:-16] - 1.0

    # Rolling population std of the last (up to) 16 log returns.
    cs = np.concatenate([[0.0], np.cumsum(logret[1:])])
    cs2 = np.concatenate([[0.0], np.cumsum(logret[1:] ** 2)])
    idx = np.arange(L)
    n_ret = np.minimum(idx, 16)
    start = idx - n_ret
    with np.errstate(invalid="ignore", divide="ignore"):
        s1 = cs[idx] - cs[start]
        s2 = cs2[idx] - cs2[start]
        var = np.where(n_ret >= 2, s2 / np.maximum(n_ret, 1) - (s1 / np.maximum(n_ret, 1)) ** 2, 0.0)
    feats[:, 8] = np.sqrt(np.clip(var, 0.0, None))

    rng_hl = h - l
    feats[:, 9] = rng_hl / c
    denom = np.maximum(rng_hl, _STD_FLOOR)
    feats[:, 10] = np.where(rng_hl >= _STD_FLOOR, (c - l) / denom, 0.0)
    feats[:, 11] = np.where(rng_hl >= _STD_FLOOR, (c - o) / denom, 0.0)
    feats[:, 12] = feats[:, 4]

    # RSI(14) on simple trailing means of gains/losses, scaled to [0, 1];
    # 0.5 when no movement is available.
    delta = np.diff(c)
    gains = np.concatenate([[0.0], np.cumsum(np.maximum(delta, 0.0))])
    losses = np.concatenate([[0.0], np.cumsum(np.maximum(-delta, 0.0))])
    n_d = np.minimum(idx, 14)
    d_start = idx - n_d
    gs = gains[idx] - gains[d_start]
    ls = losses[idx] - losses[d_start]
    tot = gs + ls
    feats[:, 13] = np.where(tot >= _STD_FLOOR, gs / np.maximum(tot, _STD_FLOOR), 0.5)

    feats[:, 14] = _ema(c, 12) / c - 1.0
    feats[:, 15] = _ema(c, 26) / c - 1.0

    if not np.isfinite(feats).all():
        raise ValidationError("featurize_window produced non-finite values")
    return feats


def compute_label(close: np.ndarray, i: int, horizon: int) -> tuple[int, float]:
    """Label and forward return over ``horizon`` bars from bar ``i``.

    y = 1 iff the close-to-close return is strictly positive.
    """
    if i + horizon >= len(close):
        raise ValidationError(f"bar {i} has no bar {horizon} steps ahead")
    ret = (close[i + horizon] - close[i]) / close[i]
    return (1 if ret > 0.0 else 0), float(ret)


# -- aligned sample sets ----------------------------------------------------------


@dataclass
class AlignedSample:
    """One decision point: everything a model consumes plus its label."""

    decision_time: int
    price_window: np.ndarray   # (L, 16)
    text_embedding: np.ndarray  # (384,)
    web_scalars: np.ndarray     # (13,) raw; normalized per fold at training time
    tau_lag: float
    label: int
    future_return: float
    asset: str


@dataclass
class CorpusStats:
    n_samples: int
    mean_lag: float
    std_lag: float
    positivity: float
    per_asset: dict[str, dict[str, float]]

    def format(self) -> str:
        lines = [
            f"samples:    {self.n_samples}",
            f"mean lag:   {self.mean_lag:.1f} min (std {self.std_lag:.1f})",
            f"pos. rate:  {self.positivity:.3f}",
        ]
        for tag, row in sorted(self.per_asset.items()):
            lines.append(f"  {tag}: n={int(row['n'])} lag={row['mean_lag']:.1f} pos={row['positivity']:.3f}")
        return "\n".join(lines)


class AlignedDataset:
    """Column-oriented store of aligned samples in chronological order."""

    def __init__(self, decision_time, price_window, text_embedding, web_scalars,
                 tau_lag, label, future_return, asset, schema: WebSchema, meta: dict):
        self.decision_time = np.asarray(decision_time, dtype=np.int64)
        self.price_window = np.asarray(price_window, dtype=np.float64)
        self.text_embedding = np.asarray(text_embedding, dtype=np.float64)
        self.web_scalars = np.asarray(web_scalars, dtype=np.float64)
        self.tau_lag = np.asarray(tau_lag, dtype=np.float64)
        self.label = np.asarray(label, dtype=np.int64)
        self.future_return = np.asarray(future_return, dtype=np.float64)
        self.asset = np.asarray(asset)
        self.schema = schema
        self.meta = dict(meta)

    def __len__(self) -> int:
        return len(self.decision_time)

    def sample(self, i: int) -> AlignedSample:
        return AlignedSample(
            decision_time=int(self.decision_time[i]),
            price_window=self.price_window[i],
            text_embedding=self.text_embedding[i],
            web_scalars=self.web_scalars[i],
            tau_lag=float(self.tau_lag[i]),
            label=int(self.label[i]),
            future_return=float(self.future_return[i]),
            asset=str(self.asset[i]),
        )

    def subset(self, idx) -> "AlignedDataset":
        return AlignedDataset(
            self.decision_time[idx], self.price_window[idx], self.text_embedding[idx],
            self.web_scalars[idx], self.tau_lag[idx], self.label[idx],
            self.future_return[idx], self.asset[idx], self.schema, self.meta)

    def stats(self) -> CorpusStats:
        per_asset = {}
        for tag in np.unique(self.asset):
            m = self.asset == tag
            per_asset[str(tag)] = {
                "n": float(m.sum()),
                "mean_lag": float(self.tau_lag[m].mean()),
                "positivity": float(self.label[m].mean()),
            }
        return CorpusStats(
            n_samples=len(self),
            mean_lag=float(self.tau_lag.mean()) if len(self) else 0.0,
            std_lag=float(self.tau_lag.std()) if len(self) else 0.0,
            positivity=float(self.label.mean()) if len(self) else 0.0,
            per_asset=per_asset,
        )

    def _arrays(self) -> dict[str, np.ndarray]:
        return {
            "decision_time": self.decision_time,
            "price_window": self.price_window,
            "text_embedding": self.text_embedding,
            "web_scalars": self.web_scalars,
            "tau_lag": self.tau_lag,
            "label": self.label,
            "future_return": self.future_return,
            "asset": self.asset.astype("U16"),
        }

    def content_hash(self) -> str:
        return storage.content_hash(self._arrays(), {"schema": self.schema.to_dict(), "meta": self.meta})

    def save(self, path: str | Path) -> None:
        storage.save_arrays(path, self._arrays(),
                            {"schema": self.schema.to_dict(), "meta": self.meta})

    @classmethod
    def load(cls, path: str | Path) -> "AlignedDataset":
        arrays, meta = storage.load_arrays(path)
        return cls(
            arrays["decision_time"], arrays["price_window"], arrays["text_embedding"],
            arrays["web_scalars"], arrays["tau_lag"], arrays["label"],
            arrays["future_return"], arrays["asset"],
            WebSchema.from_dict(meta["schema"]), meta["meta"])


@dataclass
class BarAlignedSet:
    """Bar-aligned pairing for lag analysis: one row per bar with a valid
    snapshot, no price window attached."""

    ts: np.ndarray
    tau_lag: np.ndarray
    direction_score: np.ndarray
    future_return: np.ndarray
    label: np.ndarray
    meta: dict

    def __len__(self) -> int:
        return len(self.ts)


def _latest_snapshot(web_ts: np.ndarray, bar_ts: np.ndarray) -> np.ndarray:
    """Index of the latest snapshot at or before each bar (-1 when none).
    Ties on equal timestamps resolve to the last snapshot in sorted order."""
    return np.searchsorted(web_ts, bar_ts, side="right") - 1


def align_event(bars: BarSeries, web: WebSeries, tau_max: float = DEFAULT_TAU_MAX,
                window_len: int = WINDOW_LEN, horizon: int = DEFAULT_HORIZON,
                asset: str = "SYNTH", min_strength: float | None = None,
                strength_field: str | None = None) -> AlignedDataset:
    """Build the event-aligned training set.

    Every bar with at least ``window_len`` bars of history and ``horizon``
    bars of future is a candidate; it is retained iff the latest snapshot at
    or before it is no older than ``tau_max`` minutes. The optional
    ``min_strength`` filter additionally drops candidates whose paired
    snapshot falls below the threshold on the configured schema field.
    """
    n = len(bars)
    if n < window_len + horizon + 1:
        raise ValidationError(
            f"need at least {window_len + horizon + 1} bars for L={window_len}, H={horizon}; got {n}")
    cand = np.arange(window_len - 1, n - horizon)
    if len(web):
        snap = _latest_snapshot(web.ts, bars.ts[cand])
        tau = np.where(snap >= 0, bars.ts[cand] - web.ts[np.clip(snap, 0, None)], np.inf)
    else:
        snap = np.full(len(cand), -1)
        tau = np.full(len(cand), np.inf)
    keep = (snap >= 0) & (tau <= tau_max)
    n_lag_dropped = int((~keep).sum())
    n_strength_dropped = 0
    if min_strength is not None:
        fld = strength_field or "news_strength"
        col = web.schema.index_of(fld)
        strong = np.zeros(len(cand), dtype=bool)
        strong[keep] = web.scalars[snap[keep], col] >= min_strength
        n_strength_dropped = int((keep & ~strong).sum())
        keep &= strong
    kept = cand[keep]
    kept_snap = snap[keep]

    windows = np.empty((len(kept), window_len, N_FEATURES))
    labels = np.empty(len(kept), dtype=np.int64)
    rets = np.empty(len(kept))
    for row, i in enumerate(kept):
        windows[row] = featurize_window(bars.window(int(i), window_len))
        labels[row], rets[row] = compute_label(bars.close, int(i), horizon)

    meta = {
        "window_len": window_len, "horizon": horizon, "tau_max": tau_max,
        "n_candidates": int(len(cand)), "n_dropped_lag": n_lag_dropped,
        "n_dropped_strength": n_strength_dropped,
    }
    return AlignedDataset(
        decision_time=bars.ts[kept],
        price_window=windows,
        text_embedding=web.embeddings[kept_snap] if len(kept) else np.empty((0, EMBEDDING_DIM)),
        web_scalars=web.scalars[kept_snap] if len(kept) else np.empty((0, N_WEB_SCALARS)),
        tau_lag=(bars.ts[kept] - web.ts[kept_snap]).astype(np.float64) if len(kept) else np.empty(0),
        label=labels,
        future_return=rets,
        asset=np.full(len(kept), asset, dtype="U16"),
        schema=web.schema,
        meta=meta,
    )


def align_bars(bars: BarSeries, web: WebSeries, tau_max: float = DEFAULT_TAU_MAX,
               horizon: int = DEFAULT_HORIZON) -> BarAlignedSet:
    """Pair every bar that still has ``horizon`` future bars with its nearest
    preceding snapshot within ``tau_max``. Used for lag-stratified analysis,
    so no lookback window is required."""
    n = len(bars)
    if n < horizon + 1:
        raise ValidationError(f"need at least {horizon + 1} bars for H={horizon}; got {n}")
    cand = np.arange(0, n - horizon)
    if len(web):
        snap = _latest_snapshot(web.ts, bars.ts[cand])
        tau = np.where(snap >= 0, bars.ts[cand] - web.ts[np.clip(snap, 0, None)], np.inf)
    else:
        snap = np.full(len(cand), -1)
        tau = np.full(len(cand), np.inf)
    keep = (snap >= 0) & (tau <= tau_max)
    kept = cand[keep]
    kept_snap = snap[keep]
    rets = (bars.close[kept + horizon] - bars.close[kept]) / bars.close[kept]
    return BarAlignedSet(
        ts=bars.ts[kept],
        tau_lag=(bars.ts[kept] - web.ts[kept_snap]).astype(np.float64),
        direction_score=web.direction[kept_snap],
        future_return=rets,
        label=(rets > 0.0).astype(np.int64),
        meta={"horizon": horizon, "tau_max": tau_max, "n_candidates": int(len(cand))},
    )


# -- per-fold web-scalar normalization ----------------------------------------------


class WebNormalizer:
    """Per-scalar z-score fitted on a training split and applied unchanged to
    validation/test. Scalars with (near-)zero variance pass through as 0."""

    def __init__(self, mean: np.ndarray, scale: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.scale = np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, train_scalars: np.ndarray) -> "WebNormalizer":
        x = np.asarray(train_scalars, dtype=np.float64)
        mu = x.mean(axis=0)
        sd = x.std(axis=0)
        scale = np.where(sd >= _STD_FLOOR, 1.0 / np.maximum(sd, _STD_FLOOR), 0.0)
        return cls(mu, scale)

    def transform(self, scalars: np.ndarray) -> np.ndarray:
        return (np.asarray(scalars, dtype=np.float64) - self.mean) * self.scale

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "WebNormalizer":
        return cls(np.array(d["mean"]), np.array(d["scale"]))
