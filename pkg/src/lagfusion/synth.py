"""Deterministic synthetic price/news corpus with a controllable lag window.

The generator couples a geometric random walk with sporadic news events.
Each event produces an immediate price jump (the shock the news reports) and
a delayed drift whose sign agrees with the news direction with probability
(1 + rho)/2. The drift lands on bars whose age relative to the event makes
the H-bar forward return of decision bars inside ``utility_window``
move with the news, and a sign-flipped tail beyond the window drives
stale-news returns negative. That placement is what produces the
non-monotonic lag-utility shape downstream.

Everything is a pure function of the seed, and the emitted CSV/JSONL files
are exactly what :mod:`lagfusion.data` consumes.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .data import (
    BAR_MINUTES,
    EMBEDDING_DIM,
    N_WEB_SCALARS,
    BarSeries,
    WebSchema,
    WebSeries,
)

# 2025-01-01T00:00Z in epoch minutes.
_DEFAULT_START_MINUTE = 1735689600 // 60


@dataclass
class SynthConfig:
    # 4800 bars keep the event-aligned sample count above the ten-fold
    # minimum of the non-overlapping protocol at the default event rate.
    n_bars: int = 4800
    bar_minutes: int = BAR_MINUTES
    sigma_bar: float = 0.003          # log-return std per bar
    drift: float = 0.0                # log-return drift per bar
    events_per_day: float = 8.0
    jump_scale: float = 2.0           # immediate event jump, in units of sigma_bar
    utility_window: tuple[float, float] = (30.0, 60.0)   # minutes, [lo, hi)
    signal_strength: float = 0.6      # rho: P(drift agrees with news) = (1+rho)/2
    utility_gain: float = 1.0         # per-bar window drift, in units of sigma_bar
    reversal_gain: float = 0.5        # per-bar stale drift (sign-flipped), same units
    tau_max: float = 180.0
    horizon_bars: int = 4             # H used to place the drift region
    embedding_noise: float = 0.1
    distractor_dims: int = 376        # embedding dims carrying pure noise
    start_price: float = 100.0
    start_minute: int = _DEFAULT_START_MINUTE
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.utility_window
        if not (0.0 <= lo < hi <= self.tau_max):
            raise ValueError(f"utility window {self.utility_window} must satisfy 0 <= lo < hi <= tau_max")
        if not 0.0 <= self.signal_strength <= 1.0:
            raise ValueError(f"signal strength must be in [0, 1], got {self.signal_strength}")
        if not 0 <= self.distractor_dims < EMBEDDING_DIM:
            raise ValueError("distractor_dims must leave at least one signal dimension")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["utility_window"] = list(self.utility_window)
        return d

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()).hexdigest()


@dataclass
class EventTable:
    """Ground-truth event record kept alongside the generated corpus."""

    time: np.ndarray        # (E,) epoch minutes
    direction: np.ndarray   # (E,) news direction in {-1, +1}
    drift_dir: np.ndarray   # (E,) realized drift sign (direction with prob (1+rho)/2)

    def __len__(self) -> int:
        return len(self.time)


def gen_prices(config: SynthConfig) -> tuple[BarSeries, EventTable]:
    """Geometric random walk with event jumps and lag-windowed utility drift.

    Bars are stamped at their close minute. Each event falls inside the 15
    minutes before some bar close, so the freshest consumers see lags in
    [0, 15). OHLC envelopes are built around open/close so the ordering
    invariant holds by construction.
    """
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0x5052)))
    n = config.n_bars
    ts = config.start_minute + config.bar_minutes * np.arange(n, dtype=np.int64)

    bars_per_day = 24 * 60 / config.bar_minutes
    p_event = min(1.0, config.events_per_day / bars_per_day)
    has_event = rng.random(n) < p_event
    offsets = rng.integers(0, config.bar_minutes, size=n)
    ev_idx = np.flatnonzero(has_event)
    ev_time = ts[ev_idx] - offsets[ev_idx]
    direction = rng.choice([-1.0, 1.0], size=len(ev_idx))
    agree = rng.random(len(ev_idx)) < (1.0 + config.signal_strength) / 2.0
    drift_dir = np.where(agree, direction, -direction)

    logret = config.drift + config.sigma_bar * rng.standard_normal(n)
    # Immediate jump at the event's own bar.
    logret[ev_idx] += drift_dir * config.jump_scale * config.sigma_bar
    # Delayed utility drift: bars aged [lo + 2*bar, hi + H*bar) after the
    # event carry the event's drift. Decisions at lag in [lo, hi) then
    # realize most of it over their H forward bars, very fresh consumers see
    # almost none of it (their forward bars end before the drift starts), and
    # the tail out to tau_max reverses it, which makes the planted utility
    # genuinely non-monotonic in lag.
    lo, hi = config.utility_window
    win_lo = lo + 2 * config.bar_minutes
    win_hi = hi + config.horizon_bars * config.bar_minutes
    u = config.utility_gain * config.sigma_bar
    u_rev = config.reversal_gain * config.sigma_bar
    for e_time, d in zip(ev_time, drift_dir):
        age = ts - e_time
        in_win = (age >= win_lo) & (age < win_hi)
        stale = (age >= win_hi) & (age <= config.tau_max)
        logret[in_win] += d * u
        logret[stale] -= d * u_rev

    close = config.start_price * np.exp(np.cumsum(logret))
    open_ = np.empty(n)
    open_[0] = config.start_price
    open_[1:] = close[:-1]
    hi_noise = np.abs(rng.standard_normal(n)) * config.sigma_bar * 0.5
    lo_noise = np.abs(rng.standard_normal(n)) * config.sigma_bar * 0.5
    high = np.maximum(open_, close) * (1.0 + hi_noise)
    low = np.minimum(open_, close) * (1.0 - lo_noise)
    volume = np.exp(rng.normal(10.0, 0.5, size=n))

    bars = BarSeries(ts, open_, high, low, close, volume)
    events = EventTable(ev_time.astype(np.int64), direction, drift_dir)
    return bars, events


def gen_news(config: SynthConfig, events: EventTable,
             schema: WebSchema | None = None) -> WebSeries:
    """One snapshot per event: a direction score, 12 labeled noise scalars,
    and an embedding whose signal subspace is the direction times a fixed
    unit vector plus noise (remaining dimensions are pure noise)."""
    schema = schema or WebSchema()
    rng = np.random.default_rng(np.random.SeedSequence((config.seed, 0x4E45)))
    n_ev = len(events)
    n_signal = EMBEDDING_DIM - config.distractor_dims

    u = rng.standard_normal(n_signal)
    u /= np.linalg.norm(u)

    score = np.clip(events.direction + config.embedding_noise * rng.standard_normal(n_ev),
                    -1.0, 1.0)
    scalars = rng.standard_normal((n_ev, N_WEB_SCALARS))
    scalars[:, schema.direction_index] = score

    emb = config.embedding_noise * rng.standard_normal((n_ev, EMBEDDING_DIM))
    emb[:, :n_signal] += events.direction[:, None] * u[None, :]

    return WebSeries(events.time.copy(), scalars, emb, schema)


def gen_corpus(config: SynthConfig,
               schema: WebSchema | None = None) -> tuple[BarSeries, WebSeries, EventTable]:
    bars, events = gen_prices(config)
    web = gen_news(config, events, schema)
    return bars, web, events


def shuffle_text(web: WebSeries, seed: int) -> WebSeries:
    """Permute snapshot contents across events, keeping timestamps fixed.

    Destroys any content/return association while preserving every marginal;
    the permutation is a bijection and a pure function of the seed.
    """
    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x53485546)))
    perm = rng.permutation(len(web))
    return WebSeries(web.ts.copy(), web.scalars[perm], web.embeddings[perm], web.schema)


# -- corpus files -----------------------------------------------------------------


def write_prices_csv(bars: BarSeries, path: str | Path) -> None:
    """Emit the exact CSV format load_ohlcv consumes (timestamps as epoch
    seconds, floats via repr so a reload is lossless)."""
    with open(path, "w", newline="") as fh:
        fh.write("timestamp,open,high,low,close,volume\n")
        for i in range(len(bars)):
            row = [repr(float(col[i])) for col in (bars.open, bars.high, bars.low,
                                                   bars.close, bars.volume)]
            fh.write(f"{int(bars.ts[i]) * 60}," + ",".join(row) + "\n")


def write_web_jsonl(web: WebSeries, path: str | Path) -> None:
    # json emits shortest-round-trip floats, so reloading is lossless.
    with open(path, "w") as fh:
        for i in range(len(web)):
            rec = {
                "timestamp": int(web.ts[i]) * 60,
                "scalars": {name: float(v)
                            for name, v in zip(web.schema.fields, web.scalars[i])},
                "embedding": [float(v) for v in web.embeddings[i]],
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def write_corpus(config: SynthConfig, out_dir: str | Path,
                 schema: WebSchema | None = None) -> dict:
    """Generate and write prices.csv, web.jsonl, schema.json and a provenance
    manifest. Returns the manifest dict."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    schema = schema or WebSchema()
    bars, web, events = gen_corpus(config, schema)
    write_prices_csv(bars, out / "prices.csv")
    write_web_jsonl(web, out / "web.jsonl")
    schema.save(out / "schema.json")
    manifest = {
        "seed": config.seed,
        "config": config.to_dict(),
        "config_sha256": config.config_hash(),
        "n_bars": len(bars),
        "n_snapshots": len(web),
        "files": {"prices": "prices.csv", "web": "web.jsonl", "schema": "schema.json"},
    }
    with open(out / "synth_manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
