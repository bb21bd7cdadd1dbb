"""Intraday OHLCV data: CSV ingestion, synthetic generation, windowing, splits.

One-minute bars are held column-wise in numpy arrays. Windows are fixed-length
slices of consecutive bars within a single trading day, labeled by the close
price five minutes past the window's last bar.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass, field

import numpy as np

MINUTE = np.timedelta64(1, "m")

DEFAULT_LOOKBACK = 30
DEFAULT_HORIZON = 5

CSV_COLUMNS = ("symbol", "timestamp", "open", "high", "low", "close", "volume")

MAX_DROP_FRACTION = 0.05


class CorruptSourceError(ValueError):
    """Raised when an input file fails validation beyond tolerable limits."""


class SplitError(ValueError):
    """Raised when a split protocol cannot be built from the given series."""


def stable_seed(*parts) -> int:
    """Derive a reproducible 32-bit seed from a tuple of ints and strings.

    Python's builtin hash() is salted per process, so experiment cells use
    this instead to stay bit-reproducible across runs.
    """
    h = hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(h[:4], "little")


@dataclass(frozen=True)
class MinuteBar:
    """A single one-minute OHLCV record."""

    timestamp: np.datetime64
    open: float
    high: float
    low: float
    close: float
    volume: float

    def is_valid(self) -> bool:
        if min(self.open, self.high, self.low, self.close) <= 0 or self.volume < 0:
            return False
        return (self.low <= min(self.open, self.close)
                and self.high >= max(self.open, self.close))


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class StockSeries:
    """An ordered one-minute OHLCV history for one symbol.

    Bars are strictly increasing in time within each trading day; prices are
    strictly positive and every bar satisfies low <= min(open, close) and
    high >= max(open, close). Arrays are frozen after construction.
    """

    symbol: str
    timestamps: np.ndarray  # datetime64[m]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        ts = np.asarray(self.timestamps, dtype="datetime64[m]")
        fields = {}
        for name in ("open", "high", "low", "close", "volume"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != ts.shape:
                raise ValueError(f"{name} length {arr.shape} != timestamps {ts.shape}")
            fields[name] = arr
        o, h, l, c, v = (fields[k] for k in ("open", "high", "low", "close", "volume"))
        if len(ts) and (min(o.min(), h.min(), l.min(), c.min()) <= 0):
            raise ValueError("all prices must be strictly positive")
        if len(ts) and v.min() < 0:
            raise ValueError("volume must be non-negative")
        if len(ts) and (np.any(l > np.minimum(o, c)) or np.any(h < np.maximum(o, c))):
            raise ValueError("OHLC envelope violated: need low <= min(o,c) <= max(o,c) <= high")
        days = ts.astype("datetime64[D]")
        same_day = days[1:] == days[:-1]
        if np.any(same_day & (ts[1:] <= ts[:-1])):
            raise ValueError("timestamps must be strictly increasing within a trading day")
        if np.any(ts[1:] < ts[:-1]):
            raise ValueError("bars must be sorted by timestamp")
        object.__setattr__(self, "timestamps", _readonly(ts))
        for name in ("open", "high", "low", "close", "volume"):
            object.__setattr__(self, name, _readonly(fields[name]))

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def days(self) -> np.ndarray:
        """Unique trading days covered by the series, ascending."""
        return np.unique(self.timestamps.astype("datetime64[D]"))

    def day_slices(self) -> list[tuple[np.datetime64, slice]]:
        """(day, index slice) for each trading day, in order."""
        days = self.timestamps.astype("datetime64[D]")
        out = []
        start = 0
        for i in range(1, len(days) + 1):
            if i == len(days) or days[i] != days[start]:
                out.append((days[start], slice(start, i)))
                start = i
        return out

    def bars(self) -> list[MinuteBar]:
        return [MinuteBar(self.timestamps[i], self.open[i], self.high[i],
                          self.low[i], self.close[i], self.volume[i])
                for i in range(len(self))]


@dataclass(frozen=True)
class WindowSample:
    """A lookback of consecutive bars plus the realized binary direction.

    label is 1 iff the close 'horizon' minutes after the last bar exceeds the
    last bar's close; ties count as a decrease (label 0). horizon_close keeps
    the reference close so the label can be re-derived.
    """

    symbol: str
    timestamps: np.ndarray
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray
    label: int
    horizon_close: float

    def __post_init__(self):
        object.__setattr__(self, "timestamps",
                           _readonly(np.asarray(self.timestamps, dtype="datetime64[m]")))
        for name in ("open", "high", "low", "close", "volume"):
            object.__setattr__(self, name,
                               _readonly(np.asarray(getattr(self, name), dtype=np.float64)))

    def __len__(self) -> int:
        return len(self.close)

    @property
    def anchor_close(self) -> float:
        return float(self.close[-1])

    @property
    def anchor_timestamp(self) -> np.datetime64:
        return self.timestamps[-1]

    @property
    def minute_frac(self) -> float:
        """Minute-of-hour of the last bar, scaled to [0, 1)."""
        mins = self.timestamps[-1].astype("int64")
        return (mins % 60) / 60.0

    @property
    def hour_frac(self) -> float:
        """Hour-of-day of the last bar, scaled to [0, 1)."""
        mins = self.timestamps[-1].astype("int64")
        return ((mins // 60) % 24) / 24.0


# ---------------------------------------------------------------------------
# CSV ingestion / export
# ---------------------------------------------------------------------------

def load_csv(path, schema: dict[str, str] | None = None,
             symbol: str | None = None) -> StockSeries:
    """Load a one-minute OHLCV CSV into a StockSeries.

    schema maps canonical column names (see CSV_COLUMNS) to the file's header
    names. Rows violating the OHLC envelope or price positivity are dropped
    and counted; more than MAX_DROP_FRACTION dropped rows is a hard
    "corrupt source" error, as are non-monotonic timestamps within a day.
    """
    colmap = dict(zip(CSV_COLUMNS, CSV_COLUMNS))
    if schema:
        unknown = set(schema) - set(CSV_COLUMNS)
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        colmap.update(schema)

    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise CorruptSourceError(f"cannot read {path}: {exc}") from exc

    rows = []
    dropped = 0
    with fh:
        reader = csv.DictReader(fh)
        missing = [colmap[c] for c in CSV_COLUMNS if colmap[c] not in (reader.fieldnames or [])]
        if missing:
            raise CorruptSourceError(f"{path}: missing columns {missing}")
        for rec in reader:
            try:
                sym = rec[colmap["symbol"]].strip()
                ts = np.datetime64(rec[colmap["timestamp"]].strip(), "m")
                o, h, l, c = (float(rec[colmap[k]]) for k in ("open", "high", "low", "close"))
                v = float(rec[colmap["volume"]])
            except (ValueError, KeyError):
                dropped += 1
                continue
            if symbol is not None and sym != symbol:
                continue
            bar = MinuteBar(ts, o, h, l, c, v)
            if not bar.is_valid():
                dropped += 1
                continue
            rows.append((sym, ts, o, h, l, c, v))

    if not rows:
        raise CorruptSourceError(f"corrupt source: {path} has no valid rows")
    total = len(rows) + dropped
    if dropped / total > MAX_DROP_FRACTION:
        raise CorruptSourceError(
            f"corrupt source: {dropped}/{total} rows dropped in {path} "
            f"(limit {MAX_DROP_FRACTION:.0%})")

    symbols = sorted({r[0] for r in rows})
    if len(symbols) > 1:
        raise CorruptSourceError(
            f"{path} holds multiple symbols {symbols}; pass symbol= to select one")
    sym = symbols[0]
    ts = np.array([r[1] for r in rows], dtype="datetime64[m]")
    cols = np.array([[r[i] for r in rows] for i in range(2, 7)], dtype=np.float64)
    try:
        series = StockSeries(sym, ts, *cols)
    except ValueError as exc:
        raise CorruptSourceError(f"corrupt source: {path}: {exc}") from exc
    object.__setattr__(series, "_dropped_rows", dropped)
    return series


def to_csv(series: StockSeries, path) -> None:
    """Write a series in the same CSV format load_csv ingests (round-trip safe)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for i in range(len(series)):
            writer.writerow([
                series.symbol,
                np.datetime_as_string(series.timestamps[i], unit="m"),
                repr(float(series.open[i])),
                repr(float(series.high[i])),
                repr(float(series.low[i])),
                repr(float(series.close[i])),
                repr(float(series.volume[i])),
            ])


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthParams:
    """Parameters for the synthetic one-minute generator.

    The close path is a geometric random walk (per-minute log drift,
    volatility with bounded hourly regimes) plus a deterministic periodic
    intraday component, which gives alpha models a learnable signal. The
    triangle shape carries a constant-magnitude slope, so every anchor holds
    the same deterministic five-minute-ahead signal strength.
    """

    n_days: int = 20
    minutes_per_day: int = 390
    start_price: float = 150.0
    drift: float = 0.0
    volatility: float = 2e-4
    seasonality_amplitude: float = 1.2e-3
    seasonality_period: int = 60
    seasonality_shape: str = "triangle"
    vol_of_vol: float = 0.8
    symbol: str = "SYN"
    start_day: str = "2018-01-01"
    open_minute: int = 570  # 09:30

    def __post_init__(self):
        if self.start_price <= 0:
            raise ValueError("start_price must be > 0")
        if self.volatility < 0:
            raise ValueError("volatility must be >= 0")
        if self.n_days < 1 or self.minutes_per_day < 1:
            raise ValueError("n_days and minutes_per_day must be >= 1")
        if self.seasonality_period < 1:
            raise ValueError("seasonality_period must be >= 1")
        if self.seasonality_shape not in ("sine", "triangle"):
            raise ValueError("seasonality_shape must be 'sine' or 'triangle'")
        if self.vol_of_vol < 0:
            raise ValueError("vol_of_vol must be >= 0")


def _trading_days(start_day: str, n_days: int) -> np.ndarray:
    """n_days consecutive weekdays starting at (or after) start_day."""
    days = []
    day = np.datetime64(start_day, "D")
    while len(days) < n_days:
        if (day.astype("int64") - 3) % 7 < 5:  # 1970-01-01 was a Thursday
            days.append(day)
        day = day + np.timedelta64(1, "D")
    return np.array(days, dtype="datetime64[D]")


def synthesize_series(params: SynthParams, seed: int) -> StockSeries:
    """Generate a deterministic synthetic series for the given seed."""
    rng = np.random.default_rng(seed)
    n = params.n_days * params.minutes_per_day

    days = _trading_days(params.start_day, params.n_days)
    minute_grid = np.arange(params.minutes_per_day, dtype="int64")
    ts = (days.astype("datetime64[m]")[:, None]
          + (params.open_minute + minute_grid) * MINUTE).reshape(-1)

    # hourly volatility regime: bounded log-uniform factors in [e^-s, e^s],
    # normalized so E[factor^2] = 1 and the unconditional per-minute return
    # std stays `volatility`
    hour_block = ts.astype("int64") // 60
    _, block_idx = np.unique(hour_block, return_inverse=True)
    s = params.vol_of_vol
    factors = np.exp(rng.uniform(-s, s, size=block_idx.max() + 1))
    if s > 0:
        factors /= np.sqrt(np.sinh(2.0 * s) / (2.0 * s))
    vol_t = params.volatility * factors[block_idx]

    shocks = rng.standard_normal(n)
    walk = np.cumsum(params.drift + vol_t * shocks)
    total_minute = ts.astype("int64")
    phase = (total_minute % params.seasonality_period) / params.seasonality_period
    if params.seasonality_shape == "sine":
        seasonal = params.seasonality_amplitude * np.sin(2.0 * np.pi * phase)
    else:
        # triangle wave: constant |slope|, so every anchor carries the same
        # deterministic 5-minute signal strength
        seasonal = params.seasonality_amplitude * (
            1.0 - 4.0 * np.abs(phase - 0.5))
    log_path = walk + seasonal
    log_path -= log_path[0]  # anchor so the first close is exactly start_price
    close = params.start_price * np.exp(log_path)

    open_ = np.empty(n)
    open_[0] = params.start_price
    open_[1:] = close[:-1]

    hi_wick = np.abs(rng.standard_normal(n)) * vol_t
    lo_wick = np.abs(rng.standard_normal(n)) * vol_t
    high = np.maximum(open_, close) * (1.0 + hi_wick)
    low = np.minimum(open_, close) * (1.0 - lo_wick)

    volume = np.floor(rng.lognormal(mean=np.log(5000.0), sigma=0.5, size=n))

    return StockSeries(params.symbol, ts, open_, high, low, close, volume)


# ---------------------------------------------------------------------------
# Windowing and sampling
# ---------------------------------------------------------------------------

def make_windows(series: StockSeries, lookback: int = DEFAULT_LOOKBACK,
                 horizon: int = DEFAULT_HORIZON) -> list[WindowSample]:
    """Slice a series into labeled sliding windows, one per valid anchor.

    A window is the lookback bars ending at the anchor; its label compares the
    close `horizon` minutes later against the anchor close (ties -> 0).
    Windows and their horizon stay inside one trading day, and anchors whose
    window or horizon spans a missing minute are skipped.
    """
    out: list[WindowSample] = []
    ts_int = series.timestamps.astype("int64")
    for _, sl in series.day_slices():
        lo, hi = sl.start, sl.stop
        if hi - lo < lookback + horizon:
            continue
        for anchor in range(lo + lookback - 1, hi - horizon):
            start = anchor - lookback + 1
            if ts_int[anchor] - ts_int[start] != lookback - 1:
                continue  # hole inside the window
            if ts_int[anchor + horizon] - ts_int[anchor] != horizon:
                continue  # hole inside the horizon
            future = series.close[anchor + horizon]
            label = int(future > series.close[anchor])
            w = slice(start, anchor + 1)
            out.append(WindowSample(
                symbol=series.symbol,
                timestamps=series.timestamps[w],
                open=series.open[w],
                high=series.high[w],
                low=series.low[w],
                close=series.close[w],
                volume=series.volume[w],
                label=label,
                horizon_close=float(future),
            ))
    if not out:
        warnings.warn(f"series {series.symbol}: no day holds lookback+horizon="
                      f"{lookback + horizon} contiguous bars; returning empty list")
    return out


def balanced_sample(samples: list[WindowSample], n_per_class: int,
                    seed: int) -> list[WindowSample]:
    """Uniform sample without replacement of n_per_class windows per label."""
    by_label = {0: [], 1: []}
    for i, s in enumerate(samples):
        by_label[s.label].append(i)
    for label in (0, 1):
        if len(by_label[label]) < n_per_class:
            raise ValueError(
                f"insufficient class {label}: {len(by_label[label])} < {n_per_class}")
    rng = np.random.default_rng(seed)
    chosen: list[int] = []
    for label in (0, 1):
        idx = np.array(by_label[label])
        chosen.extend(rng.choice(idx, size=n_per_class, replace=False).tolist())
    return [samples[i] for i in sorted(chosen)]


@dataclass(frozen=True)
class SplitProtocol:
    """Chronological train / craft / six-test-week layout over trading days.

    craft_days is the 3-day crafting period sampled 40 windows per day with
    equal class representation; each test week is balanced at
    samples_per_class windows per class.
    """

    train_days: tuple
    craft_days: tuple
    test_weeks: tuple  # tuple of tuples of days
    samples_per_class: int = 100
    craft_per_day: int = 40
    seed: int = 0

    def __post_init__(self):
        train = tuple(np.datetime64(d, "D") for d in self.train_days)
        craft = tuple(np.datetime64(d, "D") for d in self.craft_days)
        weeks = tuple(tuple(np.datetime64(d, "D") for d in wk) for wk in self.test_weeks)
        object.__setattr__(self, "train_days", train)
        object.__setattr__(self, "craft_days", craft)
        object.__setattr__(self, "test_weeks", weeks)
        if self.craft_per_day % 2:
            raise ValueError("craft_per_day must be even (equal class representation)")
        groups = [train, craft, *weeks]
        if any(not g for g in groups):
            raise ValueError("every range must contain at least one day")
        for earlier, later in zip(groups, groups[1:]):
            if max(earlier) >= min(later):
                raise ValueError("ranges must be disjoint and chronological: "
                                 "train < craft < T1 < ... < T6")

    @property
    def n_test_sets(self) -> int:
        return len(self.test_weeks)

    @classmethod
    def from_days(cls, days, n_train_days: int, n_craft_days: int = 3,
                  n_test_weeks: int = 6, days_per_week: int = 5,
                  samples_per_class: int = 100, craft_per_day: int = 40,
                  seed: int = 0) -> "SplitProtocol":
        """Lay the protocol over an ordered day list, front to back."""
        days = list(days)
        need = n_train_days + n_craft_days + n_test_weeks * days_per_week
        if len(days) < need:
            raise SplitError(f"need {need} trading days, series has {len(days)}")
        train = days[:n_train_days]
        craft = days[n_train_days:n_train_days + n_craft_days]
        rest = days[n_train_days + n_craft_days:]
        weeks = [tuple(rest[i * days_per_week:(i + 1) * days_per_week])
                 for i in range(n_test_weeks)]
        return cls(tuple(train), tuple(craft), tuple(weeks),
                   samples_per_class=samples_per_class,
                   craft_per_day=craft_per_day, seed=seed)


@dataclass(frozen=True)
class Split:
    train: list
    craft: list
    tests: list  # list of lists, one per test week


def build_split(series: StockSeries, protocol: SplitProtocol,
                lookback: int = DEFAULT_LOOKBACK,
                horizon: int = DEFAULT_HORIZON) -> Split:
    """Window the series and realize the split protocol.

    Train keeps every window in the train range. The craft set draws
    craft_per_day windows per craft day, balanced per day, giving equal class
    representation overall. Each test week is balanced at samples_per_class.
    """
    have = {str(d) for d in series.days}
    wanted = list(protocol.train_days) + list(protocol.craft_days)
    for wk in protocol.test_weeks:
        wanted.extend(wk)
    missing = [str(d) for d in wanted if str(d) not in have]
    if missing:
        raise SplitError(f"series does not cover protocol days: missing {missing}")

    windows = make_windows(series, lookback, horizon)
    by_day: dict = {}
    for w in windows:
        by_day.setdefault(w.anchor_timestamp.astype("datetime64[D]").item(), []).append(w)

    def pool(days):
        out = []
        for d in days:
            out.extend(by_day.get(np.datetime64(d, "D").item(), []))
        return out

    train = pool(protocol.train_days)

    craft: list[WindowSample] = []
    for i, day in enumerate(protocol.craft_days):
        day_pool = pool([day])
        craft.extend(balanced_sample(day_pool, protocol.craft_per_day // 2,
                                     seed=stable_seed(protocol.seed, "craft", i)))

    tests = []
    for i, wk in enumerate(protocol.test_weeks):
        tests.append(balanced_sample(pool(wk), protocol.samples_per_class,
                                     seed=stable_seed(protocol.seed, "test", i)))
    return Split(train=train, craft=craft, tests=tests)
