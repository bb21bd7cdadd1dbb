"""Shared fixtures and helpers for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from alphafool import market_data as md


def series_from_closes(closes, symbol="TST", start="2018-01-02T09:30",
                       minutes_per_day=390) -> md.StockSeries:
    """Build a valid series from a close path; open = previous close,
    high/low envelope the bar, volume constant."""
    closes = np.asarray(closes, dtype=np.float64)
    n = len(closes)
    open_ = np.empty(n)
    open_[0] = closes[0]
    open_[1:] = closes[:-1]
    high = np.maximum(open_, closes)
    low = np.minimum(open_, closes)
    start = np.datetime64(start, "m")
    day_idx = np.arange(n) // minutes_per_day
    minute_idx = np.arange(n) % minutes_per_day
    ts = start + day_idx * np.timedelta64(1, "D") + minute_idx * md.MINUTE
    vol = np.full(n, 1000.0)
    return md.StockSeries(symbol, ts, open_, high, low, closes, vol)


def random_window(rng, lo=50.0, hi=250.0, minute=17, hour=11) -> md.WindowSample:
    """A 30-bar window with independent uniform closes (well-conditioned for
    finite-difference checks) anchored at a fixed wall-clock time."""
    closes = rng.uniform(lo, hi, md.DEFAULT_LOOKBACK)
    n = len(closes)
    open_ = np.concatenate([[closes[0]], closes[:-1]])
    anchor = np.datetime64("2018-01-02", "m") + (hour * 60 + minute) * md.MINUTE
    ts = anchor - (n - 1 - np.arange(n)) * md.MINUTE
    return md.WindowSample(
        symbol="RND", timestamps=ts, open=open_,
        high=np.maximum(open_, closes), low=np.minimum(open_, closes),
        close=closes, volume=np.full(n, 100.0), label=1,
        horizon_close=float(closes[-1] * 1.001),
    )


@pytest.fixture(scope="session")
def synth_series() -> md.StockSeries:
    params = md.SynthParams(n_days=10, minutes_per_day=120, start_price=150.0,
                            volatility=2e-4, seasonality_amplitude=1e-3)
    return md.synthesize_series(params, seed=7)


@pytest.fixture(scope="session")
def synth_windows(synth_series):
    return md.make_windows(synth_series)
