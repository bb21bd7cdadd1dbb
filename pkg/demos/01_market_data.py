"""Synthesize an intraday series, slice it into labeled windows, and build
the train / craft / test-week split protocol."""

import tempfile
from pathlib import Path

import numpy as np

from alphafool import market_data as md

params = md.SynthParams(n_days=20, minutes_per_day=390, start_price=150.0,
                        volatility=2e-4, seasonality_amplitude=1.2e-3,
                        seasonality_shape="triangle", vol_of_vol=0.8,
                        symbol="DEMO")
series = md.synthesize_series(params, seed=7)
print(f"synthesized {series.symbol}: {len(series)} one-minute bars over "
      f"{len(series.days)} trading days")
print(f"close range: {series.close.min():.2f} .. {series.close.max():.2f}")

windows = md.make_windows(series)
labels = np.array([w.label for w in windows])
print(f"\n{len(windows)} sliding windows (lookback {md.DEFAULT_LOOKBACK} min, "
      f"horizon {md.DEFAULT_HORIZON} min)")
print(f"label balance: {labels.mean():.1%} increase")

protocol = md.SplitProtocol.from_days(series.days.tolist(), n_train_days=10,
                                      n_craft_days=3, n_test_weeks=1,
                                      days_per_week=5, samples_per_class=100)
split = md.build_split(series, protocol)
print(f"\nsplit: train={len(split.train)} craft={len(split.craft)} "
      f"(balanced: {sum(s.label for s in split.craft)} increase) "
      f"T1={len(split.tests[0])}")

with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "demo.csv"
    md.to_csv(series, path)
    back = md.load_csv(path)
    identical = all(np.array_equal(getattr(back, f), getattr(series, f))
                    for f in ("open", "high", "low", "close", "volume"))
    print(f"\nCSV round trip: {len(back)} bars, bit-identical={identical}")
