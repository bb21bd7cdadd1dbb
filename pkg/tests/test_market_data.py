"""Data layer: CSV ingestion, synthesis, windowing, balanced splits."""

import warnings

import numpy as np
import pytest

from alphafool import market_data as md

from conftest import series_from_closes


def write_csv(path, rows, header="symbol,timestamp,open,high,low,close,volume"):
    path.write_text(header + "\n" + "\n".join(rows) + ("\n" if rows else ""))


class TestLoadCsv:
    def test_direct_field_mapping(self, tmp_path):
        p = tmp_path / "one.csv"
        write_csv(p, ["AAPL,2018-01-05T10:01,170.1,170.3,170.0,170.2,1200"])
        series = md.load_csv(p)
        assert series.symbol == "AAPL"
        assert len(series) == 1
        assert series.close[0] == 170.2
        assert series.timestamps[0] == np.datetime64("2018-01-05T10:01", "m")

    def test_invalid_row_dropped_and_counted(self, tmp_path):
        p = tmp_path / "drop.csv"
        rows = [f"X,2018-01-05T10:{i:02d},100,101,99,100.5,10" for i in range(30)]
        rows.append("X,2018-01-05T10:30,100,100.1,99,100.5,10")  # high < close
        write_csv(p, rows)
        series = md.load_csv(p)
        assert len(series) == 30
        assert series._dropped_rows == 1

    def test_full_day_count_preserved(self, tmp_path):
        p = tmp_path / "day.csv"
        rows = [f"X,2018-01-05T{9 + (30 + i) // 60:02d}:{(30 + i) % 60:02d},"
                f"100,101,99,100,10" for i in range(390)]
        write_csv(p, rows)
        series = md.load_csv(p)
        assert len(series) == 390
        assert len(series.days) == 1

    def test_corrupt_source_over_threshold(self, tmp_path):
        p = tmp_path / "bad.csv"
        rows = [f"X,2018-01-05T10:{i:02d},100,101,99,100.5,10" for i in range(18)]
        rows += [f"X,2018-01-05T11:{i:02d},100,99,99,100.5,10" for i in range(2)]
        write_csv(p, rows)
        with pytest.raises(md.CorruptSourceError, match="corrupt source"):
            md.load_csv(p)

    def test_non_monotonic_within_day_is_hard_error(self, tmp_path):
        p = tmp_path / "mono.csv"
        write_csv(p, ["X,2018-01-05T10:05,100,101,99,100,10",
                      "X,2018-01-05T10:04,100,101,99,100,10"])
        with pytest.raises(md.CorruptSourceError):
            md.load_csv(p)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(md.CorruptSourceError):
            md.load_csv(tmp_path / "missing.csv")

    def test_schema_mapping(self, tmp_path):
        p = tmp_path / "mapped.csv"
        write_csv(p, ["Z,2018-01-05T10:01,10,11,9,10.5,1"],
                  header="tick,time,o,h,l,c,v")
        series = md.load_csv(p, schema={"symbol": "tick", "timestamp": "time",
                                        "open": "o", "high": "h", "low": "l",
                                        "close": "c", "volume": "v"})
        assert series.symbol == "Z"
        assert series.close[0] == 10.5

    def test_round_trip_identity(self, tmp_path, synth_series):
        p = tmp_path / "rt.csv"
        md.to_csv(synth_series, p)
        back = md.load_csv(p)
        assert back.symbol == synth_series.symbol
        assert np.array_equal(back.timestamps, synth_series.timestamps)
        for f in ("open", "high", "low", "close", "volume"):
            assert np.array_equal(getattr(back, f), getattr(synth_series, f)), f


class TestSynthesize:
    def test_degenerate_walk_is_constant(self):
        params = md.SynthParams(n_days=2, minutes_per_day=50, start_price=42.0,
                                drift=0.0, volatility=0.0,
                                seasonality_amplitude=0.0)
        series = md.synthesize_series(params, seed=3)
        assert np.all(series.close == 42.0)
        assert np.all(series.open == 42.0)

    def test_same_seed_bit_identical(self):
        params = md.SynthParams(n_days=3, minutes_per_day=60)
        a = md.synthesize_series(params, seed=11)
        b = md.synthesize_series(params, seed=11)
        for f in ("open", "high", "low", "close", "volume"):
            assert np.array_equal(getattr(a, f), getattr(b, f))
        c = md.synthesize_series(params, seed=12)
        assert not np.array_equal(a.close, c.close)

    def test_volatility_statistics(self):
        # oracle: the sample std of per-minute log returns of the generated
        # path, with drift and seasonality switched off, estimates volatility
        params = md.SynthParams(n_days=20, minutes_per_day=390, drift=0.0,
                                volatility=2e-4, seasonality_amplitude=0.0)
        series = md.synthesize_series(params, seed=5)
        rets = np.diff(np.log(series.close))
        assert abs(rets.std() - 2e-4) <= 0.2 * 2e-4

    def test_invalid_params_rejected(self):
        with pytest.raises(ValueError):
            md.SynthParams(start_price=-1.0)
        with pytest.raises(ValueError):
            md.SynthParams(volatility=-0.1)

    def test_weekday_calendar(self):
        params = md.SynthParams(n_days=7, minutes_per_day=10)
        series = md.synthesize_series(params, seed=1)
        weekdays = (series.days.astype("int64") - 3) % 7
        assert np.all(weekdays < 5)


class TestMakeWindows:
    def test_constant_day_all_labels_zero(self):
        series = series_from_closes(np.full(60, 100.0), minutes_per_day=60)
        windows = md.make_windows(series)
        assert windows and all(w.label == 0 for w in windows)

    def test_increasing_day_all_labels_one(self):
        series = series_from_closes(100.0 + 0.01 * np.arange(60), minutes_per_day=60)
        windows = md.make_windows(series)
        assert windows and all(w.label == 1 for w in windows)

    def test_full_day_window_count(self):
        series = series_from_closes(np.linspace(100, 101, 390), minutes_per_day=390)
        windows = md.make_windows(series, lookback=30, horizon=5)
        # oracle: enumerate valid anchors directly
        expected = sum(1 for a in range(390) if a - 29 >= 0 and a + 5 <= 389)
        assert expected == 356
        assert len(windows) == expected

    def test_label_rule_recomputes(self, synth_series, synth_windows):
        closes = {t: c for t, c in zip(synth_series.timestamps.astype("int64"),
                                       synth_series.close)}
        for w in synth_windows:
            t = int(w.anchor_timestamp.astype("int64"))
            future = closes[t + md.DEFAULT_HORIZON]
            assert w.label == int(future > w.close[-1])
            assert w.horizon_close == future

    def test_windows_never_cross_day_boundary(self, synth_windows):
        for w in synth_windows:
            days = w.timestamps.astype("datetime64[D]")
            assert np.all(days == days[0])
            assert int((w.timestamps[-1] - w.timestamps[0]) / md.MINUTE) == len(w) - 1

    def test_holes_are_skipped(self):
        series = series_from_closes(np.full(80, 100.0), minutes_per_day=80)
        keep = np.ones(80, bool)
        keep[40] = False  # drop one minute mid-day
        holed = md.StockSeries(series.symbol, series.timestamps[keep],
                               series.open[keep], series.high[keep],
                               series.low[keep], series.close[keep],
                               series.volume[keep])
        windows = md.make_windows(holed)
        for w in windows:
            assert int((w.timestamps[-1] - w.timestamps[0]) / md.MINUTE) == len(w) - 1
        # oracle: valid anchors avoid any window/horizon touching the hole
        n_full = len(md.make_windows(series))
        assert len(windows) == n_full - 1 - (md.DEFAULT_LOOKBACK + md.DEFAULT_HORIZON - 1)

    def test_short_series_warns_and_returns_empty(self):
        series = series_from_closes(np.full(20, 100.0), minutes_per_day=20)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            assert md.make_windows(series) == []
        assert any("lookback" in str(w.message) for w in caught)


class TestBalancedSample:
    def test_exact_counts(self, synth_windows):
        picked = md.balanced_sample(synth_windows, 100, seed=0)
        labels = [s.label for s in picked]
        assert len(picked) == 200
        assert sum(labels) == 100

    def test_insufficient_class_message(self, synth_windows):
        ups = [w for w in synth_windows if w.label == 1][:99]
        downs = [w for w in synth_windows if w.label == 0][:120]
        with pytest.raises(ValueError, match=r"insufficient class 1: 99 < 100"):
            md.balanced_sample(ups + downs, 100, seed=0)

    def test_deterministic_and_without_replacement(self, synth_windows):
        a = md.balanced_sample(synth_windows, 50, seed=9)
        b = md.balanced_sample(synth_windows, 50, seed=9)
        assert [s.anchor_timestamp for s in a] == [s.anchor_timestamp for s in b]
        anchors = [s.anchor_timestamp for s in a]
        assert len(set(anchors)) == len(anchors)
        c = md.balanced_sample(synth_windows, 50, seed=10)
        assert [s.anchor_timestamp for s in c] != anchors


@pytest.fixture(scope="module")
def big_series():
    params = md.SynthParams(n_days=16, minutes_per_day=120)
    return md.synthesize_series(params, seed=21)


@pytest.fixture(scope="module")
def protocol(big_series):
    return md.SplitProtocol.from_days(
        big_series.days.tolist(), n_train_days=5, n_craft_days=3,
        n_test_weeks=4, days_per_week=2, samples_per_class=30, seed=1)


class TestSplitProtocol:
    def test_overlapping_ranges_rejected(self, big_series):
        days = big_series.days.tolist()
        with pytest.raises(ValueError, match="disjoint"):
            md.SplitProtocol(tuple(days[:5]), tuple(days[4:7]),
                             (tuple(days[7:9]),))

    def test_craft_set_size_and_balance(self, big_series, protocol):
        split = md.build_split(big_series, protocol)
        assert len(split.craft) == 120
        labels = [s.label for s in split.craft]
        assert sum(labels) == 60

    def test_test_sets_balanced(self, big_series, protocol):
        split = md.build_split(big_series, protocol)
        assert len(split.tests) == 4
        for t in split.tests:
            assert len(t) == 60
            assert sum(s.label for s in t) == 30

    def test_split_disjointness(self, big_series, protocol):
        split = md.build_split(big_series, protocol)
        groups = [split.train, split.craft, *split.tests]
        seen = set()
        for g in groups:
            anchors = {s.anchor_timestamp.astype("int64").item() for s in g}
            assert not (anchors & seen)
            seen |= anchors

    def test_missing_days_listed(self, big_series):
        protocol = md.SplitProtocol.from_days(
            big_series.days.tolist() + ["2030-01-06"],
            n_train_days=6, n_craft_days=3, n_test_weeks=4, days_per_week=2,
            samples_per_class=10)
        with pytest.raises(md.SplitError, match="missing"):
            md.build_split(big_series, protocol)

    def test_deterministic(self, big_series, protocol):
        a = md.build_split(big_series, protocol)
        b = md.build_split(big_series, protocol)
        assert [s.anchor_timestamp for s in a.craft] == [s.anchor_timestamp for s in b.craft]


def test_stable_seed_reproducible():
    assert md.stable_seed(1, "craft", 2) == md.stable_seed(1, "craft", 2)
    assert md.stable_seed(1, "craft", 2) != md.stable_seed(1, "craft", 3)


def test_minute_bar_validity():
    ts = np.datetime64("2018-01-02T10:00", "m")
    assert md.MinuteBar(ts, 10, 11, 9, 10.5, 0).is_valid()
    assert not md.MinuteBar(ts, 10, 10.1, 9, 10.5, 0).is_valid()  # high < close
    assert not md.MinuteBar(ts, 10, 11, 9, -1, 0).is_valid()
