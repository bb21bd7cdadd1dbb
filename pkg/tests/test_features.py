"""Feature extraction: values against an independent oracle, exact Jacobian
against central finite differences, normalizer round trips."""

import math

import numpy as np
import pytest

from alphafool import features as ft
from alphafool import market_data as md

from conftest import random_window


def oracle_features(closes, minute_frac, hour_frac):
    """Straightforward spreadsheet-style recomputation of the 17 features,
    sharing no code with the library path."""
    closes = [float(c) for c in closes]
    groups = [closes[5 * g:5 * g + 5] for g in range(6)]
    avgs = [sum(g) / 5.0 for g in groups]
    rets = [math.log(avgs[i + 1] / avgs[i]) for i in range(5)]
    stds, trends = [], []
    for g in groups[1:]:
        m = sum(g) / 5.0
        var = sum((c - m) ** 2 for c in g) / 5.0
        stds.append(math.sqrt(var + 1e-12))
        trends.append(sum((x - 2) * c for x, c in zip(range(5), g)) / 10.0)
    return rets + stds + trends + [minute_frac, hour_frac]


def fd_jacobian(closes, minute_frac, hour_frac, rel_step=1e-4):
    """Central finite differences of the feature pipeline, step = rel_step * price."""
    closes = np.asarray(closes, dtype=np.float64)
    jac = np.zeros((ft.N_FEATURES, ft.LOOKBACK))
    for j in range(ft.LOOKBACK):
        h = rel_step * closes[j]
        up, dn = closes.copy(), closes.copy()
        up[j] += h
        dn[j] -= h
        fp = ft.features_from_closes(up[None], [minute_frac], [hour_frac])[0]
        fm = ft.features_from_closes(dn[None], [minute_frac], [hour_frac])[0]
        jac[:, j] = (fp - fm) / (2.0 * h)
    return jac


class TestGroupStats:
    def test_arithmetic_sequence(self):
        gs = ft.group_stats([1, 2, 3, 4, 5])
        assert gs.avg == pytest.approx(3.0)
        assert gs.trend == pytest.approx(1.0)
        assert gs.std == pytest.approx(math.sqrt(2.0), rel=1e-9)

    def test_constant_group(self):
        gs = ft.group_stats([7.5] * 5)
        assert gs.avg == 7.5
        assert gs.trend == pytest.approx(0.0, abs=1e-12)
        assert gs.std == pytest.approx(0.0, abs=2e-6)  # variance floor

    def test_alternating_group_against_oracle(self):
        closes = [2, 1, 2, 1, 2]
        gs = ft.group_stats(closes)
        # oracle: direct closed-form mean/std/slope
        m = sum(closes) / 5.0
        std = math.sqrt(sum((c - m) ** 2 for c in closes) / 5.0 + 1e-12)
        slope = sum((x - 2) * c for x, c in zip(range(5), closes)) / 10.0
        assert m == pytest.approx(1.6)
        assert std == pytest.approx(0.4898979485566, rel=1e-9)
        assert gs.avg == pytest.approx(m)
        assert gs.std == pytest.approx(std, rel=1e-12)
        assert gs.trend == pytest.approx(slope, abs=1e-15)

    def test_nonpositive_price_rejected(self):
        with pytest.raises(ValueError):
            ft.group_stats([1, 2, 3, 4, 0])


class TestExtractFeatures:
    def test_constant_window(self):
        w = random_window(np.random.default_rng(0))
        const = md.WindowSample(symbol=w.symbol, timestamps=w.timestamps,
                                open=np.full(30, 50.0), high=np.full(30, 50.0),
                                low=np.full(30, 50.0), close=np.full(30, 50.0),
                                volume=w.volume, label=0, horizon_close=50.0)
        fv = ft.extract_features(const)
        assert np.all(fv.pseudo_log_returns == 0.0)
        assert np.all(np.abs(fv.stds) <= 2e-6)
        assert np.all(np.abs(fv.trends) <= 1e-12)

    def test_doubling_group_averages(self):
        closes = np.repeat(100.0 * 2.0 ** np.arange(6), 5)
        vals = ft.features_from_closes(closes[None], [0.0], [0.5])[0]
        assert vals[ft.RETURNS] == pytest.approx([math.log(2)] * 5, rel=1e-12)

    def test_matches_independent_oracle(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            w = random_window(rng)
            got = ft.extract_features(w).values
            want = oracle_features(w.close, w.minute_frac, w.hour_frac)
            np.testing.assert_allclose(got, want, rtol=1e-12, atol=0.0)

    def test_time_encoding(self):
        w = random_window(np.random.default_rng(1), minute=17, hour=11)
        fv = ft.extract_features(w)
        assert fv.minute_of_hour == pytest.approx(17 / 60)
        assert fv.hour_of_day == pytest.approx(11 / 24)
        assert 0 <= fv.minute_of_hour < 1 and 0 <= fv.hour_of_day < 1

    def test_deterministic(self):
        w = random_window(np.random.default_rng(3))
        a = ft.extract_features(w).values
        b = ft.extract_features(w).values
        assert np.array_equal(a, b)

    def test_scale_covariance(self):
        rng = np.random.default_rng(5)
        w = random_window(rng)
        base = ft.extract_features(w).values
        for c in (0.5, 3.0, 117.0):
            scaled = ft.features_from_closes(c * w.close[None],
                                             [w.minute_frac], [w.hour_frac])[0]
            np.testing.assert_allclose(scaled[ft.RETURNS], base[ft.RETURNS],
                                       rtol=0, atol=1e-12)
            np.testing.assert_allclose(scaled[ft.STDS], c * base[ft.STDS], rtol=1e-9)
            np.testing.assert_allclose(scaled[ft.TRENDS], c * base[ft.TRENDS],
                                       rtol=1e-9, atol=1e-12)
            assert scaled[ft.MINUTE_IDX] == base[ft.MINUTE_IDX]
            assert scaled[ft.HOUR_IDX] == base[ft.HOUR_IDX]

    def test_wrong_length_rejected(self):
        with pytest.raises(ValueError):
            ft.features_from_closes(np.ones((1, 25)), [0.0], [0.0])


class TestJacobian:
    def test_trend_rows_are_fixed_weights(self):
        closes = np.full(30, 80.0)
        jac = ft.jacobian_from_closes(closes[None])[0]
        for i in range(5):
            cols = slice((i + 1) * 5, (i + 2) * 5)
            np.testing.assert_allclose(jac[10 + i, cols],
                                       [-0.2, -0.1, 0.0, 0.1, 0.2])
            row = jac[10 + i].copy()
            row[cols] = 0.0
            assert np.all(row == 0.0)

    def test_time_rows_zero(self):
        w = random_window(np.random.default_rng(8))
        jac = ft.feature_input_jacobian(w)
        assert np.all(jac[ft.MINUTE_IDX] == 0.0)
        assert np.all(jac[ft.HOUR_IDX] == 0.0)

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(99)
        for _ in range(100):
            w = random_window(rng)
            analytic = ft.feature_input_jacobian(w)
            fd = fd_jacobian(w.close, w.minute_frac, w.hour_frac)
            err = np.abs(analytic - fd)
            tol = np.maximum(1e-5 * np.abs(analytic), 1e-8)
            assert np.all(err <= tol), float(np.max(err / np.maximum(tol, 1e-300)))

    def test_chain_rule_consistency(self):
        # gradient of a random linear functional of the features wrt closes
        rng = np.random.default_rng(123)
        for _ in range(10):
            w = random_window(rng)
            weights = rng.standard_normal(ft.N_FEATURES)
            grad = ft.feature_input_jacobian(w).T @ weights

            def scalar(closes):
                f = ft.features_from_closes(closes[None], [w.minute_frac],
                                            [w.hour_frac])[0]
                return float(weights @ f)

            for j in rng.choice(30, size=5, replace=False):
                h = 1e-4 * w.close[j]
                up, dn = w.close.copy(), w.close.copy()
                up[j] += h
                dn[j] -= h
                fd = (scalar(up) - scalar(dn)) / (2 * h)
                assert grad[j] == pytest.approx(fd, rel=1e-5, abs=1e-8)


class TestNormalizer:
    def test_zscore_on_training_set(self):
        rng = np.random.default_rng(4)
        feats = rng.normal(3.0, 2.5, size=(500, ft.N_FEATURES))
        norm = ft.fit_normalizer(feats)
        z = norm.apply(feats)
        np.testing.assert_allclose(z.mean(axis=0), 0.0, atol=1e-9)
        np.testing.assert_allclose(z.std(axis=0), 1.0, rtol=1e-6)

    def test_constant_column_floors_to_zero(self):
        feats = np.ones((10, ft.N_FEATURES))
        feats[:, 3] = 42.0
        norm = ft.fit_normalizer(feats)
        z = norm.apply(feats)
        assert np.all(z == 0.0)

    def test_affine_round_trip(self):
        rng = np.random.default_rng(6)
        feats = rng.uniform(-5, 5, size=(50, ft.N_FEATURES))
        norm = ft.fit_normalizer(feats)
        back = norm.invert(norm.apply(feats))
        np.testing.assert_allclose(back, feats, rtol=1e-9)

    def test_needs_two_vectors(self):
        with pytest.raises(ValueError):
            ft.fit_normalizer(np.ones((1, ft.N_FEATURES)))
        with pytest.raises(ValueError):
            ft.fit_normalizer([])

    def test_json_round_trip(self, tmp_path):
        rng = np.random.default_rng(7)
        norm = ft.fit_normalizer(rng.normal(size=(20, ft.N_FEATURES)))
        p = tmp_path / "norm.json"
        norm.save(p)
        back = ft.Normalizer.load(p)
        assert np.array_equal(back.mean, norm.mean)
        assert np.array_equal(back.std, norm.std)


def test_features_csv_export(tmp_path, synth_windows):
    path = tmp_path / "features.csv"
    samples = synth_windows[:10]
    ft.features_to_csv(samples, path)
    lines = path.read_text().strip().splitlines()
    assert len(lines) == 11
    header = lines[0].split(",")
    assert len(header) == 20
    first = lines[1].split(",")
    np.testing.assert_allclose(
        [float(x) for x in first[:17]],
        ft.extract_features(samples[0]).values, rtol=0, atol=0)
