"""17-feature representation of a price window, with exact input gradients.

The 30 closes of a window form six consecutive 5-minute groups. The five
pseudo-log returns are log ratios of consecutive group average closes; the
five std and five trend features come from the last five groups; minute-of-
hour and hour-of-day of the last bar round out 17 features. Everything is a
closed-form function of the closes, so the 17x30 Jacobian is analytic — the
path the crafting gradient backpropagates through.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

from .market_data import WindowSample

GROUP_MINUTES = 5
N_GROUPS = 6
LOOKBACK = GROUP_MINUTES * N_GROUPS  # 30
N_FEATURES = 17

RETURNS = slice(0, 5)
STDS = slice(5, 10)
TRENDS = slice(10, 15)
MINUTE_IDX = 15
HOUR_IDX = 16

FEATURE_NAMES = tuple(
    [f"ret_{i + 1}" for i in range(5)]
    + [f"std_{i + 1}" for i in range(5)]
    + [f"trend_{i + 1}" for i in range(5)]
    + ["minute_of_hour", "hour_of_day"]
)

# Least-squares slope weights over minute offsets (0,1,2,3,4):
# slope = sum((x - 2) * c) / sum((x - 2)^2) = (-2,-1,0,1,2) . c / 10
TREND_WEIGHTS = (np.arange(GROUP_MINUTES) - 2.0) / 10.0

# Variance floor keeping d(std)/d(close) finite at zero variance; shifts the
# std value itself by < 1e-6 price units.
STD_SMOOTHING = 1e-12


@dataclass(frozen=True)
class GroupStats:
    """Mean, population std, and least-squares slope of five closes."""

    avg: float
    std: float
    trend: float


def group_stats(closes) -> GroupStats:
    closes = np.asarray(closes, dtype=np.float64)
    if closes.shape != (GROUP_MINUTES,):
        raise ValueError(f"expected {GROUP_MINUTES} closes, got shape {closes.shape}")
    if np.any(closes <= 0):
        raise ValueError("closes must be strictly positive")
    avg = float(closes.mean())
    std = float(np.sqrt(closes.var() + STD_SMOOTHING))
    trend = float(TREND_WEIGHTS @ closes)
    return GroupStats(avg=avg, std=std, trend=trend)


@dataclass(frozen=True)
class FeatureVector:
    """The 17 model-input scalars for one window."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_FEATURES,):
            raise ValueError(f"expected {N_FEATURES} features, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("features must be finite")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @property
    def pseudo_log_returns(self) -> np.ndarray:
        return self.values[RETURNS]

    @property
    def stds(self) -> np.ndarray:
        return self.values[STDS]

    @property
    def trends(self) -> np.ndarray:
        return self.values[TRENDS]

    @property
    def minute_of_hour(self) -> float:
        return float(self.values[MINUTE_IDX])

    @property
    def hour_of_day(self) -> float:
        return float(self.values[HOUR_IDX])


def features_from_closes(closes: np.ndarray, minute_frac, hour_frac) -> np.ndarray:
    """Batched feature extraction: (B, 30) closes -> (B, 17) features."""
    closes = np.asarray(closes, dtype=np.float64)
    if closes.ndim == 1:
        closes = closes[None, :]
    b = closes.shape[0]
    if closes.shape != (b, LOOKBACK):
        raise ValueError(f"expected (B, {LOOKBACK}) closes, got {closes.shape}")
    if np.any(closes <= 0):
        raise ValueError("closes must be strictly positive")

    groups = closes.reshape(b, N_GROUPS, GROUP_MINUTES)
    avgs = groups.mean(axis=2)  # (B, 6)
    out = np.empty((b, N_FEATURES))
    out[:, RETURNS] = np.log(avgs[:, 1:] / avgs[:, :-1])
    last = groups[:, 1:, :]  # last five groups
    out[:, STDS] = np.sqrt(last.var(axis=2) + STD_SMOOTHING)
    out[:, TRENDS] = last @ TREND_WEIGHTS
    out[:, MINUTE_IDX] = np.asarray(minute_frac, dtype=np.float64)
    out[:, HOUR_IDX] = np.asarray(hour_frac, dtype=np.float64)
    return out


def extract_features(window: WindowSample) -> FeatureVector:
    if len(window) != LOOKBACK:
        raise ValueError(f"window must hold {LOOKBACK} bars, got {len(window)}")
    vals = features_from_closes(window.close, window.minute_frac, window.hour_frac)
    return FeatureVector(vals[0])


def jacobian_from_closes(closes: np.ndarray) -> np.ndarray:
    """Analytic d(feature)/d(close): (B, 30) closes -> (B, 17, 30).

    Time-feature rows are identically zero. Std rows use the same smoothed
    std as the feature value, so finite differences of the pipeline agree.
    """
    closes = np.asarray(closes, dtype=np.float64)
    if closes.ndim == 1:
        closes = closes[None, :]
    b = closes.shape[0]
    if closes.shape != (b, LOOKBACK):
        raise ValueError(f"expected (B, {LOOKBACK}) closes, got {closes.shape}")
    groups = closes.reshape(b, N_GROUPS, GROUP_MINUTES)
    avgs = groups.mean(axis=2)

    jac = np.zeros((b, N_FEATURES, LOOKBACK))
    # returns: r_i = log(avg_{i+1}) - log(avg_i); d avg/d close = 1/5 in-group
    for i in range(5):
        jac[:, i, (i + 1) * GROUP_MINUTES:(i + 2) * GROUP_MINUTES] = (
            1.0 / (GROUP_MINUTES * avgs[:, i + 1]))[:, None]
        jac[:, i, i * GROUP_MINUTES:(i + 1) * GROUP_MINUTES] = (
            -1.0 / (GROUP_MINUTES * avgs[:, i]))[:, None]
    # stds and trends live on the last five groups
    last = groups[:, 1:, :]
    stds = np.sqrt(last.var(axis=2) + STD_SMOOTHING)  # (B, 5)
    centered = last - avgs[:, 1:, None]
    for i in range(5):
        cols = slice((i + 1) * GROUP_MINUTES, (i + 2) * GROUP_MINUTES)
        jac[:, 5 + i, cols] = centered[:, i, :] / (GROUP_MINUTES * stds[:, i])[:, None]
        jac[:, 10 + i, cols] = TREND_WEIGHTS
    return jac


def feature_input_jacobian(window: WindowSample) -> np.ndarray:
    """17x30 Jacobian of the window's features wrt its close prices."""
    if len(window) != LOOKBACK:
        raise ValueError(f"window must hold {LOOKBACK} bars, got {len(window)}")
    return jacobian_from_closes(window.close)[0]


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

STD_FLOOR = 1e-8


@dataclass(frozen=True)
class Normalizer:
    """Per-feature z-score fitted on the training split only."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mean, dtype=np.float64).copy()
        s = np.asarray(self.std, dtype=np.float64).copy()
        if m.shape != (N_FEATURES,) or s.shape != (N_FEATURES,):
            raise ValueError("normalizer must carry one mean/std per feature")
        if np.any(s < STD_FLOOR):
            raise ValueError(f"fitted stds must be >= {STD_FLOOR}")
        m.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "std", s)

    def apply(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.mean) / self.std

    def invert(self, normalized: np.ndarray) -> np.ndarray:
        return np.asarray(normalized, dtype=np.float64) * self.std + self.mean

    @property
    def gradient_scale(self) -> np.ndarray:
        """Diagonal of d(normalized)/d(raw feature): 1/std."""
        return 1.0 / self.std

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Normalizer":
        return cls(np.array(d["mean"]), np.array(d["std"]))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "Normalizer":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_normalizer(train_features) -> Normalizer:
    """Fit per-feature mean/std (population, floored at STD_FLOOR)."""
    arr = _as_feature_matrix(train_features)
    if arr.shape[0] < 2:
        raise ValueError("need at least 2 training vectors to fit a normalizer")
    return Normalizer(arr.mean(axis=0), np.maximum(arr.std(axis=0), STD_FLOOR))


def _as_feature_matrix(features) -> np.ndarray:
    if isinstance(features, np.ndarray):
        arr = features.astype(np.float64, copy=False)
    else:
        rows = [f.values if isinstance(f, FeatureVector) else np.asarray(f, dtype=np.float64)
                for f in features]
        if not rows:
            raise ValueError("empty feature set")
        arr = np.stack(rows)
    if arr.ndim != 2 or arr.shape[1] != N_FEATURES:
        raise ValueError(f"expected (N, {N_FEATURES}) features, got {arr.shape}")
    return arr


def windows_to_features(samples: list[WindowSample]) -> np.ndarray:
    """Extract the (N, 17) feature matrix for a list of windows."""
    if not samples:
        return np.empty((0, N_FEATURES))
    closes = np.stack([s.close for s in samples])
    minutes = np.array([s.minute_frac for s in samples])
    hours = np.array([s.hour_frac for s in samples])
    return features_from_closes(closes, minutes, hours)


def features_to_csv(samples: list[WindowSample], path) -> None:
    """Export feature rows (17 columns + label + symbol + timestamp)."""
    feats = windows_to_features(samples)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(FEATURE_NAMES) + ["label", "symbol", "timestamp"])
        for s, row in zip(samples, feats):
            writer.writerow([repr(float(x)) for x in row]
                            + [s.label, s.symbol,
                               np.datetime_as_string(s.anchor_timestamp, unit="m")])
