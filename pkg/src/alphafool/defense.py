"""Mitigations: supervised perturbation detectors, adversarial retraining,
and a multi-broker stream cross-check filter.

Detectors read the same 17-feature vectors the alpha models consume. The
evaluation mirrors the attack's weekly test protocol: each week's detector
set mixes a configured fraction of perturbed windows into benign data from
the same week.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import alpha_models as am
from . import attack as atk
from . import features as ft
from . import market_data as md
from . import nn


@dataclass
class DetectorDataset:
    """Feature vectors flagged perturbed/benign at a configured mix ratio."""

    features: np.ndarray  # (N, 17)
    flags: np.ndarray     # (N,) bool, True = perturbed
    ratio: float
    anchors: np.ndarray   # (N,) int64 anchor timestamps, for leak checks
    sources: list = field(default_factory=list)  # clean twin per sample

    def __post_init__(self):
        if len(self.features) != len(self.flags):
            raise ValueError("features/flags length mismatch")


def build_detector_set(pool: list[md.WindowSample], tuap: atk.Tuap,
                       ratio: float, seed: int) -> DetectorDataset:
    """Mix round(ratio*N) perturbed windows into the pool (rest stay benign).

    Each perturbed sample's clean twin is retained so the construction can
    be verified by subtraction.
    """
    if not 0 <= ratio <= 1:
        raise ValueError("ratio must be in [0, 1]")
    n = len(pool)
    n_pert = int(round(ratio * n))
    rng = np.random.default_rng(seed)
    pert_idx = set(rng.choice(n, size=n_pert, replace=False).tolist()) if n_pert else set()
    windows, flags, sources = [], [], []
    for i, w in enumerate(pool):
        if i in pert_idx:
            windows.append(atk.apply_perturbation(w, tuap))
            flags.append(True)
        else:
            windows.append(w)
            flags.append(False)
        sources.append(w)
    return DetectorDataset(
        features=ft.windows_to_features(windows),
        flags=np.array(flags, dtype=bool),
        ratio=ratio,
        anchors=np.array([w.anchor_timestamp.astype("int64") for w in pool]),
        sources=sources)


def build_detector_sets(craft_set: list[md.WindowSample], tuap: atk.Tuap,
                        test_sets: list[list[md.WindowSample]],
                        ratio: float = 0.10, seed: int = 0):
    """Detector train set from the craft-period data plus one mixed set per
    test week."""
    train = build_detector_set(craft_set, tuap, ratio,
                               seed=md.stable_seed(seed, "detector", "train"))
    tests = [build_detector_set(t, tuap, ratio,
                                seed=md.stable_seed(seed, "detector", i))
             for i, t in enumerate(test_sets)]
    return train, tests


# ---------------------------------------------------------------------------
# Detectors
# ---------------------------------------------------------------------------

class KnnDetector:
    """k-nearest-neighbor vote over z-scored feature vectors."""

    def __init__(self, k: int = 5):
        self.k = k
        self.mean = None
        self.std = None
        self.points = None
        self.labels = None

    def fit(self, train: DetectorDataset) -> "KnnDetector":
        if len(np.unique(train.flags)) < 2:
            raise ValueError("detector training set needs both classes")
        self.mean = train.features.mean(axis=0)
        self.std = np.maximum(train.features.std(axis=0), 1e-8)
        self.points = (train.features - self.mean) / self.std
        self.labels = train.flags.astype(int)
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(features) - self.mean) / self.std
        d2 = ((z[:, None, :] - self.points[None, :, :]) ** 2).sum(axis=2)
        idx = np.argsort(d2, axis=1)[:, :self.k]
        votes = self.labels[idx].sum(axis=1)
        return votes * 2 > self.k


class AnnDetector:
    """Small dense network trained on the perturbed/benign flag."""

    def __init__(self, seed: int = 0, epochs: int = 30, lr: float = 1e-3,
                 batch_size: int = 32):
        self.seed = seed
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.graph = nn.ModelGraph(
            [nn.Dense(ft.N_FEATURES, 32, "relu"), nn.Dense(32, 16, "relu"),
             nn.Dense(16, 2, "identity"), nn.Softmax()], (ft.N_FEATURES,))
        self.mean = None
        self.std = None

    def fit(self, train: DetectorDataset) -> "AnnDetector":
        if len(np.unique(train.flags)) < 2:
            raise ValueError("detector training set needs both classes")
        self.mean = train.features.mean(axis=0)
        self.std = np.maximum(train.features.std(axis=0), 1e-8)
        x = (train.features - self.mean) / self.std
        y = train.flags.astype(int)
        self.graph.init_params(self.seed)
        opt = nn.Adam(lr=self.lr)
        rng = np.random.default_rng(self.seed)
        # the perturbed class is a small minority (typically 10%); draw
        # class-balanced batches so the net cannot collapse to "benign"
        pos = np.flatnonzero(y == 1)
        neg = np.flatnonzero(y == 0)
        steps = max(1, len(x) // self.batch_size)
        half = max(1, self.batch_size // 2)
        for _ in range(self.epochs):
            for _ in range(steps):
                idx = np.concatenate([rng.choice(pos, size=half),
                                      rng.choice(neg, size=half)])
                nn.train_step(self.graph, opt, x[idx], y[idx])
        return self

    def predict(self, features: np.ndarray) -> np.ndarray:
        z = (np.atleast_2d(features) - self.mean) / self.std
        return self.graph.forward(z).probs.argmax(axis=1) == 1


def train_knn_detector(train: DetectorDataset, k: int = 5) -> KnnDetector:
    return KnnDetector(k=k).fit(train)


def train_ann_detector(train: DetectorDataset, seed: int = 0) -> AnnDetector:
    return AnnDetector(seed=seed).fit(train)


@dataclass(frozen=True)
class DetectionReport:
    """Weekly precision/recall; precision is None when nothing is flagged."""

    detector_kind: str
    weeks: list  # per week: dict(precision, recall, tp, fp, fn, tn)

    def to_dict(self) -> dict:
        return {"detector_kind": self.detector_kind, "weeks": self.weeks}


def precision_recall(pred: np.ndarray, truth: np.ndarray) -> dict:
    tp = int(np.sum(pred & truth))
    fp = int(np.sum(pred & ~truth))
    fn = int(np.sum(~pred & truth))
    tn = int(np.sum(~pred & ~truth))
    precision = None if (tp + fp) == 0 else 100.0 * tp / (tp + fp)
    recall = None if (tp + fn) == 0 else 100.0 * tp / (tp + fn)
    return {"precision": precision, "recall": recall,
            "tp": tp, "fp": fp, "fn": fn, "tn": tn}


def evaluate_detector(detector, tests: list[DetectorDataset],
                      kind: str = "") -> DetectionReport:
    weeks = []
    for i, t in enumerate(tests):
        pred = detector.predict(t.features)
        stats = precision_recall(pred, t.flags)
        stats["week"] = i + 1
        weeks.append(stats)
    return DetectionReport(detector_kind=kind or type(detector).__name__,
                           weeks=weeks)


# ---------------------------------------------------------------------------
# Adversarial retraining
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RetrainReport:
    """Per-fraction TFR on perturbed test sets and DA on clean test sets."""

    rows: list  # dicts: fraction, tfr_perturbed, da_clean, error

    def to_dict(self) -> dict:
        return {"rows": self.rows}


def adversarial_retrain(model: am.TrainedModel,
                        train_samples: list[md.WindowSample],
                        tuap: atk.Tuap,
                        test_sets: list[list[md.WindowSample]],
                        fractions=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5),
                        hyper: am.TrainHyper = am.TrainHyper(),
                        target_class: int = 1,
                        seed: int = 0) -> RetrainReport:
    """Retrain from scratch on a mix of clean and perturbed-with-true-labels
    data, sweeping the perturbed fraction.

    Fraction 0 reproduces baseline training bit-exactly under the same seed.
    The deployed normalizer is reused (preprocessing is part of the system;
    retraining replaces weights only). Per-cell failures are recorded and
    the sweep continues.
    """
    if any(f < 0 or f > 1 for f in fractions):
        raise ValueError("fractions must lie in [0, 1]")
    rows = []
    all_tests = [s for t in test_sets for s in t]
    for fraction in fractions:
        n_pert = int(round(fraction * len(train_samples)))
        rng = np.random.default_rng(md.stable_seed(seed, "retrain", repr(fraction)))
        pert_idx = set(rng.choice(len(train_samples), size=n_pert,
                                  replace=False).tolist()) if n_pert else set()
        mixed = [atk.apply_perturbation(w, tuap) if i in pert_idx else w
                 for i, w in enumerate(train_samples)]
        retrained = am.build(model.arch, seed=hyper.seed)
        try:
            retrained, _ = am.train(retrained, mixed, hyper,
                                    normalizer=model.normalizer)
            tfr_pert = atk.tfr(retrained, all_tests, tuap, target_class)
            da_clean = retrained.directional_accuracy(all_tests).da
            rows.append({"fraction": fraction, "tfr_perturbed": tfr_pert,
                         "da_clean": da_clean, "error": None})
        except (nn.NonFiniteError, ValueError) as exc:
            rows.append({"fraction": fraction, "tfr_perturbed": None,
                         "da_clean": None, "error": str(exc)})
    return RetrainReport(rows=rows)


# ---------------------------------------------------------------------------
# Multi-broker cross-check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MismatchRecord:
    timestamp: np.datetime64
    closes: tuple
    max_deviation: float
    action: str  # "kept" | "dropped"


def multi_broker_filter(streams: list[md.StockSeries],
                        tolerance_pct: float = 0.005):
    """Compare per-minute closes across broker streams; emit the consensus
    (median of all fields) where they agree, drop and log the minute where
    any pairwise relative deviation exceeds the tolerance.

    Returns (filtered StockSeries, list of MismatchRecord covering every
    shared minute, kept or dropped).
    """
    if len(streams) < 2:
        raise ValueError("need at least 2 broker streams to cross-check")
    symbol = streams[0].symbol
    tol = tolerance_pct / 100.0

    shared = streams[0].timestamps
    for s in streams[1:]:
        shared = np.intersect1d(shared, s.timestamps)
    index = [{int(t.astype("int64")): i for i, t in enumerate(s.timestamps)}
             for s in streams]

    records = []
    kept_rows = []
    for t in shared:
        key = int(t.astype("int64"))
        rows = [(s.open[ix[key]], s.high[ix[key]], s.low[ix[key]],
                 s.close[ix[key]], s.volume[ix[key]])
                for s, ix in zip(streams, index)]
        closes = np.array([r[3] for r in rows])
        max_dev = 0.0
        for i in range(len(closes)):
            for j in range(i + 1, len(closes)):
                mean = 0.5 * (closes[i] + closes[j])
                max_dev = max(max_dev, abs(closes[i] - closes[j]) / mean)
        if max_dev <= tol:
            med = np.median(np.array(rows), axis=0)
            o, h, l, c, v = med
            kept_rows.append((t, o, max(h, o, c), min(l, o, c), c, v))
            records.append(MismatchRecord(t, tuple(closes.tolist()),
                                          float(max_dev), "kept"))
        else:
            records.append(MismatchRecord(t, tuple(closes.tolist()),
                                          float(max_dev), "dropped"))

    if kept_rows:
        ts = np.array([r[0] for r in kept_rows], dtype="datetime64[m]")
        cols = np.array([[r[i] for r in kept_rows] for i in range(1, 6)])
        filtered = md.StockSeries(symbol, ts, *cols)
    else:
        filtered = md.StockSeries(symbol, np.array([], dtype="datetime64[m]"),
                                  *(np.array([]) for _ in range(5)))
    return filtered, records


def mismatch_report_csv(records: list[MismatchRecord], path) -> None:
    import csv as _csv

    with open(path, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["timestamp", "closes", "max_deviation_pct", "action"])
        for r in records:
            w.writerow([np.datetime_as_string(r.timestamp, unit="m"),
                        ";".join(repr(c) for c in r.closes),
                        repr(r.max_deviation * 100.0), r.action])
