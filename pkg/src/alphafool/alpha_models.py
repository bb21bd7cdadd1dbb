"""The three alpha-model architectures: build, train, predict, price gradients.

All three consume the same 17 features; the CNN/RNN adapt the three 5-long
families into a 5-step x 3-channel sequence and re-append the two time
scalars after their stack. Price gradients chain the model's input gradient
through the normalizer diagonal and the feature Jacobian down to the window's
30 close prices — the quantity the crafting attack needs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import features as ft
from . import nn
from .market_data import WindowSample

ARCH_KINDS = ("dnn", "cnn", "rnn")

DNN_HIDDEN = (128, 64, 32, 16, 8)
CNN_FILTERS, CNN_KERNEL, CNN_DENSE = 16, 3, (32, 16)
RNN_UNITS, RNN_DENSE = (32, 16), 8

SEQ_STEPS, SEQ_CHANNELS, TAIL_LEN = 5, 3, 2

BUNDLE_MANIFEST = "manifest.json"
BUNDLE_WEIGHTS = "weights.bin"
BUNDLE_NORMALIZER = "normalizer.json"


@dataclass(frozen=True)
class AlphaArch:
    """Architecture selector; the layer plan is fixed per kind."""

    kind: str

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise ValueError(f"unknown architecture {self.kind!r}; pick from {ARCH_KINDS}")

    def build_graph(self) -> nn.ModelGraph:
        k = self.kind
        if k == "dnn":
            layers = []
            width = ft.N_FEATURES
            for units in DNN_HIDDEN:
                layers.append(nn.Dense(width, units, "relu"))
                width = units
            layers += [nn.Dense(width, 2, "identity"), nn.Softmax()]
        elif k == "cnn":
            flat = SEQ_STEPS * CNN_FILTERS + TAIL_LEN
            layers = [
                nn.SeqSplit(SEQ_STEPS, SEQ_CHANNELS, TAIL_LEN),
                nn.Conv1D(SEQ_CHANNELS, CNN_FILTERS, CNN_KERNEL, "relu"),
                nn.TailConcat(TAIL_LEN),
                nn.Dense(flat, CNN_DENSE[0], "relu"),
                nn.Dense(CNN_DENSE[0], CNN_DENSE[1], "relu"),
                nn.Dense(CNN_DENSE[1], 2, "identity"),
                nn.Softmax(),
            ]
        else:
            layers = [
                nn.SeqSplit(SEQ_STEPS, SEQ_CHANNELS, TAIL_LEN),
                nn.LSTM(SEQ_CHANNELS, RNN_UNITS[0], return_sequences=True),
                nn.LSTM(RNN_UNITS[0], RNN_UNITS[1], return_sequences=False),
                nn.TailConcat(TAIL_LEN),
                nn.Dense(RNN_UNITS[1] + TAIL_LEN, RNN_DENSE, "relu"),
                nn.Dense(RNN_DENSE, 2, "identity"),
                nn.Softmax(),
            ]
        return nn.ModelGraph(layers, (ft.N_FEATURES,), name=k)


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    patience: int = 5
    seed: int = 0


@dataclass(frozen=True)
class EvalReport:
    """Directional accuracy and confusion counts on one sample set."""

    da: float
    per_class_accuracy: dict
    confusion: dict  # keys "tp","tn","fp","fn" with class 1 as positive
    n: int
    set_id: str = ""

    def to_dict(self) -> dict:
        return {"da": self.da, "per_class_accuracy": self.per_class_accuracy,
                "confusion": self.confusion, "n": self.n, "set_id": self.set_id}


@dataclass
class TrainedModel:
    """A built (possibly trained) alpha model with its fitted preprocessing."""

    arch: AlphaArch
    graph: nn.ModelGraph
    normalizer: ft.Normalizer | None = None
    meta: dict = field(default_factory=dict)

    # -- prediction ----------------------------------------------------------

    def _require_normalizer(self) -> ft.Normalizer:
        if self.normalizer is None:
            raise ValueError("model has no fitted normalizer; train it or attach one")
        return self.normalizer

    def predict_features(self, feats: np.ndarray):
        """(N, 17) raw features -> (classes, probabilities)."""
        norm = self._require_normalizer()
        fwd = self.graph.forward(norm.apply(np.atleast_2d(feats)))
        return fwd.probs.argmax(axis=1), fwd.probs

    def predict_closes(self, closes: np.ndarray, minute_frac, hour_frac):
        feats = ft.features_from_closes(closes, minute_frac, hour_frac)
        return self.predict_features(feats)

    def predict_batch(self, samples: list[WindowSample]):
        return self.predict_features(ft.windows_to_features(samples))

    def predict(self, window: WindowSample):
        """One window -> (predicted class, probability pair)."""
        classes, probs = self.predict_batch([window])
        return int(classes[0]), probs[0]

    # -- gradients -----------------------------------------------------------

    def price_gradients(self, closes: np.ndarray, minute_frac, hour_frac,
                        target_class: int) -> np.ndarray:
        """d(target-class cross-entropy)/d(close), batched: -> (B, 30)."""
        norm = self._require_normalizer()
        closes = np.atleast_2d(np.asarray(closes, dtype=np.float64))
        feats = ft.features_from_closes(closes, minute_frac, hour_frac)
        fwd = self.graph.forward(norm.apply(feats))
        labels = np.full(len(closes), target_class)
        _, dlogits = nn.cross_entropy(fwd.logits, labels)
        _, dnorm_feats = self.graph.backward(fwd, dlogits)
        # cross_entropy averages over the batch; undo to get per-sample grads
        dfeats = dnorm_feats * norm.gradient_scale * len(closes)
        jac = ft.jacobian_from_closes(closes)
        return np.einsum("bf,bfc->bc", dfeats, jac)

    def input_price_gradient(self, window: WindowSample,
                             target_class: int) -> np.ndarray:
        """Exact gradient of the target-class loss wrt the 30 closes."""
        return self.price_gradients(window.close[None, :], [window.minute_frac],
                                    [window.hour_frac], target_class)[0]

    # -- evaluation ----------------------------------------------------------

    def directional_accuracy(self, samples: list[WindowSample],
                             set_id: str = "") -> EvalReport:
        if not samples:
            raise ValueError("cannot evaluate an empty sample set")
        preds, _ = self.predict_batch(samples)
        labels = np.array([s.label for s in samples])
        return eval_report(preds, labels, set_id)


def eval_report(preds: np.ndarray, labels: np.ndarray, set_id: str = "") -> EvalReport:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    correct = preds == labels
    per_class = {}
    for cls in (0, 1):
        mask = labels == cls
        per_class[cls] = float(100.0 * correct[mask].mean()) if mask.any() else None
    confusion = {
        "tp": int(np.sum((preds == 1) & (labels == 1))),
        "tn": int(np.sum((preds == 0) & (labels == 0))),
        "fp": int(np.sum((preds == 1) & (labels == 0))),
        "fn": int(np.sum((preds == 0) & (labels == 1))),
    }
    return EvalReport(da=float(100.0 * correct.mean()),
                      per_class_accuracy=per_class, confusion=confusion,
                      n=len(labels), set_id=set_id)


def build(arch: AlphaArch | str, seed: int) -> TrainedModel:
    """Initialize a model with fresh weights (normalizer attached at training)."""
    if isinstance(arch, str):
        arch = AlphaArch(arch)
    graph = arch.build_graph()
    graph.init_params(seed)
    return TrainedModel(arch=arch, graph=graph, meta={"seed": seed})


def train(model: TrainedModel, train_samples: list[WindowSample],
          hyper: TrainHyper = TrainHyper(),
          normalizer: ft.Normalizer | None = None) -> tuple[TrainedModel, EvalReport]:
    """Train in place to maximize directional accuracy; returns a train report.

    The normalizer is fitted on the training split unless one is supplied
    (architectures compared on the same stock share one fit). Early-stops
    when the epoch loss stops improving for `patience` epochs.
    """
    labels = np.array([s.label for s in train_samples])
    if len(train_samples) == 0 or len(np.unique(labels)) < 2:
        raise ValueError("training set must contain both classes")
    feats = ft.windows_to_features(train_samples)
    if normalizer is None:
        normalizer = ft.fit_normalizer(feats)
    model.normalizer = normalizer
    x = normalizer.apply(feats)

    opt = nn.Adam(lr=hyper.lr, seed=hyper.seed)
    rng = np.random.default_rng(hyper.seed)
    best_loss = np.inf
    stall = 0
    epochs_run = 0
    for epoch in range(hyper.epochs):
        order = rng.permutation(len(x))
        losses = []
        for start in range(0, len(x), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            losses.append(nn.train_step(model.graph, opt, x[idx], labels[idx]))
        epoch_loss = float(np.mean(losses))
        epochs_run = epoch + 1
        if epoch_loss < best_loss - 1e-9:
            best_loss = epoch_loss
            stall = 0
        else:
            stall += 1
            if stall >= hyper.patience:
                break

    report = model.directional_accuracy(train_samples, set_id="train")
    model.meta.update({
        "seed": hyper.seed, "epochs_run": epochs_run, "final_loss": best_loss,
        "train_da": report.da,
        "hyper": {"epochs": hyper.epochs, "batch_size": hyper.batch_size,
                  "lr": hyper.lr, "patience": hyper.patience},
    })
    return model, report


# ---------------------------------------------------------------------------
# Model bundle on disk: weights + normalizer + arch descriptor + manifest
# ---------------------------------------------------------------------------

def save_bundle(model: TrainedModel, bundle_dir, force: bool = False) -> Path:
    bundle_dir = Path(bundle_dir)
    manifest = bundle_dir / BUNDLE_MANIFEST
    if manifest.exists() and not force:
        raise FileExistsError(f"{bundle_dir} already holds a model; use force to overwrite")
    bundle_dir.mkdir(parents=True, exist_ok=True)
    nn.save_weights(model.graph, bundle_dir / BUNDLE_WEIGHTS)
    model._require_normalizer().save(bundle_dir / BUNDLE_NORMALIZER)
    with open(manifest, "w") as fh:
        json.dump({
            "format_version": 1,
            "arch": model.arch.kind,
            "meta": model.meta,
            "files": {"weights": BUNDLE_WEIGHTS, "normalizer": BUNDLE_NORMALIZER},
        }, fh, indent=2)
    return bundle_dir


def load_bundle(bundle_dir) -> TrainedModel:
    bundle_dir = Path(bundle_dir)
    with open(bundle_dir / BUNDLE_MANIFEST) as fh:
        manifest = json.load(fh)
    if manifest.get("format_version") != 1:
        raise ValueError(f"{bundle_dir}: unsupported bundle version "
                         f"{manifest.get('format_version')}")
    arch = AlphaArch(manifest["arch"])
    graph = arch.build_graph()
    nn.load_weights(bundle_dir / manifest["files"]["weights"], model=graph)
    normalizer = ft.Normalizer.load(bundle_dir / manifest["files"]["normalizer"])
    return TrainedModel(arch=arch, graph=graph, normalizer=normalizer,
                        meta=manifest.get("meta", {}))
