"""Sequential model graph: forward to probabilities, backward to inputs."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Softmax, layer_from_spec, softmax


class NonFiniteError(FloatingPointError):
    """A layer produced NaN/Inf, or training diverged."""


@dataclass
class ForwardPass:
    probs: np.ndarray
    logits: np.ndarray
    caches: list
    state: dict


class ModelGraph:
    """An ordered stack of layers ending in a terminal Softmax.

    Losses are taken at the logits (the softmax input); backward() therefore
    receives the gradient wrt logits and propagates it below the softmax,
    returning parameter gradients and the gradient wrt the model input.
    """

    def __init__(self, layers, input_shape, name: str = "model"):
        if not layers:
            raise ValueError("model needs at least one layer")
        for i, layer in enumerate(layers):
            if isinstance(layer, Softmax) and i != len(layers) - 1:
                raise ValueError("softmax must be the terminal layer")
        if not isinstance(layers[-1], Softmax):
            raise ValueError("terminal layer must be softmax")
        self.layers = list(layers)
        self.input_shape = tuple(input_shape)
        self.name = name
        # validate the shape chain once, eagerly
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        self.output_shape = shape
        self.layer_names = [f"layer{i:02d}_{layer.kind}"
                            for i, layer in enumerate(self.layers)]

    # -- parameters --------------------------------------------------------

    def init_params(self, seed: int) -> None:
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng)

    def param_items(self):
        """Ordered (qualified name, array) pairs across all layers."""
        for lname, layer in zip(self.layer_names, self.layers):
            for pname in sorted(layer.params):
                yield f"{lname}/{pname}", layer.params[pname]

    def get_params(self) -> dict[str, np.ndarray]:
        return {name: arr.copy() for name, arr in self.param_items()}

    def set_params(self, values: dict[str, np.ndarray]) -> None:
        for lname, layer in zip(self.layer_names, self.layers):
            for pname in layer.params:
                key = f"{lname}/{pname}"
                arr = np.asarray(values[key], dtype=np.float64)
                if arr.shape != layer.params[pname].shape:
                    raise ValueError(
                        f"shape mismatch at {key}: expected "
                        f"{layer.params[pname].shape}, got {arr.shape}")
                layer.params[pname] = arr.copy()

    @property
    def n_params(self) -> int:
        return sum(arr.size for _, arr in self.param_items())

    # -- execution ----------------------------------------------------------

    def forward(self, x: np.ndarray) -> ForwardPass:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == len(self.input_shape):
            x = x[None, ...]
        if x.shape[1:] != self.input_shape:
            raise ValueError(f"input shape {x.shape[1:]} != expected {self.input_shape}")
        state: dict = {}
        caches = []
        out = x
        logits = None
        for name, layer in zip(self.layer_names, self.layers):
            if isinstance(layer, Softmax):
                logits = out
            out, cache = layer.forward(out, state)
            if not np.all(np.isfinite(out)):
                raise NonFiniteError(f"non-finite values after {name}")
            caches.append(cache)
        return ForwardPass(probs=out, logits=logits, caches=caches, state=state)

    def backward(self, fwd: ForwardPass, dlogits: np.ndarray):
        """Backprop a gradient given wrt the logits (fused softmax path).

        Returns ({qualified name: grad}, input gradient).
        """
        grads: dict[str, np.ndarray] = {}
        d = np.asarray(dlogits, dtype=np.float64)
        state = fwd.state
        for i in range(len(self.layers) - 2, -1, -1):
            layer = self.layers[i]
            d, layer_grads = layer.backward(d, fwd.caches[i], state)
            for pname, g in layer_grads.items():
                grads[f"{self.layer_names[i]}/{pname}"] = g
        return grads, d

    def spec(self) -> dict:
        return {"name": self.name, "input_shape": list(self.input_shape),
                "layers": [layer.spec() for layer in self.layers]}

    @classmethod
    def from_spec(cls, spec: dict) -> "ModelGraph":
        layers = [layer_from_spec(s) for s in spec["layers"]]
        return cls(layers, tuple(spec["input_shape"]), name=spec.get("name", "model"))


def one_hot(labels: np.ndarray, n_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.ndim == 2:
        if labels.shape[1] != n_classes:
            raise ValueError(f"one-hot labels must have {n_classes} columns")
        return labels.astype(np.float64)
    if labels.min() < 0 or labels.max() >= n_classes:
        raise ValueError(f"label out of range [0, {n_classes})")
    out = np.zeros((len(labels), n_classes))
    out[np.arange(len(labels)), labels] = 1.0
    return out


def cross_entropy(logits: np.ndarray, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood from logits, with its logits gradient.

    Uses log-sum-exp; labels may be class indices or one-hot rows.
    """
    logits = np.asarray(logits, dtype=np.float64)
    y = one_hot(labels, logits.shape[1])
    m = logits.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(logits - m).sum(axis=1))
    loss = float(np.mean(lse - (logits * y).sum(axis=1)))
    grad = (softmax(logits) - y) / logits.shape[0]
    return loss, grad
