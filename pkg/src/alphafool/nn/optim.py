"""Adam optimizer and the single-batch training step."""

from __future__ import annotations

import numpy as np

from .graph import ModelGraph, NonFiniteError, cross_entropy


class Adam:
    """Adam with bias correction; moment buffers mirror the model parameters."""

    def __init__(self, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, seed: int = 0):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.seed = seed
        self.t = 0
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}

    def step(self, model: ModelGraph, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for lname, layer in zip(model.layer_names, model.layers):
            for pname in layer.params:
                key = f"{lname}/{pname}"
                g = grads.get(key)
                if g is None:
                    continue
                if key not in self.m:
                    self.m[key] = np.zeros_like(layer.params[pname])
                    self.v[key] = np.zeros_like(layer.params[pname])
                self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * g
                self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * g * g
                m_hat = self.m[key] / b1t
                v_hat = self.v[key] / b2t
                layer.params[pname] = layer.params[pname] - self.lr * m_hat / (
                    np.sqrt(v_hat) + self.eps)


def train_step(model: ModelGraph, optimizer: Adam, batch: np.ndarray,
               labels) -> float:
    """One forward/backward/update step; returns the batch loss."""
    fwd = model.forward(batch)
    loss, dlogits = cross_entropy(fwd.logits, labels)
    if not np.isfinite(loss):
        raise NonFiniteError(
            f"training diverged: loss={loss} at optimizer step {optimizer.t + 1}")
    grads, _ = model.backward(fwd, dlogits)
    optimizer.step(model, grads)
    return loss
