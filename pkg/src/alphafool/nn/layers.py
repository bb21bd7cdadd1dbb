"""Network layers with exact float64 forward/backward passes.

Four parametric/terminal kinds (dense, conv1d, lstm, softmax) plus two
parameter-free adapters (seq_split, tail_concat) that carry the two time
scalars around a convolutional or recurrent stack. Every backward returns
the input gradient, which is what the crafting attack consumes.
"""

from __future__ import annotations

import numpy as np

ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # branchless-stable form: never exponentiates a large positive argument
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return _sigmoid(z)
    if name == "identity":
        return z
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray, y: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(z.dtype)
    if name == "tanh":
        return 1.0 - y * y
    if name == "sigmoid":
        return y * (1.0 - y)
    if name == "identity":
        return np.ones_like(z)
    raise ValueError(f"unknown activation {name!r}")


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    limit = np.sqrt(1.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


class Dense:
    kind = "dense"

    def __init__(self, in_dim: int, units: int, activation: str = "relu"):
        if units < 1 or in_dim < 1:
            raise ValueError("dims must be positive")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_dim = in_dim
        self.units = units
        self.activation = activation
        self.params = {"W": np.zeros((in_dim, units)), "b": np.zeros(units)}

    def init_params(self, rng: np.random.Generator) -> None:
        self.params["W"] = _uniform_fan_in(rng, self.in_dim, (self.in_dim, self.units))
        self.params["b"] = np.zeros(self.units)

    def out_shape(self, in_shape):
        if in_shape != (self.in_dim,):
            raise ValueError(f"dense expects ({self.in_dim},), got {in_shape}")
        return (self.units,)

    def forward(self, x, state):
        z = x @ self.params["W"] + self.params["b"]
        y = _activate(self.activation, z)
        return y, (x, z, y)

    def backward(self, dy, cache, state):
        x, z, y = cache
        dz = dy * _activate_grad(self.activation, z, y)
        grads = {"W": x.T @ dz, "b": dz.sum(axis=0)}
        return dz @ self.params["W"].T, grads

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "units": self.units,
                "activation": self.activation}


class Conv1D:
    """Temporal convolution, stride 1, zero 'same' padding: (B,T,C) -> (B,T,F)."""

    kind = "conv1d"

    def __init__(self, in_channels: int, filters: int, kernel: int,
                 activation: str = "relu"):
        if min(in_channels, filters, kernel) < 1:
            raise ValueError("dims must be positive")
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.in_channels = in_channels
        self.filters = filters
        self.kernel = kernel
        self.activation = activation
        self.params = {"W": np.zeros((kernel, in_channels, filters)),
                       "b": np.zeros(filters)}

    def init_params(self, rng: np.random.Generator) -> None:
        fan_in = self.kernel * self.in_channels
        self.params["W"] = _uniform_fan_in(
            rng, fan_in, (self.kernel, self.in_channels, self.filters))
        self.params["b"] = np.zeros(self.filters)

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] != self.in_channels:
            raise ValueError(f"conv1d expects (T, {self.in_channels}), got {in_shape}")
        return (in_shape[0], self.filters)

    def _pad(self):
        left = (self.kernel - 1) // 2
        return left, self.kernel - 1 - left

    def forward(self, x, state):
        b, t, _ = x.shape
        left, right = self._pad()
        xp = np.pad(x, ((0, 0), (left, right), (0, 0)))
        z = np.tile(self.params["b"], (b, t, 1))
        for k in range(self.kernel):
            z += xp[:, k:k + t, :] @ self.params["W"][k]
        y = _activate(self.activation, z)
        return y, (xp, z, y)

    def backward(self, dy, cache, state):
        xp, z, y = cache
        b, t, _ = z.shape
        left, right = self._pad()
        dz = dy * _activate_grad(self.activation, z, y)
        dW = np.zeros_like(self.params["W"])
        dxp = np.zeros_like(xp)
        for k in range(self.kernel):
            dW[k] = np.einsum("btc,btf->cf", xp[:, k:k + t, :], dz)
            dxp[:, k:k + t, :] += dz @ self.params["W"][k].T
        grads = {"W": dW, "b": dz.sum(axis=(0, 1))}
        return dxp[:, left:left + t, :], grads

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "filters": self.filters, "kernel": self.kernel,
                "activation": self.activation}


class LSTM:
    """Standard-gate LSTM over (B,T,C); emits all steps or the last one."""

    kind = "lstm"

    def __init__(self, in_dim: int, units: int, return_sequences: bool = False):
        if min(in_dim, units) < 1:
            raise ValueError("dims must be positive")
        self.in_dim = in_dim
        self.units = units
        self.return_sequences = return_sequences
        h = units
        self.params = {"Wx": np.zeros((in_dim, 4 * h)),
                       "Wh": np.zeros((h, 4 * h)),
                       "b": np.zeros(4 * h)}

    def init_params(self, rng: np.random.Generator) -> None:
        h = self.units
        self.params["Wx"] = _uniform_fan_in(rng, self.in_dim, (self.in_dim, 4 * h))
        self.params["Wh"] = _uniform_fan_in(rng, h, (h, 4 * h))
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0  # forget-gate bias
        self.params["b"] = b

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] != self.in_dim:
            raise ValueError(f"lstm expects (T, {self.in_dim}), got {in_shape}")
        return (in_shape[0], self.units) if self.return_sequences else (self.units,)

    def forward(self, x, state):
        b, t, _ = x.shape
        h = self.units
        Wx, Wh, bias = self.params["Wx"], self.params["Wh"], self.params["b"]
        h_t = np.zeros((b, h))
        c_t = np.zeros((b, h))
        steps = []
        hs = np.empty((b, t, h))
        for step in range(t):
            x_t = x[:, step, :]
            z = x_t @ Wx + h_t @ Wh + bias
            i = _sigmoid(z[:, :h])
            f = _sigmoid(z[:, h:2 * h])
            g = np.tanh(z[:, 2 * h:3 * h])
            o = _sigmoid(z[:, 3 * h:])
            c_prev = c_t
            c_t = f * c_prev + i * g
            tanh_c = np.tanh(c_t)
            h_prev = h_t
            h_t = o * tanh_c
            hs[:, step, :] = h_t
            steps.append((x_t, h_prev, c_prev, i, f, g, o, c_t, tanh_c))
        y = hs if self.return_sequences else h_t
        return y, (steps, x.shape)

    def backward(self, dy, cache, state):
        steps, x_shape = cache
        b, t, _ = x_shape
        h = self.units
        Wx, Wh = self.params["Wx"], self.params["Wh"]
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros_like(self.params["b"])
        dx = np.zeros(x_shape)
        dh_next = np.zeros((b, h))
        dc_next = np.zeros((b, h))
        for step in range(t - 1, -1, -1):
            x_t, h_prev, c_prev, i, f, g, o, c_t, tanh_c = steps[step]
            dh = dh_next.copy()
            if self.return_sequences:
                dh += dy[:, step, :]
            elif step == t - 1:
                dh += dy
            do = dh * tanh_c
            dc = dc_next + dh * o * (1.0 - tanh_c * tanh_c)
            di = dc * g
            df = dc * c_prev
            dg = dc * i
            dz = np.concatenate([di * i * (1.0 - i),
                                 df * f * (1.0 - f),
                                 dg * (1.0 - g * g),
                                 do * o * (1.0 - o)], axis=1)
            dWx += x_t.T @ dz
            dWh += h_prev.T @ dz
            db += dz.sum(axis=0)
            dx[:, step, :] = dz @ Wx.T
            dh_next = dz @ Wh.T
            dc_next = dc * f
        grads = {"Wx": dWx, "Wh": dWh, "b": db}
        return dx, grads

    def spec(self):
        return {"kind": self.kind, "in_dim": self.in_dim, "units": self.units,
                "return_sequences": self.return_sequences}


class Softmax:
    """Terminal probability layer; the loss is taken at its input logits."""

    kind = "softmax"

    def __init__(self):
        self.params = {}

    def init_params(self, rng):
        pass

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ValueError(f"softmax expects a flat input, got {in_shape}")
        return in_shape

    def forward(self, x, state):
        y = softmax(x)
        return y, y

    def backward(self, dy, cache, state):
        # full Jacobian-vector product wrt probabilities; the training path
        # bypasses this via the fused logits gradient from cross_entropy
        y = cache
        return y * (dy - np.sum(dy * y, axis=1, keepdims=True)), {}

    def spec(self):
        return {"kind": self.kind}


class SeqSplit:
    """Reshape flat features into (steps, channels), holding back a tail.

    The flat layout groups each channel's steps contiguously:
    [ch0 steps..., ch1 steps..., ch2 steps..., tail...].
    """

    kind = "seq_split"

    def __init__(self, steps: int, channels: int, tail_len: int):
        self.steps = steps
        self.channels = channels
        self.tail_len = tail_len
        self.params = {}

    def init_params(self, rng):
        pass

    @property
    def seq_len(self) -> int:
        return self.steps * self.channels

    def out_shape(self, in_shape):
        if in_shape != (self.seq_len + self.tail_len,):
            raise ValueError(f"seq_split expects ({self.seq_len + self.tail_len},), "
                             f"got {in_shape}")
        return (self.steps, self.channels)

    def forward(self, x, state):
        b = x.shape[0]
        seq = x[:, :self.seq_len].reshape(b, self.channels, self.steps)
        state["tail"] = x[:, self.seq_len:]
        return np.ascontiguousarray(seq.transpose(0, 2, 1)), b

    def backward(self, dy, cache, state):
        b = cache
        dx = np.empty((b, self.seq_len + self.tail_len))
        dx[:, :self.seq_len] = dy.transpose(0, 2, 1).reshape(b, self.seq_len)
        dx[:, self.seq_len:] = state.pop("grad_tail")
        return dx, {}

    def spec(self):
        return {"kind": self.kind, "steps": self.steps, "channels": self.channels,
                "tail_len": self.tail_len}


class TailConcat:
    """Flatten the running activation and append the SeqSplit tail."""

    kind = "tail_concat"

    def __init__(self, tail_len: int):
        self.tail_len = tail_len
        self.params = {}

    def init_params(self, rng):
        pass

    def out_shape(self, in_shape):
        flat = int(np.prod(in_shape))
        return (flat + self.tail_len,)

    def forward(self, x, state):
        b = x.shape[0]
        main_shape = x.shape
        flat = x.reshape(b, -1)
        if self.tail_len == 0:
            return flat, main_shape
        return np.concatenate([flat, state.pop("tail")], axis=1), main_shape

    def backward(self, dy, cache, state):
        main_shape = cache
        flat_len = int(np.prod(main_shape[1:]))
        if self.tail_len:
            state["grad_tail"] = dy[:, flat_len:]
        return dy[:, :flat_len].reshape(main_shape), {}

    def spec(self):
        return {"kind": self.kind, "tail_len": self.tail_len}


def softmax(logits: np.ndarray) -> np.ndarray:
    # the -700 clamp keeps every probability strictly positive in float64;
    # it only bites once the true probability is below ~1e-304
    z = np.clip(logits - logits.max(axis=-1, keepdims=True), -700.0, None)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


_LAYER_KINDS = {cls.kind: cls for cls in
                (Dense, Conv1D, LSTM, Softmax, SeqSplit, TailConcat)}


def layer_from_spec(spec: dict):
    kind = spec.get("kind")
    if kind not in _LAYER_KINDS:
        raise ValueError(f"unknown layer kind {kind!r}")
    kwargs = {k: v for k, v in spec.items() if k != "kind"}
    return _LAYER_KINDS[kind](**kwargs)
