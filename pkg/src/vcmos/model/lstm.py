"""Stacked unidirectional LSTM with a per-frame linear head and mean pooling.

Everything is float64 numpy. Gate order inside the stacked weight matrices
is (input, forget, cell, output). Sequences in a batch are padded at the end;
because the recurrence is causal, padding never influences valid frames and
only the pooling needs the mask.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class LSTMWeights:
    """``layers`` holds (W_ih (4H, F_in), W_hh (4H, H), b (4H,)) per layer."""

    layers: list
    head_w: np.ndarray
    head_b: np.ndarray

    @property
    def num_layers(self) -> int:
        return len(self.layers)

    @property
    def hidden_size(self) -> int:
        return self.layers[0][1].shape[1]

    @property
    def input_size(self) -> int:
        return self.layers[0][0].shape[1]

    def arrays(self) -> list:
        """All parameter arrays in checkpoint order."""
        out = []
        for layer in self.layers:
            out.extend(layer)
        out.extend([self.head_w, self.head_b])
        return out

    def copy(self) -> "LSTMWeights":
        return LSTMWeights(
            [tuple(a.copy() for a in layer) for layer in self.layers],
            self.head_w.copy(),
            self.head_b.copy(),
        )

    def zeros_like(self) -> "LSTMWeights":
        return LSTMWeights(
            [tuple(np.zeros_like(a) for a in layer) for layer in self.layers],
            np.zeros_like(self.head_w),
            np.zeros_like(self.head_b),
        )

    @classmethod
    def from_arrays(cls, arrays, num_layers: int) -> "LSTMWeights":
        arrays = list(arrays)
        layers = [tuple(arrays[3 * k : 3 * k + 3]) for k in range(num_layers)]
        return cls(layers, arrays[3 * num_layers], arrays[3 * num_layers + 1])


def parameter_shapes(input_size: int, hidden_size: int, num_layers: int) -> list[tuple]:
    shapes = []
    for k in range(num_layers):
        f_in = input_size if k == 0 else hidden_size
        shapes += [(4 * hidden_size, f_in), (4 * hidden_size, hidden_size), (4 * hidden_size,)]
    shapes += [(hidden_size,), (1,)]
    return shapes


def init_weights(input_size: int, hidden_size: int, num_layers: int, seed: int = 0,
                 forget_bias: float = 1.0) -> LSTMWeights:
    """Uniform(-1/sqrt(H), 1/sqrt(H)) for every tensor, plus ``forget_bias``."""
    if input_size < 1 or hidden_size < 1 or num_layers < 1:
        raise ValueError(
            f"invalid dims: input_size={input_size}, hidden_size={hidden_size}, num_layers={num_layers}"
        )
    rng = np.random.default_rng(seed)
    k = 1.0 / np.sqrt(hidden_size)
    arrays = [rng.uniform(-k, k, size=s) for s in parameter_shapes(input_size, hidden_size, num_layers)]
    weights = LSTMWeights.from_arrays(arrays, num_layers)
    for _, _, b in weights.layers:
        b[hidden_size : 2 * hidden_size] += forget_bias
    return weights


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def pad_batch(sequences) -> tuple[np.ndarray, np.ndarray]:
    """Stack (T_i, F) arrays into a time-major (T_max, B, F) array plus lengths."""
    lengths = np.array([len(s) for s in sequences], dtype=np.int64)
    t_max = int(lengths.max())
    f = sequences[0].shape[1]
    x = np.zeros((t_max, len(sequences), f))
    for b, s in enumerate(sequences):
        x[: len(s), b] = s
    return x, lengths


def _layer_forward(x, w_ih, w_hh, b, keep_cache):
    t_max, batch, _ = x.shape
    hidden = w_hh.shape[1]
    pre = x @ w_ih.T + b
    h = np.zeros((batch, hidden))
    c = np.zeros((batch, hidden))
    hs = np.empty((t_max, batch, hidden))
    cache = []
    for t in range(t_max):
        z = pre[t] + h @ w_hh.T
        i = _sigmoid(z[:, :hidden])
        f = _sigmoid(z[:, hidden : 2 * hidden])
        g = np.tanh(z[:, 2 * hidden : 3 * hidden])
        o = _sigmoid(z[:, 3 * hidden :])
        c_prev = c
        c = f * c_prev + i * g
        tc = np.tanh(c)
        h_prev = h
        h = o * tc
        hs[t] = h
        if keep_cache:
            cache.append((i, f, g, o, c_prev, tc, h_prev))
    return hs, cache


def forward(weights: LSTMWeights, x: np.ndarray, keep_cache: bool = False):
    """Per-frame scores for a time-major batch ``x`` of shape (T, B, F).

    Returns ``(q, cache)`` with ``q`` of shape (T, B).
    """
    if x.ndim != 3 or x.shape[2] != weights.input_size:
        raise ValueError(f"input of shape {x.shape}; model expects (T, B, {weights.input_size})")
    layer_inputs = []
    layer_caches = []
    h = x
    for w_ih, w_hh, b in weights.layers:
        layer_inputs.append(h)
        h, cache = _layer_forward(h, w_ih, w_hh, b, keep_cache)
        layer_caches.append(cache)
    q = h @ weights.head_w + weights.head_b[0]
    return q, (layer_inputs, layer_caches, h)


def pool(q: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Mean of the valid per-frame scores of every sequence."""
    return np.array([q[: n, b].mean() for b, n in enumerate(lengths)])


def predict_sequences(weights: LSTMWeights, sequences) -> list[np.ndarray]:
    x, lengths = pad_batch(sequences)
    q, _ = forward(weights, x)
    return [q[:n, b].copy() for b, n in enumerate(lengths)]


def _layer_backward(dh_seq, x, w_ih, w_hh, cache):
    t_max, batch, hidden = dh_seq.shape
    dz_seq = np.empty((t_max, batch, 4 * hidden))
    dw_hh = np.zeros_like(w_hh)
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    for t in range(t_max - 1, -1, -1):
        i, f, g, o, c_prev, tc, h_prev = cache[t]
        dh = dh_seq[t] + dh_next
        dc = dh * o * (1.0 - tc * tc) + dc_next
        dz = dz_seq[t]
        dz[:, :hidden] = dc * g * i * (1.0 - i)
        dz[:, hidden : 2 * hidden] = dc * c_prev * f * (1.0 - f)
        dz[:, 2 * hidden : 3 * hidden] = dc * i * (1.0 - g * g)
        dz[:, 3 * hidden :] = dh * tc * o * (1.0 - o)
        dw_hh += dz.T @ h_prev
        dh_next = dz @ w_hh
        dc_next = dc * f
    flat_dz = dz_seq.reshape(-1, 4 * hidden)
    dw_ih = flat_dz.T @ x.reshape(-1, x.shape[2])
    db = flat_dz.sum(axis=0)
    dx = dz_seq @ w_ih
    return dx, (dw_ih, dw_hh, db)


def loss_and_gradients(weights: LSTMWeights, sequences, targets) -> tuple[float, LSTMWeights]:
    """Mean squared error of pooled clip scores and its exact BPTT gradient."""
    if len(sequences) == 0:
        raise ValueError("empty batch")
    targets = np.asarray(targets, dtype=np.float64)
    if len(targets) != len(sequences):
        raise ValueError(f"{len(targets)} targets for {len(sequences)} sequences")
    x, lengths = pad_batch(sequences)
    q, (inputs, caches, top) = forward(weights, x, keep_cache=True)
    pred = pool(q, lengths)
    err = pred - targets
    loss = float(np.mean(err**2))

    batch = len(sequences)
    mask = np.arange(x.shape[0])[:, None] < lengths[None, :]
    dq = mask * (2.0 * err / batch / lengths)[None, :]

    grads = weights.zeros_like()
    grads.head_w[:] = np.einsum("tb,tbh->h", dq, top)
    grads.head_b[0] = dq.sum()
    dh = dq[:, :, None] * weights.head_w[None, None, :]
    for k in range(weights.num_layers - 1, -1, -1):
        w_ih, w_hh, _ = weights.layers[k]
        dh, layer_grads = _layer_backward(dh, inputs[k], w_ih, w_hh, caches[k])
        grads.layers[k] = layer_grads
    return loss, grads


def global_norm(grads: LSTMWeights) -> float:
    return float(np.sqrt(sum(np.sum(a * a) for a in grads.arrays())))


class Adam:
    """Adam with bias correction, updating an LSTMWeights in place."""

    def __init__(self, weights: LSTMWeights, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(a) for a in weights.arrays()]
        self.v = [np.zeros_like(a) for a in weights.arrays()]
        self.t = 0

    def step(self, weights: LSTMWeights, grads: LSTMWeights) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for p, g, m, v in zip(weights.arrays(), grads.arrays(), self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
