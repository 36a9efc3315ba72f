"""Small dense networks with hand-written backprop.

Everything is float64 and deterministic for a fixed generator, which keeps
paired runs bit-identical and makes finite-difference gradient checks tight.
"""

from __future__ import annotations

import numpy as np


def _init_layer(rng: np.random.Generator, fan_in: int, fan_out: int):
    bound = 1.0 / np.sqrt(fan_in)
    w = rng.uniform(-bound, bound, size=(fan_in, fan_out))
    b = np.zeros(fan_out)
    return w, b


class Mlp:
    """Fully connected net, tanh on hidden layers, linear output."""

    def __init__(self, dims, rng: np.random.Generator | None = None):
        if len(dims) < 2:
            raise ValueError("need at least input and output dims")
        self.dims = tuple(int(d) for d in dims)
        self.weights = []
        self.biases = []
        rng = rng if rng is not None else np.random.default_rng(0)
        for fan_in, fan_out in zip(self.dims[:-1], self.dims[1:]):
            w, b = _init_layer(rng, fan_in, fan_out)
            self.weights.append(w)
            self.biases.append(b)

    @property
    def in_dim(self) -> int:
        return self.dims[0]

    @property
    def out_dim(self) -> int:
        return self.dims[-1]

    def param_list(self) -> list[np.ndarray]:
        """Weights then biases, a stable order shared by optimizers,
        soft updates and checkpoints."""
        return self.weights + self.biases

    def forward(self, x: np.ndarray) -> np.ndarray:
        out, _ = self.forward_cache(x)
        return out

    def forward_cache(self, x: np.ndarray):
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.in_dim:
            raise ValueError(f"expected input of shape (batch, {self.in_dim}), got {x.shape}")
        activations = [x]
        pre = None
        h = x
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w + b
            h = np.tanh(pre) if i < n_layers - 1 else pre
            activations.append(h)
        return h, activations

    def backward(self, activations, dout: np.ndarray):
        """Gradients of a scalar loss given d(loss)/d(output).

        Returns (grads, dx) with grads ordered like param_list().
        """
        n_layers = len(self.weights)
        grads_w = [None] * n_layers
        grads_b = [None] * n_layers
        delta = dout
        for i in range(n_layers - 1, -1, -1):
            if i < n_layers - 1:
                delta = delta * (1.0 - activations[i + 1] ** 2)  # through tanh
            grads_w[i] = activations[i].T @ delta
            grads_b[i] = delta.sum(axis=0)
            delta = delta @ self.weights[i].T
        return grads_w + grads_b, delta

    def clone(self) -> "Mlp":
        other = Mlp.__new__(Mlp)
        other.dims = self.dims
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def all_finite(self) -> bool:
        return all(np.isfinite(p).all() for p in self.param_list())


class Adam:
    """Adaptive-moment optimizer over a fixed list of parameter arrays."""

    def __init__(self, params: list[np.ndarray], lr: float,
                 betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads: list[np.ndarray]):
        self.t += 1
        b1t = 1.0 - self.b1**self.t
        b2t = 1.0 - self.b2**self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)


def finite_difference_grads(loss_fn, arrays: list[np.ndarray], h: float = 1e-5):
    """Central finite differences of loss_fn() w.r.t. every entry of the
    given arrays, perturbing them in place."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn()
            flat[i] = orig - h
            down = loss_fn()
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def max_relative_error(analytic: list[np.ndarray], numeric: list[np.ndarray],
                       floor: float = 1e-8) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst
