"""Small feed-forward regression networks with exact reverse-mode gradients.

Forward and backward accept a single input vector or a batch of rows. For a
batch, parameter gradients are summed over rows and input gradients are
returned per row, so a batched call equals accumulating per-sample calls.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_HIDDEN = (64, 64)


def _tanh(z):
    return np.tanh(z)


def _dtanh(z, a):
    return 1.0 - a * a


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _dsigmoid(z, a):
    return a * (1.0 - a)


def _softsign(z):
    return z / (1.0 + np.abs(z))


def _dsoftsign(z, a):
    return 1.0 / (1.0 + np.abs(z)) ** 2


ACTIVATIONS = {
    "tanh": (_tanh, _dtanh),
    "sigmoid": (_sigmoid, _dsigmoid),
    "softsign": (_softsign, _dsoftsign),
}


@dataclass
class Mlp:
    """Weights are stored (out, in); the output layer is linear with one unit."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("need matching, non-empty weight and bias lists")
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {k}: weight {w.shape} / bias {b.shape} mismatch")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ValueError(f"layer {k}: input size {w.shape[1]} does not chain")

    @property
    def sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def n_inputs(self) -> int:
        return self.weights[0].shape[1]

    def params(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (W0, b0, W1, b1, ...), by reference."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases],
                   self.activation)

    def to_dict(self) -> dict:
        return {"sizes": list(self.sizes), "activation": self.activation,
                "weights": [w.tolist() for w in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        weights = [np.array(w, dtype=float).reshape(len(w), -1) for w in d["weights"]]
        biases = [np.array(b, dtype=float) for b in d["biases"]]
        m = cls(weights, biases, d["activation"])
        if list(m.sizes) != list(d["sizes"]):
            raise ValueError(f"declared sizes {d['sizes']} do not match arrays {m.sizes}")
        return m

    def __eq__(self, other) -> bool:
        if not isinstance(other, Mlp) or self.activation != other.activation:
            return False
        if self.sizes != other.sizes:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.params(), other.params()))


@dataclass
class Gradients:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    inputs: np.ndarray

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out


def init_mlp(sizes: Sequence[int], seed: int, activation: str = "tanh") -> Mlp:
    """Uniform init with limit sqrt(3 / fan_in) (unit-variance pre-activations); zero biases."""
    sizes = [int(s) for s in sizes]
    if len(sizes) < 2 or any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be >= 1 and at least two, got {sizes}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(3.0 / fan_in)
        weights.append(rng.uniform(-lim, lim, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return Mlp(weights, biases, activation)


def _as_batch(mlp: Mlp, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != mlp.n_inputs:
        raise ValueError(f"input shape {x.shape} does not fit a {mlp.n_inputs}-input network")
    if not np.all(np.isfinite(xb)):
        raise ValueError("non-finite network input")
    return xb, single


def _forward_trace(mlp: Mlp, xb: np.ndarray):
    act, _ = ACTIVATIONS[mlp.activation]
    acts = [xb]
    pre = []
    h = xb
    last = len(mlp.weights) - 1
    for k, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        z = h @ w.T + b
        pre.append(z)
        h = z if k == last else act(z)
        acts.append(h)
    return pre, acts


def forward(mlp: Mlp, x):
    """Network output: a float for one input vector, an (n,) array for a batch."""
    xb, single = _as_batch(mlp, x)
    _, acts = _forward_trace(mlp, xb)
    y = acts[-1][:, 0] if acts[-1].shape[1] == 1 else acts[-1]
    if not single:
        return y
    return float(y[0]) if y.ndim == 1 else y[0]


def backward(mlp: Mlp, x, upstream) -> Gradients:
    """Gradients of sum(upstream * forward(x)) w.r.t. parameters and inputs."""
    xb, single = _as_batch(mlp, x)
    g = np.asarray(upstream, dtype=float).reshape(-1)
    if g.shape[0] != xb.shape[0]:
        raise ValueError(f"{g.shape[0]} upstream values for {xb.shape[0]} inputs")
    if mlp.sizes[-1] != 1:
        raise ValueError("backward supports single-output networks")
    _, dact = ACTIVATIONS[mlp.activation]
    pre, acts = _forward_trace(mlp, xb)
    n_layers = len(mlp.weights)
    dw = [None] * n_layers
    db = [None] * n_layers
    delta = g[:, None]
    for k in range(n_layers - 1, -1, -1):
        dw[k] = delta.T @ acts[k]
        db[k] = delta.sum(axis=0)
        delta = delta @ mlp.weights[k]
        if k > 0:
            delta = delta * dact(pre[k - 1], acts[k])
    dx = delta[0] if single else delta
    return Gradients(dw, db, dx)


class AdamState:
    """Adam moments for a fixed list of parameter arrays, updated in place."""

    def __init__(self, shapes: Sequence[tuple[int, ...]], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        if not lr > 0:
            raise ValueError(f"learning rate must be > 0, got {lr}")
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.step_count = 0
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    @classmethod
    def like(cls, params: Sequence[np.ndarray], **kw) -> "AdamState":
        return cls([p.shape for p in params], **kw)

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray],
             lr: float | None = None) -> None:
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ValueError("parameter/gradient count does not match the optimizer state")
        for p, g, m in zip(params, grads, self.m):
            if p.shape != m.shape or np.shape(g) != m.shape:
                raise ValueError(f"shape mismatch: param {p.shape}, grad {np.shape(g)}, state {m.shape}")
            if not np.all(np.isfinite(g)):
                raise FloatingPointError("non-finite gradient passed to Adam")
        rate = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * np.square(g)
            p -= rate * (m / c1) / (np.sqrt(v / c2) + self.eps)


def adam_step(state: AdamState, params, grads, lr: float | None = None) -> None:
    state.step(params, grads, lr)
