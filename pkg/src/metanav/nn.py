"""Small fully-connected networks with hand-written backprop (numpy, float64)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

HIDDEN = (256, 256)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "tanh":
        return np.tanh(z)
    if kind == "linear":
        return z
    raise ValueError(f"unknown activation {kind!r}")


def _act_grad(a: np.ndarray, kind: str) -> np.ndarray:
    # derivative expressed through the activation output
    if kind == "tanh":
        return 1.0 - a * a
    return np.ones_like(a)


def init_params(sizes: Sequence[int], rng: np.random.Generator) -> list[np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights and biases, layer by layer: [W1, b1, W2, b2, ...]."""
    params = []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(n_in)
        params.append(rng.uniform(-bound, bound, size=(n_in, n_out)))
        params.append(rng.uniform(-bound, bound, size=n_out))
    return params


def forward(params: Sequence[np.ndarray], x: np.ndarray,
            output_activation: str = "linear") -> tuple[np.ndarray, list[np.ndarray]]:
    """Returns the output and the per-layer activations (input first) for backprop."""
    acts = [np.atleast_2d(x)]
    n_layers = len(params) // 2
    if acts[0].shape[1] != params[0].shape[0]:
        raise ValueError(f"input width {acts[0].shape[1]} != layer width {params[0].shape[0]}")
    h = acts[0]
    for k in range(n_layers):
        z = h @ params[2 * k] + params[2 * k + 1]
        h = _act(z, "tanh" if k < n_layers - 1 else output_activation)
        acts.append(h)
    return h, acts


def backward(params: Sequence[np.ndarray], acts: list[np.ndarray], upstream: np.ndarray,
             output_activation: str = "linear") -> tuple[list[np.ndarray], np.ndarray]:
    """Gradients of ``sum(upstream * output)`` w.r.t. parameters and input."""
    n_layers = len(params) // 2
    g = np.atleast_2d(upstream)
    if g.shape != acts[-1].shape:
        raise ValueError(f"upstream shape {g.shape} != output shape {acts[-1].shape}")
    grads: list[np.ndarray] = [np.empty(0)] * len(params)
    for k in reversed(range(n_layers)):
        kind = "tanh" if k < n_layers - 1 else output_activation
        g = g * _act_grad(acts[k + 1], kind)
        grads[2 * k] = acts[k].T @ g
        grads[2 * k + 1] = g.sum(axis=0)
        g = g @ params[2 * k].T
    return grads, g


def mlp_apply(params: Sequence[np.ndarray], x: np.ndarray,
              output_activation: str = "linear") -> np.ndarray:
    return forward(params, x, output_activation)[0]


def mlp_grad(params: Sequence[np.ndarray], x: np.ndarray, upstream: np.ndarray,
             output_activation: str = "linear") -> list[np.ndarray]:
    _, acts = forward(params, x, output_activation)
    return backward(params, acts, upstream, output_activation)[0]


@dataclass
class MLP:
    sizes: tuple[int, ...]
    output_activation: str = "linear"
    params: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def create(cls, n_in: int, n_out: int, rng: np.random.Generator,
               hidden: Sequence[int] = HIDDEN, output_activation: str = "linear") -> MLP:
        sizes = (n_in, *hidden, n_out)
        return cls(sizes, output_activation, init_params(sizes, rng))

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return mlp_apply(self.params, x, self.output_activation)

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        return forward(self.params, x, self.output_activation)

    def backward(self, acts: list[np.ndarray],
                 upstream: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        return backward(self.params, acts, upstream, self.output_activation)

    def copy(self) -> MLP:
        return MLP(self.sizes, self.output_activation, [p.copy() for p in self.params])

    def soft_update_from(self, other: MLP, tau: float) -> None:
        for mine, theirs in zip(self.params, other.params):
            mine *= 1.0 - tau
            mine += tau * theirs


class Adam:
    def __init__(self, params: Sequence[np.ndarray], lr: float = 3e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params: Sequence[np.ndarray], grads: Sequence[np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state(self) -> list[np.ndarray]:
        return [*self.m, *self.v, np.array([self.t], dtype=float)]

    def load_state(self, arrays: Sequence[np.ndarray]) -> None:
        n = len(self.m)
        self.m = [a.copy() for a in arrays[:n]]
        self.v = [a.copy() for a in arrays[n:2 * n]]
        self.t = int(arrays[2 * n][0])
