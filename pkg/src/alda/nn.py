"""Fully-connected layers, initialization, optimizers, and training schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor, add, matmul, mul, relu

ACTIVATIONS = ("relu", "none")


def as_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass
class Layer:
    weight: Tensor  # (fan_in, fan_out)
    bias: Tensor  # (1, fan_out)
    activation: str = "none"
    dropout: float = 0.0


class Mlp:
    """Stack of linear layers with optional relu and inverted dropout."""

    def __init__(self, layers: list[Layer]):
        if not layers:
            raise ValueError("Mlp needs at least one layer")
        for prev, nxt in zip(layers, layers[1:]):
            if prev.weight.data.shape[1] != nxt.weight.data.shape[0]:
                raise ValueError("consecutive layer dimensions do not chain")
        for layer in layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")
            if not 0.0 <= layer.dropout < 1.0:
                raise ValueError("dropout rate must lie in [0, 1)")
        self.layers = layers

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.data.shape[0]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.data.shape[1]

    def params(self) -> list[Tensor]:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        h = x if isinstance(x, Tensor) else Tensor(x)
        if h.data.ndim != 2 or h.data.shape[1] != self.in_dim:
            raise ValueError(f"expected input with {self.in_dim} columns, got shape {h.data.shape}")
        for layer in self.layers:
            h = add(matmul(h, layer.weight), layer.bias)
            if layer.activation == "relu":
                h = relu(h)
            if training and layer.dropout > 0.0:
                if rng is None:
                    raise ValueError("training-mode dropout needs an rng")
                keep = 1.0 - layer.dropout
                mask = (rng.random(h.data.shape) < keep) / keep
                h = mul(h, Tensor(mask))
        return h

    __call__ = forward


def init_mlp(dims, activation: str = "relu", dropout: float = 0.0, seed=0) -> Mlp:
    """He-style init: hidden layers get the activation and dropout, the last is linear.

    Weights are N(0, 2/fan_in), biases zero; deterministic under the seed.
    """
    dims = list(dims)
    if len(dims) < 2:
        raise ValueError("dims must list at least input and output sizes")
    rng = as_rng(seed)
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        last = i == len(dims) - 2
        w = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
        layers.append(
            Layer(
                weight=Tensor(w, requires_grad=True),
                bias=Tensor(np.zeros((1, fan_out)), requires_grad=True),
                activation="none" if last else activation,
                dropout=0.0 if last else dropout,
            )
        )
    return Mlp(layers)


def zero_grads(params) -> None:
    for p in params:
        p.grad = None


def _gather_grads(params) -> list[np.ndarray]:
    grads = []
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError("gradient shape does not match parameter shape")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient in optimizer step")
        grads.append(g)
    return grads


class SgdMomentum:
    """v <- momentum*v + g; p <- p - lr*v."""

    def __init__(self, params, momentum: float = 0.9):
        self.params = list(params)
        self.momentum = float(momentum)
        self.velocity = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self, lr: float) -> None:
        if lr <= 0.0:
            raise ValueError("lr must be positive")
        grads = _gather_grads(self.params)
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p.data -= lr * v
        self.step_count += 1


class Adam:
    """Bias-corrected first/second moment update."""

    def __init__(self, params, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self, lr: float) -> None:
        if lr <= 0.0:
            raise ValueError("lr must be positive")
        grads = _gather_grads(self.params)
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v, g in zip(self.params, self.m, self.v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(kind: str, params, momentum: float = 0.9):
    if kind == "sgd":
        return SgdMomentum(params, momentum=momentum)
    if kind == "adam":
        return Adam(params)
    raise ValueError(f"unknown optimizer kind {kind!r}")


@dataclass
class ScheduleParams:
    """Inverse-decay learning-rate shape eta0/(1+alpha*q)^beta with a group multiplier."""

    eta0: float = 0.01
    alpha: float = 10.0
    beta: float = 0.75
    multiplier: float = 1.0

    def __post_init__(self):
        if self.eta0 <= 0.0:
            raise ValueError("eta0 must be positive")
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("alpha and beta must be nonnegative")
        if self.multiplier <= 0.0:
            raise ValueError("multiplier must be positive")


def _check_progress(q: float) -> float:
    q = float(q)
    if not 0.0 <= q <= 1.0:
        raise ValueError(f"training progress q must lie in [0, 1], got {q}")
    return q


def lr_schedule(q: float, sp: ScheduleParams) -> float:
    q = _check_progress(q)
    return sp.eta0 / (1.0 + sp.alpha * q) ** sp.beta * sp.multiplier


def lambda_schedule(q: float) -> float:
    """Adversarial trade-off weight, warming up from 0 toward 1."""
    q = _check_progress(q)
    return 2.0 / (1.0 + math.exp(-10.0 * q)) - 1.0
