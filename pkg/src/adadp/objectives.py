"""Differentiable objectives: 2-d benchmark functions with analytic
gradients, and a one-hidden-layer ReLU/softmax classifier with exact
per-example gradients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "AnalyticObjective",
    "beale",
    "rosenbrock",
    "booth",
    "himmelblau",
    "test_function_suite",
    "suite_function",
    "MlpObjective",
]


@dataclass(frozen=True)
class AnalyticObjective:
    """A closed-form objective with analytic gradient.

    `minima` lists known global minimizers, `default_start` the conventional
    starting point for descent experiments.
    """

    name: str
    dim: int
    fn: Callable[[np.ndarray], tuple[float, np.ndarray]]
    minima: tuple[tuple[float, ...], ...]
    default_start: tuple[float, ...]

    def value(self, point) -> float:
        return self.fn(np.asarray(point, dtype=float))[0]

    def grad(self, point) -> np.ndarray:
        return self.fn(np.asarray(point, dtype=float))[1]

    def value_and_grad(self, point) -> tuple[float, np.ndarray]:
        return self.fn(np.asarray(point, dtype=float))


def beale(point, *, cubed_third_term: bool = True) -> tuple[float, np.ndarray]:
    """Beale surface (1.5-x+xy)^2 + (2.25-x+xy^2)^2 + (2.625-x+xy^3)^p.

    The default exponent on the third term is p=3; `cubed_third_term=False`
    selects the conventional all-squared form (p=2). Both vanish at (3, 0.5).
    Note the cubed form is unbounded below where the third factor is negative.
    """
    x, y = np.asarray(point, dtype=float)
    u1 = 1.5 - x + x * y
    u2 = 2.25 - x + x * y * y
    u3 = 2.625 - x + x * y ** 3
    if cubed_third_term:
        value = u1 * u1 + u2 * u2 + u3 ** 3
        t3 = 3.0 * u3 * u3
    else:
        value = u1 * u1 + u2 * u2 + u3 * u3
        t3 = 2.0 * u3
    gx = 2.0 * u1 * (y - 1.0) + 2.0 * u2 * (y * y - 1.0) + t3 * (y ** 3 - 1.0)
    gy = 2.0 * u1 * x + 2.0 * u2 * (2.0 * x * y) + t3 * (3.0 * x * y * y)
    return float(value), np.array([gx, gy])


def rosenbrock(point) -> tuple[float, np.ndarray]:
    """Rosenbrock valley (1-x)^2 + 100 (y-x^2)^2, minimum at (1, 1)."""
    x, y = np.asarray(point, dtype=float)
    u = y - x * x
    value = (1.0 - x) ** 2 + 100.0 * u * u
    gx = -2.0 * (1.0 - x) - 400.0 * x * u
    gy = 200.0 * u
    return float(value), np.array([gx, gy])


def booth(point) -> tuple[float, np.ndarray]:
    """Booth plate (x+2y-7)^2 + (2x+y-5)^2, minimum at (1, 3)."""
    x, y = np.asarray(point, dtype=float)
    u = x + 2.0 * y - 7.0
    v = 2.0 * x + y - 5.0
    value = u * u + v * v
    return float(value), np.array([2.0 * u + 4.0 * v, 4.0 * u + 2.0 * v])


def himmelblau(point) -> tuple[float, np.ndarray]:
    """Himmelblau bowl (x^2+y-11)^2 + (x+y^2-7)^2, four global minima."""
    x, y = np.asarray(point, dtype=float)
    u = x * x + y - 11.0
    v = x + y * y - 7.0
    value = u * u + v * v
    return float(value), np.array([4.0 * x * u + 2.0 * v, 2.0 * u + 4.0 * y * v])


def test_function_suite(*, beale_cubed_third_term: bool = True) -> list[AnalyticObjective]:
    """The 2-d benchmark objectives with analytic gradients and known minima."""
    return [
        AnalyticObjective(
            name="beale",
            dim=2,
            fn=lambda p: beale(p, cubed_third_term=beale_cubed_third_term),
            minima=((3.0, 0.5),),
            default_start=(-2.0, 2.0),
        ),
        AnalyticObjective(
            name="rosenbrock",
            dim=2,
            fn=rosenbrock,
            minima=((1.0, 1.0),),
            default_start=(-1.5, 1.5),
        ),
        AnalyticObjective(
            name="booth",
            dim=2,
            fn=booth,
            minima=((1.0, 3.0),),
            default_start=(-4.0, -4.0),
        ),
        AnalyticObjective(
            name="himmelblau",
            dim=2,
            fn=himmelblau,
            minima=((3.0, 2.0), (-2.805118, 3.131312), (-3.779310, -3.283186), (3.584428, -1.848126)),
            default_start=(0.0, 0.0),
        ),
    ]


def suite_function(name: str, *, beale_cubed_third_term: bool = True) -> AnalyticObjective:
    for objective in test_function_suite(beale_cubed_third_term=beale_cubed_third_term):
        if objective.name == name:
            return objective
    raise KeyError(f"unknown suite function {name!r}")


class MlpObjective:
    """Single-hidden-layer ReLU network with softmax cross-entropy loss.

    Parameters are one flat vector in (W1, b1, W2, b2) order. Per-example
    gradients are exact and their row mean equals the batch gradient.
    """

    def __init__(self, input_dim: int, hidden_dim: int, num_classes: int):
        if min(input_dim, hidden_dim, num_classes) < 1:
            raise ValueError("all layer sizes must be >= 1")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.num_classes = num_classes
        self.dim = hidden_dim * input_dim + hidden_dim + num_classes * hidden_dim + num_classes

    def init_params(self, rng: np.random.Generator) -> np.ndarray:
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) per layer, biases included."""
        d, h, k = self.input_dim, self.hidden_dim, self.num_classes
        bound1 = 1.0 / math.sqrt(d)
        bound2 = 1.0 / math.sqrt(h)
        return np.concatenate([
            rng.uniform(-bound1, bound1, size=h * d),
            rng.uniform(-bound1, bound1, size=h),
            rng.uniform(-bound2, bound2, size=k * h),
            rng.uniform(-bound2, bound2, size=k),
        ])

    def _unpack(self, params: np.ndarray):
        d, h, k = self.input_dim, self.hidden_dim, self.num_classes
        params = np.asarray(params, dtype=float)
        if params.shape != (self.dim,):
            raise ValueError(f"expected parameter vector of length {self.dim}, got {params.shape}")
        i = 0
        w1 = params[i:i + h * d].reshape(h, d); i += h * d
        b1 = params[i:i + h]; i += h
        w2 = params[i:i + k * h].reshape(k, h); i += k * h
        b2 = params[i:i + k]
        return w1, b1, w2, b2

    def _forward(self, params, features):
        w1, b1, w2, b2 = self._unpack(params)
        pre = features @ w1.T + b1
        hidden = np.maximum(pre, 0.0)
        logits = hidden @ w2.T + b2
        return pre, hidden, logits

    @staticmethod
    def _softmax(logits):
        shifted = logits - logits.max(axis=1, keepdims=True)
        expd = np.exp(shifted)
        return expd / expd.sum(axis=1, keepdims=True)

    def logits(self, params, features) -> np.ndarray:
        return self._forward(params, np.atleast_2d(np.asarray(features, dtype=float)))[2]

    def loss(self, params, features, labels) -> float:
        features = np.atleast_2d(np.asarray(features, dtype=float))
        labels = np.asarray(labels, dtype=int)
        _, _, logits = self._forward(params, features)
        shifted = logits - logits.max(axis=1, keepdims=True)
        log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return float(-np.mean(log_probs[np.arange(labels.size), labels]))

    def accuracy(self, params, features, labels) -> float:
        predictions = np.argmax(self.logits(params, features), axis=1)
        return float(np.mean(predictions == np.asarray(labels)))

    def per_example_grads(self, params, features, labels) -> np.ndarray:
        """Exact gradient of the per-example loss, one row per example."""
        features = np.atleast_2d(np.asarray(features, dtype=float))
        labels = np.asarray(labels, dtype=int)
        n = features.shape[0]
        if labels.shape != (n,):
            raise ValueError(f"expected {n} labels, got shape {labels.shape}")
        w1, b1, w2, b2 = self._unpack(params)
        pre, hidden, logits = self._forward(params, features)
        probs = self._softmax(logits)
        d_logits = probs.copy()
        d_logits[np.arange(n), labels] -= 1.0                       # (n, k)
        d_w2 = d_logits[:, :, None] * hidden[:, None, :]            # (n, k, h)
        d_hidden = (d_logits @ w2) * (pre > 0.0)                    # (n, h)
        d_w1 = d_hidden[:, :, None] * features[:, None, :]          # (n, h, d)
        return np.concatenate(
            [
                d_w1.reshape(n, -1),
                d_hidden,
                d_w2.reshape(n, -1),
                d_logits,
            ],
            axis=1,
        )

    def batch_grad(self, params, features, labels) -> np.ndarray:
        """Gradient of the mean loss, computed directly (not via the rows)."""
        features = np.atleast_2d(np.asarray(features, dtype=float))
        labels = np.asarray(labels, dtype=int)
        n = features.shape[0]
        w1, b1, w2, b2 = self._unpack(params)
        pre, hidden, logits = self._forward(params, features)
        probs = self._softmax(logits)
        d_logits = probs
        d_logits[np.arange(n), labels] -= 1.0
        d_logits /= n
        d_w2 = d_logits.T @ hidden                                  # (k, h)
        d_b2 = d_logits.sum(axis=0)
        d_hidden = (d_logits @ w2) * (pre > 0.0)
        d_w1 = d_hidden.T @ features                                # (h, d)
        d_b1 = d_hidden.sum(axis=0)
        return np.concatenate([d_w1.ravel(), d_b1, d_w2.ravel(), d_b2])
