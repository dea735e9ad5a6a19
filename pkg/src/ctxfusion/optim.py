"""Adam, Nadam and Adamax, plus the MSE/RMSE losses.

With gradient g, step t (incremented before the update) and moments m, v
starting at zero::

    m <- b1 m + (1 - b1) g
    v <- b2 v + (1 - b2) g^2                      (adam, nadam)
    u <- max(b2 u, |g|)                           (adamax)

    adam:    theta -= lr * m_hat / (sqrt(v_hat) + eps)
             m_hat = m / (1 - b1^t),  v_hat = v / (1 - b2^t)
    nadam:   theta -= lr * m_bar / (sqrt(v_hat) + eps)
             m_bar = b1 m / (1 - b1^(t+1)) + (1 - b1) g / (1 - b1^t)
    adamax:  theta -= (lr / (1 - b1^t)) * m / max(u, eps)

Nadam is the constant-momentum Nesterov form (no momentum-decay schedule):
the bias-corrected next-step momentum plus the bias-corrected current
gradient. For the first step from zero state with g = 1 this gives
``m_bar = b1 (1 - b1) / (1 - b1^2) + 1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from . import tensor as T

DEFAULT_LR = {"adam": 0.001, "nadam": 0.001, "adamax": 0.002}
KINDS = tuple(DEFAULT_LR)


class NonFiniteGradientError(FloatingPointError):
    def __init__(self, name, step):
        self.name = name
        self.step = step
        super().__init__(f"non-finite gradient for parameter {name!r} at optimizer step {step}")


@dataclass
class OptimizerState:
    kind: str
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)  # infinity norm u for adamax

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown optimizer {self.kind!r}; choose from {KINDS}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")


def make_state(kind, lr=None, beta1=0.9, beta2=0.999, eps=1e-8):
    if kind not in KINDS:
        raise ValueError(f"unknown optimizer {kind!r}; choose from {KINDS}")
    return OptimizerState(kind, DEFAULT_LR[kind] if lr is None else float(lr), beta1, beta2, eps)


def optimizer_step(state, params, grads, names=None):
    """Update the float64 arrays in ``params`` in place from ``grads``."""
    if not state.m:
        state.m = [np.zeros(p.size) for p in params]
        state.v = [np.zeros(p.size) for p in params]
    names = names or [f"param{i}" for i in range(len(params))]
    for name, g in zip(names, grads):
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(name, state.t + 1)
    state.t += 1
    update = getattr(kernels.active, f"{state.kind}_update")
    for p, g, m, v in zip(params, grads, state.m, state.v):
        flat = p.reshape(-1)
        if not np.shares_memory(flat, p):
            raise ValueError("parameters must be contiguous arrays")
        g = np.ascontiguousarray(g, dtype=np.float64).reshape(-1)
        update(flat, g, m, v, state.lr, state.beta1, state.beta2, state.eps, state.t)
    return params


class Optimizer:
    """Binds an :class:`OptimizerState` to named parameter tensors."""

    def __init__(self, named_params, kind="adamax", **hyper):
        self.names = list(named_params)
        self.params = [named_params[n] for n in self.names]
        self.state = make_state(kind, **hyper)

    def zero_grad(self):
        T.zero_grad(self.params)

    def step(self):
        grads = [np.zeros(p.shape) if p.grad is None else p.grad for p in self.params]
        optimizer_step(self.state, [p.data for p in self.params], grads, self.names)


def mse(y, y_hat):
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape:
        raise ValueError(f"mse: length mismatch {y.size} vs {y_hat.size}")
    if y.size == 0:
        raise ValueError("mse: empty input")
    d = y - y_hat
    return float(np.mean(d * d))


def rmse(y, y_hat):
    return float(np.sqrt(mse(y, y_hat)))


def mse_loss(pred, y):
    """Differentiable MSE of a ``(batch, 1)`` prediction tensor against targets."""
    target = T.Tensor(np.asarray(y, dtype=np.float64).reshape(pred.shape))
    diff = T.add(pred, T.scale(target, -1.0))
    return T.mean(T.mul(diff, diff))
