"""Adaptive-moment (Adam) optimizer over a dict of named parameter arrays."""

from __future__ import annotations

import numpy as np


class NonFiniteGradientError(FloatingPointError):
    pass


class Adam:
    def __init__(self, params: dict, lr: float, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params: dict, grads: dict) -> None:
        """Update ``params`` in place."""
        for k, g in grads.items():
            if g.shape != params[k].shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter {k} {params[k].shape}")
            if not np.all(np.isfinite(g)):
                raise NonFiniteGradientError(f"non-finite gradient for parameter {k}")
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            p = params[k]
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            p -= update.astype(p.dtype, copy=False)

    def state_arrays(self) -> dict:
        out = {}
        for k in self.m:
            out[f"adam.m.{k}"] = self.m[k]
            out[f"adam.v.{k}"] = self.v[k]
        return out


def global_norm(grads: dict) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values())))
