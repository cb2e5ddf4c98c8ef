"""Minimal Adam over a dict of named numpy arrays, with per-name learning
rates. State (first/second moments) lives in the optimizer; parameters are
updated in place so callers can hold views into larger buffers.
"""
from __future__ import annotations

import numpy as np


class Adam:
    def __init__(self, params: dict[str, np.ndarray], lr: float | dict[str, float],
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        if isinstance(lr, dict):
            missing = set(params) - set(lr)
            if missing:
                raise ValueError(f"missing learning rates for {sorted(missing)}")
            self.lr = dict(lr)
        else:
            self.lr = {k: float(lr) for k in params}
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr[k] * (m / c1) / (np.sqrt(v / c2) + self.eps)
