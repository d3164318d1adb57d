"""First-order parameter updates: plain SGD and Adam with bias correction."""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


def _grad_for(p: Tensor, grads: dict) -> np.ndarray:
    g = grads.get(p)
    if g is None:
        raise KeyError("no gradient supplied for a parameter")
    gd = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
    if gd.shape != p.data.shape:
        raise ValueError(f"gradient shape {gd.shape} does not match parameter {p.data.shape}")
    return gd


def sgd_step(params, grads: dict, lr: float):
    """theta <- theta - lr * grad, in place."""
    for p in params:
        p.data -= lr * _grad_for(p, grads)


class Adam:
    """Adam with bias-corrected first and second moments.

    m <- b1*m + (1-b1)*g        m_hat = m / (1 - b1^t)
    v <- b2*v + (1-b2)*g^2      v_hat = v / (1 - b2^t)
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)

    State is per parameter; the step counter is shared.
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValueError("betas must lie in [0, 1)")
        if lr <= 0.0:
            raise ValueError("lr must be positive")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: dict):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for p, m, v in zip(self.params, self._m, self._v):
            g = _grad_for(p, grads)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            m_hat = m / (1.0 - b1**self.t)
            v_hat = v / (1.0 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
