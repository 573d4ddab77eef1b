"""AMSGrad: Adam with a running coordinate-wise maximum of the second moment."""
from __future__ import annotations

import numpy as np


class AmsGrad:
    """Bias-corrected AMSGrad update.

    m_t = b1 m + (1-b1) g          v_t = b2 v + (1-b2) g^2
    vmax = max(vmax, v_t)
    p   -= lr * (m_t / (1-b1^t)) / (sqrt(vmax / (1-b2^t)) + eps)

    vmax never decreases, so the effective step size is monotonically
    damped per coordinate.
    """

    def __init__(self, shapes, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros(s) for k, s in shapes.items()}
        self.v = {k: np.zeros(s) for k, s in shapes.items()}
        self.vmax = {k: np.zeros(s) for k, s in shapes.items()}

    @classmethod
    def for_model(cls, model, **kwargs):
        return cls({k: p.shape for k, p in model.params.items()}, **kwargs)

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, g in grads.items():
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            np.maximum(self.vmax[k], v, out=self.vmax[k])
            params[k] -= self.lr * (m / bc1) / (np.sqrt(self.vmax[k] / bc2) + self.eps)
