"""Plain-numpy Adam used by the mask and texture phases."""

from __future__ import annotations

import numpy as np


class Adam:
    """Adam over a single parameter array, updated in place."""

    def __init__(self, shape, lr: float, betas=(0.9, 0.999), eps: float = 1e-15):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, param: np.ndarray, grad: np.ndarray, lr: float = None) -> None:
        if grad.shape != self.m.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match state {self.m.shape}")
        lr = self.lr if lr is None else lr
        self.t += 1
        self.m = self.beta1 * self.m + (1 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1 - self.beta2) * grad * grad
        m_hat = self.m / (1 - self.beta1 ** self.t)
        v_hat = self.v / (1 - self.beta2 ** self.t)
        param -= lr * m_hat / (np.sqrt(v_hat) + self.eps)
