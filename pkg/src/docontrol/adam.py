"""Deterministic Adam moment state, shared by score training and the iLQR forward pass."""
from dataclasses import dataclass, field

import numpy as np


@dataclass
class Adam:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: np.ndarray | None = field(default=None, repr=False)
    v: np.ndarray | None = field(default=None, repr=False)

    def direction(self, g):
        """Advance the moments with ``g`` and return ``lr * m_hat / (sqrt(v_hat) + eps)``.

        The result points along ``g``; callers choose the sign.
        """
        g = np.asarray(g, dtype=float)
        if self.m is None:
            self.m = np.zeros_like(g)
            self.v = np.zeros_like(g)
        self.step_count += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * g
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * g * g
        m_hat = self.m / (1.0 - self.beta1 ** self.step_count)
        v_hat = self.v / (1.0 - self.beta2 ** self.step_count)
        return self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def snapshot(self):
        return (
            self.step_count,
            None if self.m is None else self.m.copy(),
            None if self.v is None else self.v.copy(),
        )

    def restore(self, snap):
        self.step_count, m, v = snap
        self.m = None if m is None else m.copy()
        self.v = None if v is None else v.copy()
