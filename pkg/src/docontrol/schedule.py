"""Variance-preserving diffusion clock."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ScheduleError


@dataclass(frozen=True)
class VpSchedule:
    """Linear-beta VP schedule discretized into ``T`` Euler steps on [0, 1].

    Step ``t`` (1..T) evaluates continuous quantities at ``t * dt``. Setting
    ``beta_min == beta_max`` gives a constant-beta schedule; zero beta (a
    frozen sampler) is allowed for degenerate checks.
    """

    T: int
    beta_min: float = 0.1
    beta_max: float = 20.0
    betas: np.ndarray = field(init=False, repr=False, compare=False)
    alpha_bars: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if int(self.T) != self.T or self.T < 1:
            raise ScheduleError(f"T must be a positive integer, got {self.T}")
        if not (self.beta_min >= 0 and self.beta_max >= self.beta_min):
            raise ScheduleError("need 0 <= beta_min <= beta_max")
        times = np.arange(self.T + 1) * self.dt
        object.__setattr__(self, "betas", self.beta(times))
        object.__setattr__(self, "alpha_bars", self.alpha_bar(times))

    @property
    def dt(self):
        return 1.0 / self.T

    def beta(self, s):
        return self.beta_min + np.asarray(s, dtype=float) * (self.beta_max - self.beta_min)

    def alpha_bar(self, s):
        s = np.asarray(s, dtype=float)
        return np.exp(-(self.beta_min * s + 0.5 * s * s * (self.beta_max - self.beta_min)))

    def g2(self, t):
        """Squared diffusion coefficient at step index ``t``."""
        return float(self.betas[self.check_index(t)])

    def time(self, t):
        return self.check_index(t) * self.dt

    def check_index(self, t):
        if not (0 <= t <= self.T) or int(t) != t:
            raise ScheduleError(f"time out of schedule: t={t} not in [0, {self.T}]")
        return int(t)
