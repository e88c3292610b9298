"""Discretized probability-flow ODE as a controlled dynamical system.

Step ``t`` maps ``x_t`` to ``x_{t-1}``. With a VP schedule the Euler step is

    x_{t-1} = x + c_t * (x + s(x, t)),    c_t = beta_t * dt / 2

and a control ``u`` enters either before the step (input mode) or after it
(output mode).
"""
import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import DivergenceError, InvalidStateError

INPUT = "input"
OUTPUT = "output"
MODES = (INPUT, OUTPUT)
DIVERGENCE_NORM = 1e6


def _check_mode(mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def _guard(x, t):
    if not np.all(np.isfinite(x)) or np.linalg.norm(x) > DIVERGENCE_NORM:
        raise DivergenceError(f"dynamics diverged at t={t}", t=t)
    return x


def step_coeff(sched, t):
    return 0.5 * sched.g2(t) * sched.dt


def euler_pf_step(x, t, score, sched, ev=None):
    """One Euler step of the PF-ODE from step ``t`` to ``t - 1``."""
    if not 1 <= t <= sched.T:
        raise InvalidStateError(f"step index t={t} outside 1..{sched.T}")
    if ev is None:
        ev = score.evaluate(x, sched.time(t))
    c = step_coeff(sched, t)
    return _guard(x + c * (x + ev.value), t)


def controlled_step(x, u, t, score, sched, mode, ev=None):
    _check_mode(mode)
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != u.shape:
        raise InvalidStateError("state and control dimensions differ")
    if mode == INPUT:
        return euler_pf_step(x + u, t, score, sched, ev)
    return _guard(euler_pf_step(x, t, score, sched, ev) + u, t)


class StepLinearization:
    """Jacobian actions of one controlled step at a fixed (x, u, t).

    ``h_x = (1 + c) I + c J_s`` at the point where the score is evaluated;
    input mode has ``h_u = h_x`` and output mode ``h_u = I``.
    """

    def __init__(self, ev, c, mode):
        self.ev = ev
        self.c = c
        self.mode = mode

    def jvp_x(self, v):
        return (1.0 + self.c) * v + self.c * self.ev.jvp(v)

    def vjp_x(self, w):
        return (1.0 + self.c) * w + self.c * self.ev.vjp(w)

    def vjp_u(self, w):
        return self.vjp_x(w) if self.mode == INPUT else np.array(w, dtype=float)

    def jvp_u(self, v):
        return self.jvp_x(v) if self.mode == INPUT else np.array(v, dtype=float)


def linearize(x, u, t, score, sched, mode):
    _check_mode(mode)
    z = np.asarray(x, dtype=float) + (np.asarray(u, dtype=float) if mode == INPUT else 0.0)
    return StepLinearization(score.evaluate(z, sched.time(t)), step_coeff(sched, t), mode)


def step_vjp_x(x, u, t, seed, score, sched, mode):
    return linearize(x, u, t, score, sched, mode).vjp_x(seed)


def step_jvp_x(x, u, t, seed, score, sched, mode):
    return linearize(x, u, t, score, sched, mode).jvp_x(seed)


def step_vjp_u(x, u, t, seed, score, sched, mode):
    return linearize(x, u, t, score, sched, mode).vjp_u(seed)


@dataclass
class Trajectory:
    """States ``states[t]`` for t = 0..T and controls ``controls[t - 1] = u_t``.

    ``evals[t]`` caches the score evaluation used by step ``t`` so the
    backward pass can reuse it.
    """

    states: np.ndarray
    controls: np.ndarray
    mode: str
    evals: list = field(default=None, repr=False, compare=False)

    @property
    def T(self):
        return self.controls.shape[0]

    @property
    def x0(self):
        return self.states[0]

    @property
    def xT(self):
        return self.states[self.T]

    def u(self, t):
        return self.controls[t - 1]

    def linearization(self, t, score, sched):
        ev = self.evals[t] if self.evals is not None else None
        if ev is None:
            return linearize(self.states[t], self.u(t), t, score, sched, self.mode)
        return StepLinearization(ev, step_coeff(sched, t), self.mode)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            d = self.states.shape[1]
            writer.writerow(["t"] + [f"x{i}" for i in range(d)] + [f"u{i}" for i in range(d)])
            for t in range(self.T, -1, -1):
                u = self.u(t) if t >= 1 else np.zeros(d)
                writer.writerow([t] + [repr(float(v)) for v in self.states[t]] + [repr(float(v)) for v in u])


def rollout(x_T, controls, score, sched, mode):
    """Roll the controlled sampler from ``x_T`` down to ``x_0``."""
    _check_mode(mode)
    controls = np.array(controls, dtype=float)
    x_T = np.asarray(x_T, dtype=float)
    if controls.shape != (sched.T, x_T.shape[0]):
        raise InvalidStateError(f"controls must have shape ({sched.T}, {x_T.shape[0]})")
    states = np.empty((sched.T + 1, x_T.shape[0]))
    states[sched.T] = x_T
    evals = [None] * (sched.T + 1)
    for t in range(sched.T, 0, -1):
        x, u = states[t], controls[t - 1]
        z = x + u if mode == INPUT else x
        ev = score.evaluate(z, sched.time(t))
        evals[t] = ev
        states[t - 1] = controlled_step(x, u, t, score, sched, mode, ev)
    return Trajectory(states, controls, mode, evals)


def uncontrolled_rollout(x_T, score, sched, mode=OUTPUT):
    return rollout(x_T, np.zeros((sched.T, len(x_T))), score, sched, mode)


def chain_vjp(traj, seed, score, sched, stop=0):
    """Pull ``seed`` (a gradient at ``x_0``) back to every ``x_t``; returns list indexed by t.

    Uses only the state Jacobians, so the result is the exact gradient of the
    terminal function with respect to each intermediate state.
    """
    grads = [None] * (traj.T + 1)
    grads[0] = np.asarray(seed, dtype=float)
    for t in range(1, traj.T + 1):
        grads[t] = traj.linearization(t, score, sched).vjp_x(grads[t - 1])
    return grads
