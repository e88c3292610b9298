"""Tikhonov-regularized iLQR over the controlled diffusion sampler.

Second-order quantities are kept as projected (Q, B) pairs of rank at most
``rank_k``; the regularized ``Q_uu`` is inverted through the Woodbury
identity. First-order quantities (``V_x``, ``Q_x``, ``Q_u``, ``k``) are exact.
"""
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .adam import Adam
from .dynamics import INPUT, MODES, OUTPUT, Trajectory, controlled_step, rollout, step_coeff
from .errors import DivergenceError
from .lowrank import LinOp, ProjectedMatrix, project, randomized_range, woodbury_inverse_action
from .operators import terminal_cost, terminal_cost_grad, terminal_cost_hess_action
from .schedule import VpSchedule
from .scores import CountingScore

log = logging.getLogger(__name__)

ALPHA_RULES = ("fixed", "inverse-g2dt")


@dataclass
class AdamConfig:
    enabled: bool = True
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class SolverConfig:
    """Solver hyperparameters. Defaults: T=50, 50 iterations, alpha=1e-4, rank 1, input mode,
    Adam step 1e-3."""

    T: int = 50
    num_iters: int = 50
    alpha: float = 1e-4
    alpha_rule: str = "fixed"
    running_weight: float = 1e-4
    lam: float = 1.0
    rank_k: int = 1
    mode: str = INPUT
    adam: AdamConfig = field(default_factory=AdamConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.adam, dict):
            self.adam = AdamConfig(**self.adam)
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.alpha == 0 and self.alpha_rule == "fixed":
            log.warning("alpha = 0: Q_uu may be singular")
        if self.alpha_rule not in ALPHA_RULES:
            raise ValueError(f"alpha_rule must be one of {ALPHA_RULES}")
        if self.rank_k < 0:
            raise ValueError("rank_k must be >= 0")
        if self.num_iters < 1:
            raise ValueError("num_iters must be >= 1")
        if not 0 < self.lam <= 1:
            raise ValueError("lam must lie in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.running_weight < 0:
            raise ValueError("running_weight must be >= 0")

    def alpha_at(self, sched, t):
        if self.alpha_rule == "inverse-g2dt":
            return 1.0 / (sched.g2(t) * sched.dt)
        return self.alpha

    def to_dict(self):
        return asdict(self)


@dataclass
class ValueExpansion:
    Vx: np.ndarray
    Vxx: ProjectedMatrix | None  # None is the exact-zero marker


@dataclass
class GainSchedule:
    """Gains and value expansions indexed by step: ``k[t]``, ``K[t]`` for t = 1..T;
    ``Vx[t]``/``Vxx[t]`` for t = 0..T (index 0 is the terminal expansion)."""

    k: list
    K: list
    Vx: list
    Vxx: list

    @property
    def T(self):
        return len(self.k) - 1


@dataclass
class ControlProblem:
    meas: object
    score: object
    sched: VpSchedule
    x_T: np.ndarray | None = None

    def initial_state(self, seed):
        if self.x_T is not None:
            return np.asarray(self.x_T, dtype=float)
        return np.random.default_rng(seed).standard_normal(self.score.dim)


@dataclass
class Solution:
    trajectory: Trajectory
    cost_history: list
    config: dict
    nfe: int
    wall_seconds: float
    accepted: list
    lam_history: list

    @property
    def controls(self):
        return self.trajectory.controls

    @property
    def x0(self):
        return self.trajectory.x0

    @property
    def terminal_cost(self):
        return min(self.cost_history)


def init_value_expansion(meas, x0, rank_k=0, seed=0):
    """``V_x`` is the terminal gradient; ``V_xx`` the rank-k sketch of the Gauss-Newton Hessian."""
    Vx = terminal_cost_grad(meas, x0)
    d = x0.shape[0]
    k = min(rank_k, d)
    if k == 0:
        return ValueExpansion(Vx, None)
    hess = LinOp((d, d), lambda v: terminal_cost_hess_action(meas, x0, v))
    rng = np.random.default_rng(seed)
    Q = randomized_range(hess, k, rng)
    return ValueExpansion(Vx, project(hess, Q).symmetrized())


def _columns(fn, M):
    return np.column_stack([fn(M[:, j]) for j in range(M.shape[1])])


def backward_pass(traj, meas, score, sched, config, iteration=0):
    """Riccati recursion from t = 1 up to t = T."""
    T = traj.T
    w = config.running_weight
    ks, Ks = [None] * (T + 1), [None] * (T + 1)
    Vxs, Vxxs = [None] * (T + 1), [None] * (T + 1)
    ve = init_value_expansion(meas, traj.x0, config.rank_k, [config.seed, iteration])
    Vx, Vxx = ve.Vx, ve.Vxx
    Vxs[0], Vxxs[0] = Vx, Vxx
    for t in range(1, T + 1):
        lin = traj.linearization(t, score, sched)
        lu = 2.0 * w * traj.u(t)
        D = np.full(Vx.shape[0], config.alpha_at(sched, t) + 2.0 * w)
        Qx = lin.vjp_x(Vx)
        Qu = lu + (Qx if config.mode == INPUT else Vx)
        if Vxx is None:
            k = -woodbury_inverse_action(D, None, Qu)
            K, Vx_new, Vxx_new = None, Qx, None
        else:
            P_next = Vxx.Q
            C_next = Vxx.core
            C_next = 0.5 * (C_next + C_next.T)
            W = _columns(lin.vjp_x, P_next)  # h_x^T P'
            if config.mode == OUTPUT:
                k = -woodbury_inverse_action(D, Vxx, Qu)
                Z = woodbury_inverse_action(D, Vxx, P_next)
                Pk, Rk = np.linalg.qr(Z)
                K = ProjectedMatrix(Pk, -Rk @ C_next @ W.T)
                Vx_new = Qx + W @ (C_next @ (P_next.T @ k))
                S = C_next - C_next @ (P_next.T @ Z) @ C_next
                P, R = np.linalg.qr(W)
                Vxx_new = ProjectedMatrix.from_core(P, R @ S @ R.T)
            else:
                P, R = np.linalg.qr(W)
                M = ProjectedMatrix.from_core(P, R @ C_next @ R.T)
                C = M.core
                k = -woodbury_inverse_action(D, M, Qu)
                Z = woodbury_inverse_action(D, M, P)
                Pk, Rk = np.linalg.qr(Z)
                K = ProjectedMatrix(Pk, -Rk @ C @ P.T)
                Vx_new = Qx + P @ (C @ (P.T @ k))
                Vxx_new = ProjectedMatrix.from_core(P, C - C @ (P.T @ Z) @ C)
        ks[t], Ks[t] = k, K
        Vx, Vxx = Vx_new, Vxx_new
        Vxs[t], Vxxs[t] = Vx, Vxx
    return GainSchedule(ks, Ks, Vxs, Vxxs)


def forward_pass(traj_prev, gains, score, sched, config, adam_state=None, lam=None):
    """Apply ``u_t + lam * P k_t + K_t (x_t - x_t')`` sequentially from t = T down to 1.

    ``P`` is the Adam preconditioner when ``adam_state`` is given, otherwise
    the identity. The Adam moments advance once per call.
    """
    lam = config.lam if lam is None else lam
    T = traj_prev.T
    k_all = np.vstack([gains.k[t] for t in range(1, T + 1)])
    step = adam_state.direction(k_all) if adam_state is not None else k_all
    d = traj_prev.states.shape[1]
    states = np.empty_like(traj_prev.states)
    controls = np.empty((T, d))
    evals = [None] * (T + 1)
    states[T] = traj_prev.states[T]
    mode = traj_prev.mode
    for t in range(T, 0, -1):
        x = states[t]
        u = traj_prev.u(t) + lam * step[t - 1]
        K = gains.K[t]
        if K is not None:
            u = u + K.matvec(x - traj_prev.states[t])
        controls[t - 1] = u
        z = x + u if mode == INPUT else x
        ev = score.evaluate(z, sched.time(t))
        evals[t] = ev
        states[t - 1] = controlled_step(x, u, t, score, sched, mode, ev)
    return controls, Trajectory(states, controls, mode, evals), adam_state


def make_adam(config):
    a = config.adam
    if not a.enabled:
        return None
    return Adam(lr=a.lr, beta1=a.beta1, beta2=a.beta2, eps=a.eps)


def solve(problem, config):
    """Run ``num_iters`` iLQR iterations from zero controls.

    An iteration that raises the terminal cost or diverges is rejected: the
    previous controls are kept and ``lam`` is halved for the next attempt;
    ``lam`` resets after an accepted step. Adam moments keep advancing on
    rejection so that stale momentum cannot lock in an ascent direction.
    """
    if problem.sched.T != config.T:
        raise ValueError(f"schedule has T={problem.sched.T} but config has T={config.T}")
    start = time.perf_counter()
    score = CountingScore(problem.score)
    sched = problem.sched
    x_T = problem.initial_state(config.seed)
    traj = rollout(x_T, np.zeros((sched.T, x_T.shape[0])), score, sched, config.mode)
    cost = terminal_cost(problem.meas, traj.x0)
    history, accepted, lams = [cost], [], []
    adam = make_adam(config)
    lam = config.lam
    for it in range(config.num_iters):
        gains = backward_pass(traj, problem.meas, score, sched, config, iteration=it)
        lams.append(lam)
        try:
            _, new_traj, _ = forward_pass(traj, gains, score, sched, config, adam, lam)
            new_cost = terminal_cost(problem.meas, new_traj.x0)
            ok = np.isfinite(new_cost) and new_cost <= cost
        except DivergenceError as exc:
            log.debug("iteration %d diverged at t=%s", it, exc.t)
            ok = False
        if ok:
            traj, cost = new_traj, new_cost
            lam = config.lam
        else:
            lam = lam / 2.0
        accepted.append(bool(ok))
        history.append(cost)
        log.debug("iter %d cost %.6g accepted=%s", it, cost, ok)
    log.info("solve: terminal cost %.6g -> %.6g, nfe %d", history[0], cost, score.nfe)
    return Solution(
        trajectory=traj,
        cost_history=history,
        config=config.to_dict(),
        nfe=score.nfe,
        wall_seconds=time.perf_counter() - start,
        accepted=accepted,
        lam_history=lams,
    )
