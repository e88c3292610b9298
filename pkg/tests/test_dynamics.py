import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docontrol.dynamics import (
    INPUT, OUTPUT, chain_vjp, controlled_step, euler_pf_step, linearize, rollout, step_jvp_x,
    step_vjp_u, step_vjp_x, uncontrolled_rollout,
)
from docontrol.errors import DivergenceError, InvalidStateError
from docontrol.operators import Identity, Measurement, random_mask, terminal_cost, terminal_cost_grad
from docontrol.schedule import VpSchedule
from docontrol.scores import GaussianMixturePrior, GmmScore, ScoreEval, random_init_score

from conftest import fd_grad, fd_jacobian, rel_err


class LinearScore:
    """s(x) = a x (a = -1 is the standard-normal score)."""

    def __init__(self, d, a=-1.0):
        self.dim, self.a = d, a

    def evaluate(self, x, s):
        return ScoreEval(self.a * np.asarray(x, float), lambda v: self.a * v)


def gmm(rng, d=3, M=3):
    return GaussianMixturePrior(rng.dirichlet(np.ones(M)), rng.standard_normal((M, d)), rng.uniform(0.2, 1.0, (M, d)))


def test_standard_normal_fixed_point(rng):
    sched = VpSchedule(10)
    score = LinearScore(1)
    for t in range(1, 11):
        x = rng.standard_normal(1)
        np.testing.assert_allclose(euler_pf_step(x, t, score, sched), x, rtol=0, atol=1e-15)


def test_zero_score_zero_beta():
    sched = VpSchedule(5, 0.0, 0.0)
    x = np.array([0.3, -2.0])
    np.testing.assert_array_equal(euler_pf_step(x, 3, LinearScore(2, 0.0), sched), x)


def test_hand_step_constant_beta():
    sched = VpSchedule(10, 0.2, 0.2)  # beta_t = 0.2, dt = 0.1
    np.testing.assert_allclose(euler_pf_step(np.array([1.0, 0.0]), 4, LinearScore(2), sched), [1.0, 0.0], atol=1e-15)


def test_euler_matches_drift_formula(rng):
    sched = VpSchedule(8)
    score = GmmScore(gmm(rng), sched)
    x = rng.standard_normal(3)
    t = 5
    beta = sched.g2(t)
    f = -0.5 * beta * x
    expected = x - (f - 0.5 * beta * score(x, sched.time(t))) * sched.dt
    np.testing.assert_allclose(euler_pf_step(x, t, score, sched), expected, rtol=1e-14)


@pytest.mark.parametrize("mode", [INPUT, OUTPUT])
def test_zero_control_is_uncontrolled(mode, rng):
    sched = VpSchedule(6)
    score = GmmScore(gmm(rng), sched)
    x = rng.standard_normal(3)
    np.testing.assert_array_equal(controlled_step(x, np.zeros(3), 4, score, sched, mode), euler_pf_step(x, 4, score, sched))


def test_output_mode_adds_control():
    sched = VpSchedule(5, 0.0, 0.0)
    x, v = np.array([1.0, 2.0]), np.array([0.5, -1.0])
    np.testing.assert_array_equal(controlled_step(x, v, 2, LinearScore(2, 0.0), sched, OUTPUT), x + v)


def test_input_mode_standard_normal(rng):
    sched = VpSchedule(5)
    for _ in range(5):
        x, u = rng.standard_normal(2), rng.standard_normal(2)
        np.testing.assert_allclose(controlled_step(x, u, 3, LinearScore(2), sched, INPUT), x + u, atol=1e-14)


def test_input_mode_identity(rng):
    sched = VpSchedule(7)
    score = GmmScore(gmm(rng), sched)
    x, u = rng.standard_normal(3), rng.standard_normal(3)
    np.testing.assert_array_equal(controlled_step(x, u, 5, score, sched, INPUT), euler_pf_step(x + u, 5, score, sched))


def test_divergence_guard():
    sched = VpSchedule(4)
    with pytest.raises(DivergenceError, match="dynamics diverged") as info:
        euler_pf_step(np.array([2e6]), 2, LinearScore(1, 0.0), sched)
    assert info.value.t == 2
    with pytest.raises(DivergenceError):
        rollout(np.array([1.0]), np.full((4, 1), 1e7), LinearScore(1), sched, OUTPUT)


def test_mismatched_control():
    with pytest.raises(InvalidStateError):
        controlled_step(np.zeros(2), np.zeros(3), 1, LinearScore(2), VpSchedule(2), OUTPUT)
    with pytest.raises(InvalidStateError):
        rollout(np.zeros(2), np.zeros((3, 2)), LinearScore(2), VpSchedule(2), OUTPUT)


def test_rollout_fixed_point_and_T1(rng):
    x_T = rng.standard_normal(4)
    traj = uncontrolled_rollout(x_T, LinearScore(4), VpSchedule(12))
    np.testing.assert_allclose(traj.x0, x_T, atol=1e-13)
    sched = VpSchedule(1)
    score = GmmScore(gmm(rng, d=4), sched)
    u = rng.standard_normal((1, 4))
    traj = rollout(x_T, u, score, sched, INPUT)
    assert traj.states.shape == (2, 4)
    np.testing.assert_array_equal(traj.x0, controlled_step(x_T, u[0], 1, score, sched, INPUT))


@pytest.mark.parametrize("mode", [INPUT, OUTPUT])
def test_rollout_reproduces_states(mode, rng):
    sched = VpSchedule(9)
    score = GmmScore(gmm(rng), sched)
    u = 0.1 * rng.standard_normal((9, 3))
    a = rollout(rng.standard_normal(3), u, score, sched, mode)
    b = rollout(a.xT, a.controls, score, sched, mode)
    assert a.states.tobytes() == b.states.tobytes()
    for t in range(1, 10):
        assert np.array_equal(a.states[t - 1], controlled_step(a.states[t], a.u(t), t, score, sched, mode))


def test_output_mode_vjp_u_is_identity(rng):
    sched = VpSchedule(4)
    score = GmmScore(gmm(rng), sched)
    w = rng.standard_normal(3)
    assert np.array_equal(step_vjp_u(rng.standard_normal(3), rng.standard_normal(3), 2, w, score, sched, OUTPUT), w)


def test_input_mode_vjp_u_equals_vjp_x(rng):
    sched = VpSchedule(4)
    score = GmmScore(gmm(rng), sched)
    x, u, w = rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal(3)
    np.testing.assert_array_equal(step_vjp_u(x, u, 3, w, score, sched, INPUT), step_vjp_x(x, u, 3, w, score, sched, INPUT))


def test_linear_score_jacobian_is_identity(rng):
    w = rng.standard_normal(3)
    np.testing.assert_allclose(step_vjp_x(np.ones(3), np.zeros(3), 2, w, LinearScore(3), VpSchedule(4), OUTPUT), w, atol=1e-15)


@pytest.mark.parametrize("mode", [INPUT, OUTPUT])
def test_network_step_vjp_matches_fd(mode, rng):
    sched = VpSchedule(5)
    net = random_init_score(4, 0)
    x, u = rng.standard_normal(4), 0.3 * rng.standard_normal(4)
    J = fd_jacobian(lambda z: controlled_step(z, u, 3, net, sched, mode), x, 1e-5)
    eye = np.eye(4)
    Jt = np.column_stack([step_vjp_x(x, u, 3, eye[:, i], net, sched, mode) for i in range(4)])
    assert rel_err(Jt, J.T) <= 1e-3


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 10_000), t=st.integers(1, 6), mode=st.sampled_from([INPUT, OUTPUT]))
def test_adjoint_consistency(seed, t, mode):
    rng = np.random.default_rng(seed)
    sched = VpSchedule(6)
    score = GmmScore(gmm(rng, d=4), sched)
    x, u, v, w = (rng.standard_normal(4) for _ in range(4))
    lhs = step_jvp_x(x, u, t, v, score, sched, mode) @ w
    rhs = v @ step_vjp_x(x, u, t, w, score, sched, mode)
    assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


@pytest.mark.parametrize("mode", [INPUT, OUTPUT])
def test_full_chain_gradient(backend, mode, rng):
    d, T = 8, 10
    sched = VpSchedule(T)
    score = GmmScore(gmm(rng, d=d), sched)
    meas = Measurement(rng.standard_normal(3), 0.5, random_mask(d, 0.4, 1))
    u = 0.1 * rng.standard_normal((T, d))
    x_T = rng.standard_normal(d)
    traj = rollout(x_T, u, score, sched, mode)
    grads = chain_vjp(traj, terminal_cost_grad(meas, traj.x0), score, sched)
    fd = fd_grad(lambda z: terminal_cost(meas, rollout(z, u, score, sched, mode).x0), x_T, 1e-6)
    assert rel_err(grads[T], fd) <= 1e-3


def test_trajectory_csv(tmp_path, rng):
    sched = VpSchedule(3)
    traj = rollout(np.ones(2), np.zeros((3, 2)), LinearScore(2), sched, OUTPUT)
    traj.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,x0,x1,u0,u1"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["3", "2", "1", "0"]
