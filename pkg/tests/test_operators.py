import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from docontrol.errors import DegenerateLikelihoodError, InvalidStateError
from docontrol.operators import (
    Classifier, Downsample, Identity, Mask, Measurement, build_operator, class_target, gaussian_blur,
    gaussian_kernel, generate_measurement, make_classifier, measurement_residual, motion_blur,
    motion_kernel, random_mask, terminal_cost, terminal_cost_grad, terminal_cost_hess_action,
    train_classifier,
)

from conftest import fd_grad, fd_jacobian, rel_err

SHAPE = (8, 8)


def all_operators(d=64, shape=SHAPE):
    clf = make_classifier(d, 3, hidden=16, seed=4)
    return {
        "identity": Identity(d),
        "mask": random_mask(d, 0.08, 0),
        "downsample": Downsample(shape, 4),
        "gaussian-blur": gaussian_blur(shape, 5, 1.0),
        "motion-blur": motion_blur(shape, 5, 30.0),
        "classifier": clf,
    }


def meas_for(op, rng, sigma=0.1):
    if op.kind == "classifier":
        return class_target(op, 1)
    return Measurement(rng.standard_normal(op.out_dim), sigma, op)


def test_identity_and_mask():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(Identity(4).apply(x), x)
    m = Mask(4, [0, 2])
    np.testing.assert_array_equal(m.apply(x), [1.0, 3.0])
    np.testing.assert_array_equal(m.vjp(x, np.array([5.0, 7.0])), [5.0, 0.0, 7.0, 0.0])
    np.testing.assert_array_equal(Identity(3).vjp(None, np.array([1.0, 2.0, 3.0])), [1.0, 2.0, 3.0])


def test_downsample_mean():
    np.testing.assert_allclose(Downsample((4, 4), 4).apply(np.ones(16)), [1.0])
    x = np.arange(16.0)
    np.testing.assert_allclose(Downsample((4, 4), 2).apply(x), [2.5, 4.5, 10.5, 12.5])


def test_random_mask_keeps_eight_percent():
    m = random_mask(64, 0.08, 3)
    assert m.out_dim == 5 and np.all(np.diff(m.indices) > 0)
    assert np.array_equal(random_mask(64, 0.08, 3).indices, m.indices)


def test_kernels_normalized():
    assert abs(gaussian_kernel(5, 1.0).sum() - 1) < 1e-14
    k = motion_kernel(5, 0.0)
    np.testing.assert_allclose(k[2], np.full(5, 0.2))


def test_dimension_errors():
    with pytest.raises(InvalidStateError):
        Identity(3).apply(np.zeros(4))
    with pytest.raises(InvalidStateError):
        Mask(4, [1]).vjp(np.zeros(4), np.zeros(2))
    with pytest.raises(ValueError):
        Downsample((6, 6), 4)
    with pytest.raises(ValueError):
        Mask(4, [7])


@pytest.mark.parametrize("kind", ["identity", "mask", "downsample", "gaussian-blur", "motion-blur"])
def test_linear_operator_properties(backend, kind, rng):
    op = all_operators()[kind]
    x, z = rng.standard_normal(64), rng.standard_normal(64)
    np.testing.assert_allclose(op.apply(2.0 * x - 3.0 * z), 2.0 * op.apply(x) - 3.0 * op.apply(z), atol=1e-12)
    w = rng.standard_normal(op.out_dim)
    lhs, rhs = op.jvp(x, z) @ w, z @ op.vjp(x, w)
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_blur_vjp_matches_fd(backend, rng):
    op = gaussian_blur((4, 4), 3, 0.8)
    x, w = rng.standard_normal(16), rng.standard_normal(16)
    J = fd_jacobian(op.apply, x, 1e-4)
    assert rel_err(op.vjp(x, w), J.T @ w) <= 1e-6


def test_classifier_vjp_matches_fd(rng):
    op = make_classifier(6, 4, seed=1)
    x, w = rng.standard_normal(6), rng.standard_normal(4)
    J = fd_jacobian(op.apply, x, 1e-5)
    assert rel_err(op.vjp(x, w), J.T @ w) <= 1e-6
    assert rel_err(op.jvp(x, w[:4].repeat(2)[:6]), J @ w[:4].repeat(2)[:6]) <= 1e-6


def test_generate_measurement(rng):
    op = Identity(1000)
    x = rng.standard_normal(1000)
    m0 = generate_measurement(op, x, 0.0, 1)
    np.testing.assert_array_equal(m0.y, x)
    a, b = generate_measurement(op, x, 0.05, 7), generate_measurement(op, x, 0.05, 7)
    assert np.array_equal(a.y, b.y)
    assert abs(np.std(a.y - x) - 0.05) <= 0.005
    with pytest.raises(ValueError):
        generate_measurement(op, x, -1.0, 0)


def test_cost_examples():
    op = Identity(3)
    meas = Measurement(np.array([1.0, 2.0, 3.0]), 1.0, op)
    assert terminal_cost(meas, np.array([1.0, 2.0, 3.0])) == 0.0
    np.testing.assert_array_equal(terminal_cost_grad(meas, meas.y), 0.0)
    x0 = meas.y + np.array([1.0, 0.0, 0.0])
    assert terminal_cost(meas, x0) == pytest.approx(0.5)
    np.testing.assert_allclose(terminal_cost_grad(meas, x0), [1.0, 0.0, 0.0])


def test_classifier_uniform_cost():
    C = 5
    clf = Classifier(np.zeros((4, 3)), np.zeros(4), np.zeros((C, 4)), np.zeros(C))
    assert terminal_cost(class_target(clf, 2), np.ones(3)) == pytest.approx(np.log(C))


def test_degenerate_likelihood():
    meas = Measurement(np.zeros(2), 0.0, Identity(2))
    with pytest.raises(DegenerateLikelihoodError, match="degenerate likelihood"):
        terminal_cost(meas, np.zeros(2))


@pytest.mark.parametrize("kind", ["identity", "mask", "downsample", "gaussian-blur", "motion-blur", "classifier"])
def test_cost_gradient_matches_fd(backend, kind, rng):
    op = all_operators()[kind]
    meas = meas_for(op, rng)
    x = rng.standard_normal(64)
    fd = fd_grad(lambda z: terminal_cost(meas, z), x, 1e-6)
    assert rel_err(terminal_cost_grad(meas, x), fd) <= 1e-5


@pytest.mark.parametrize("kind", ["identity", "mask", "downsample", "gaussian-blur", "motion-blur", "classifier"])
def test_hessian_action_symmetric_psd(kind, rng):
    op = all_operators()[kind]
    meas = meas_for(op, rng)
    x, v, w = (rng.standard_normal(64) for _ in range(3))
    Hv, Hw = terminal_cost_hess_action(meas, x, v), terminal_cost_hess_action(meas, x, w)
    assert abs(Hv @ w - v @ Hw) <= 1e-10 * max(1.0, abs(Hv @ w))
    assert Hv @ v >= -1e-12


def test_linear_hessian_is_exact(rng):
    op = gaussian_blur((4, 4), 3, 1.0)
    meas = Measurement(rng.standard_normal(16), 0.3, op)
    x, v = rng.standard_normal(16), rng.standard_normal(16)
    H = fd_jacobian(lambda z: terminal_cost_grad(meas, z), x, 1e-5)
    assert rel_err(terminal_cost_hess_action(meas, x, v), H @ v) <= 1e-7


def test_residual(rng):
    op = random_mask(64, 0.5, 0)
    x = rng.standard_normal(64)
    meas = generate_measurement(op, x, 0.05, 2)
    r = measurement_residual(meas, x)
    assert abs(r - 0.05 * np.sqrt(op.out_dim)) <= 0.2 * 0.05 * np.sqrt(op.out_dim)
    clf = make_classifier(3, 2, seed=0)
    assert 0.0 <= measurement_residual(class_target(clf, 0), np.zeros(3)) <= 1.0


def test_train_classifier_separates_clusters():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, 200)
    X = np.where(labels[:, None] == 1, 2.0, -2.0) + 0.5 * rng.standard_normal((200, 2))
    clf = train_classifier(make_classifier(2, 2, seed=0), X, labels, steps=200, lr=0.05)
    acc = np.mean([np.argmax(clf.apply(x)) == y for x, y in zip(X, labels)])
    assert acc > 0.95


def test_build_operator():
    assert build_operator({"kind": "identity"}, 4).kind == "identity"
    assert build_operator({"kind": "mask", "indices": [0, 3]}, 4).out_dim == 2
    assert build_operator({"kind": "downsample", "factor": 2}, 16, (4, 4)).out_dim == 4
    assert build_operator({"kind": "motion-blur", "length": 3, "angle": 45}, 16, (4, 4)).kind == "motion-blur"
    with pytest.raises(ValueError):
        build_operator({"kind": "gaussian-blur"}, 16)
    with pytest.raises(ValueError):
        build_operator({"kind": "nope"}, 16)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), angle=st.floats(0, 180))
def test_motion_blur_adjoint(seed, angle):
    rng = np.random.default_rng(seed)
    op = motion_blur((6, 6), 5, angle)
    x, w = rng.standard_normal(36), rng.standard_normal(36)
    assert abs(op.apply(x) @ w - x @ op.vjp(x, w)) <= 1e-12 * max(1.0, abs(op.apply(x) @ w))
