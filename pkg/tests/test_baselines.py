import numpy as np
import pytest

from docontrol.baselines import (
    dps_sample, tweedie_x0, uncontrolled_sample, verify_input_mode_predictor_corrector,
    verify_output_mode_equivalence,
)
from docontrol.dynamics import euler_pf_step, uncontrolled_rollout
from docontrol.ilqr import ControlProblem
from docontrol.operators import (
    Downsample, Identity, Measurement, class_target, gaussian_blur, make_classifier, measurement_residual,
    motion_blur, random_mask,
)
from docontrol.schedule import VpSchedule
from docontrol.scores import GaussianMixturePrior, GmmScore, random_init_score, train_dsm


def normal_score(d, sched):
    return GmmScore(GaussianMixturePrior([1.0], np.zeros((1, d)), np.ones((1, d))), sched)


def mixture(rng, d, sched):
    prior = GaussianMixturePrior(rng.dirichlet(np.ones(3)), 1.5 * rng.standard_normal((3, d)), rng.uniform(0.2, 0.8, (3, d)))
    return prior, GmmScore(prior, sched)


def test_uncontrolled_standard_normal_fixed_point(rng):
    sched = VpSchedule(30)
    x_T = rng.standard_normal(3)
    res = uncontrolled_sample(x_T, normal_score(3, sched), sched)
    np.testing.assert_allclose(res.x0, x_T, atol=1e-12)
    assert res.nfe == 30


def test_uncontrolled_T1_and_determinism(rng):
    sched = VpSchedule(1)
    _, score = mixture(rng, 2, sched)
    x_T = rng.standard_normal(2)
    a, b = uncontrolled_sample(x_T, score, sched), uncontrolled_sample(x_T, score, sched)
    np.testing.assert_array_equal(a.x0, euler_pf_step(x_T, 1, score, sched))
    assert a.x0.tobytes() == b.x0.tobytes()


def test_tweedie_examples(rng):
    x = rng.standard_normal(2)
    flat = VpSchedule(5, 0.0, 0.0)
    np.testing.assert_allclose(tweedie_x0(x, 3, normal_score(2, flat), flat), x, rtol=1e-15)
    sched = VpSchedule(50)
    ab = sched.alpha_bars[20]
    np.testing.assert_allclose(tweedie_x0(x, 20, normal_score(2, sched), sched), np.sqrt(ab) * x, rtol=1e-12)


def test_tweedie_point_mass_limit():
    sched = VpSchedule(1000)
    t = int(np.argmin(np.abs(sched.alpha_bars[1:] - 1e-3))) + 1
    assert abs(sched.alpha_bars[t] - 1e-3) < 5e-4
    mu = np.array([2.0, 2.0])
    score = GmmScore(GaussianMixturePrior([1.0], mu[None], np.full((1, 2), 1e-8)), sched)
    x = np.random.default_rng(0).standard_normal(2)
    assert np.max(np.abs(tweedie_x0(x, t, score, sched) - mu)) <= 1e-2


def test_dps_zero_guidance_is_uncontrolled(rng):
    sched = VpSchedule(20)
    _, score = mixture(rng, 2, sched)
    x_T = rng.standard_normal(2)
    meas = Measurement(np.ones(2), 0.1, Identity(2))
    np.testing.assert_array_equal(dps_sample(x_T, meas, score, sched, 0.0).x0, uncontrolled_sample(x_T, score, sched).x0)
    with pytest.raises(ValueError):
        dps_sample(x_T, meas, score, sched, -1.0)


def test_dps_conjugate_gaussian():
    sched = VpSchedule(1000)
    score = normal_score(1, sched)
    res = dps_sample(np.array([np.random.default_rng(0).standard_normal()]),
                     Measurement(np.array([0.5]), 0.1, Identity(1)), score, sched)
    assert abs(res.x0[0] - 0.5 / 1.01) <= 0.1
    assert res.nfe == 2000


@pytest.mark.parametrize("scale", [0.5, 1.0])
def test_dps_improves_linear_gaussian(scale, rng):
    d, T = 4, 100
    sched = VpSchedule(T)
    prior = GaussianMixturePrior([1.0], rng.standard_normal((1, d)), rng.uniform(0.3, 1.0, (1, d)))
    score = GmmScore(prior, sched)
    x_true = prior.sample(1, rng)[0]
    meas = Measurement(random_mask(d, 0.5, 0).apply(x_true), 0.05, random_mask(d, 0.5, 0))
    x_T = rng.standard_normal(d)
    base = measurement_residual(meas, uncontrolled_sample(x_T, score, sched).x0)
    guided = measurement_residual(meas, dps_sample(x_T, meas, score, sched, scale).x0)
    assert guided < base


def operators_d8():
    shape = (2, 4)
    return [Identity(8), random_mask(8, 0.5, 1), Downsample(shape, 2), gaussian_blur(shape, 3, 1.0),
            motion_blur(shape, 3, 0.0), make_classifier(8, 3, hidden=8, seed=0)]


@pytest.mark.parametrize("op_index", range(6))
def test_output_equivalence_all_operators(op_index, rng):
    op = operators_d8()[op_index]
    sched = VpSchedule(10)
    _, score = mixture(rng, 8, sched)
    meas = class_target(op, 2) if op.kind == "classifier" else Measurement(rng.standard_normal(op.out_dim), 0.2, op)
    rep = verify_output_mode_equivalence(ControlProblem(meas, score, sched), sched)
    assert rep["min_cosine"] >= 1 - 1e-9
    assert rep["ratio_vs_one_over_alpha_max_rel_err"] <= 1e-8
    assert rep["feedback_gains_zero"] and rep["value_hessian_zero"]
    assert set(rep) >= {"per_t_cosine", "per_t_ratio", "candidate_constants"}


def test_inverse_g2dt_rule_constant_ratio(rng):
    sched = VpSchedule(20, 5.0, 5.0)
    _, score = mixture(rng, 2, sched)
    meas = Measurement(np.array([0.8, 0.3]), 0.1, Identity(2))
    rep = verify_output_mode_equivalence(ControlProblem(meas, score, sched), sched, alpha_rule="inverse-g2dt")
    r = np.array(rep["ratio_over_g2_dt"])
    assert rep["min_cosine"] >= 1 - 1e-9
    assert np.ptp(r) <= 1e-6 * np.mean(r)
    np.testing.assert_allclose(r, 1.0, rtol=1e-8)
    np.testing.assert_allclose(rep["ratio_over_half_g2_dt"], 2.0, rtol=1e-8)
    assert max(rep["per_t_step_residual"]) <= 1e-10


def test_equivalence_with_network_score(rng):
    d = 2
    sched = VpSchedule(10)
    prior, _ = mixture(rng, d, sched)
    net = train_dsm(random_init_score(d, 0), prior.sample(256, rng), sched, 3, 1e-3, 0, batch_size=64)
    meas = Measurement(np.array([0.5, -0.5]), 0.2, Identity(d))
    for score in (net, random_init_score(d, 7)):
        rep = verify_output_mode_equivalence(ControlProblem(meas, score, sched), sched)
        assert rep["min_cosine"] >= 1 - 1e-9


def test_predictor_corrector(rng):
    sched = VpSchedule(20)
    _, score = mixture(rng, 2, sched)
    meas = Measurement(np.array([0.8, 0.3]), 0.1, Identity(2))
    rep = verify_input_mode_predictor_corrector(ControlProblem(meas, score, sched), sched)
    assert rep["max_residual"] <= 1e-8
    assert rep["uncontrolled_matches_nominal"]
    np.testing.assert_allclose(rep["kappa_measured"], 2.0, rtol=1e-8)


def test_predictor_corrector_satisfied_measurement(rng):
    sched = VpSchedule(10)
    _, score = mixture(rng, 2, sched)
    x_T = rng.standard_normal(2)
    y = uncontrolled_rollout(x_T, score, sched).x0
    rep = verify_input_mode_predictor_corrector(ControlProblem(Measurement(y, 0.1, Identity(2)), score, sched, x_T), sched)
    assert rep["max_residual"] <= 1e-12
    assert rep["kappa_measured"] == []
