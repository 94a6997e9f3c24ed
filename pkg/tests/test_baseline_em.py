import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from online_mlr import baseline_em
from online_mlr.baseline_em import PopEmState
from online_mlr.datagen import DataStream, ModelSpec, RegressorProcess
from online_mlr.exceptions import SingularGramError


def test_equal_components_split_evenly():
    rng = np.random.default_rng(0)
    phi, y = rng.standard_normal((50, 2)), rng.standard_normal(50)
    b = np.array([0.3, 0.4])
    np.testing.assert_array_equal(baseline_em.e_step(PopEmState(b, b), phi, y, 1.0), 0.5)


def test_saturated_responsibility():
    phi = np.array([[1.0]])
    alpha = baseline_em.e_step(PopEmState(np.array([2.0]), np.array([-1e4])), phi,
                               np.array([2.0]), 1.0)
    assert alpha[0] == 1.0


def test_responsibility_hand_value():
    # residuals^2 = (1, 3): phi = 1, y = 0, beta1 = 1, beta2 = sqrt(3)
    alpha = baseline_em.e_step(PopEmState(np.array([1.0]), np.array([np.sqrt(3.0)])),
                               np.array([[1.0]]), np.array([0.0]), 1.0)
    assert alpha[0] == pytest.approx(0.731059, abs=1e-6)


def test_stable_weights_survive_far_initialisation():
    phi = np.array([[1.0], [1.0]])
    y = np.array([0.0, 1.0])
    b1, b2 = np.array([100.0]), np.array([101.0])
    stable = baseline_em.e_step(PopEmState(b1, b2), phi, y, 1.0)
    assert np.all(np.isfinite(stable)) and np.all(stable > 0.99)
    raw = baseline_em.e_step(PopEmState(b1, b2), phi, y, 1.0, mode="unnormalized")
    assert np.all(np.isnan(raw))
    with pytest.raises(ValueError):
        baseline_em.e_step(PopEmState(b1, b2), phi, y, 1.0, mode="other")


def test_m_step_examples():
    rng = np.random.default_rng(1)
    phi = rng.standard_normal((40, 3))
    beta = np.array([1.0, -2.0, 0.5])
    y = phi @ beta
    np.testing.assert_allclose(baseline_em.m_step(phi, y, np.ones(40)), beta, rtol=1e-12)
    y_noisy = y + rng.standard_normal(40)
    ols = np.linalg.lstsq(phi, y_noisy, rcond=None)[0]
    np.testing.assert_allclose(baseline_em.m_step(phi, y_noisy, np.ones(40)), ols, rtol=1e-10)
    with pytest.raises(SingularGramError):
        baseline_em.m_step(phi, y, np.zeros(40), which=1)
    np.testing.assert_allclose(baseline_em.m_step(phi, y, np.zeros(40), which=2), beta, rtol=1e-12)


def test_fit_at_truth_on_noiseless_data_is_fixed_point():
    model = ModelSpec.ar1_benchmark()
    phi, _, z = DataStream(model, 0).take(500)
    y = np.where(z == 1, phi @ model.beta1_star, phi @ model.beta2_star)
    res = baseline_em.fit(phi, y, (model.beta1_star, model.beta2_star), 5, 1e-8,
                          truth=(model.beta1_star, model.beta2_star))
    assert res.converged and not res.aborted
    assert max(res.err1, res.err2) < 1e-8


def test_fit_rejects_zero_iterations():
    with pytest.raises(ValueError):
        baseline_em.fit(np.ones((3, 1)), np.ones(3), (np.ones(1), -np.ones(1)), 0, 1.0)


def test_abort_is_recorded_as_nonconvergent():
    # all samples identical: every weighted Gram matrix is rank one in d = 2
    phi = np.tile([1.0, 1.0], (10, 1))
    res = baseline_em.fit(phi, np.ones(10), (np.ones(2), -np.ones(2)), 3, 1.0,
                          truth=(np.ones(2), -np.ones(2)))
    assert res.aborted and res.converged is False and res.iterations == 1


def test_small_kappa_converges_mostly():
    model = ModelSpec.ar1_benchmark()
    rng = np.random.default_rng(2)
    hits = 0
    for r in range(20):
        phi, y, _ = DataStream(model, r).take(5000)
        init = (model.beta1_star + rng.uniform(-1, 1, 3), model.beta2_star + rng.uniform(-1, 1, 3))
        hits += baseline_em.fit(phi, y, init, 20, 1.0,
                                truth=(model.beta1_star, model.beta2_star)).converged
    assert hits >= 18


def test_unnormalized_e_step_loses_far_initialisations():
    model = ModelSpec.ar1_benchmark()
    truth = (model.beta1_star, model.beta2_star)
    rng = np.random.default_rng(3)
    results = {"stable": 0, "unnormalized": 0}
    for r in range(30):
        phi, y, _ = DataStream(model, r).take(5000)
        init = (model.beta1_star + rng.uniform(-20, 20, 3),
                model.beta2_star + rng.uniform(-20, 20, 3))
        for mode in results:
            results[mode] += baseline_em.fit(phi, y, init, 20, 1.0, truth, mode=mode).converged
    assert results["unnormalized"] <= 6
    assert results["stable"] >= 27


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_prop_swap_equivariance(d, seed):
    rng = np.random.default_rng(seed)
    phi = rng.standard_normal((60, d))
    y = np.where(rng.random(60) < 0.5, 1, -1) * (phi @ rng.standard_normal(d)) + phi @ rng.standard_normal(d)
    b1, b2 = rng.standard_normal(d), rng.standard_normal(d)
    a = baseline_em.fit(phi, y, (b1, b2), 5, 0.7)
    b = baseline_em.fit(phi, y, (b2, b1), 5, 0.7)
    np.testing.assert_array_equal(a.beta1, b.beta2)
    np.testing.assert_array_equal(a.beta2, b.beta1)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_prop_symmetric_init_stays_symmetric(d, seed):
    rng = np.random.default_rng(seed)
    half = rng.standard_normal((40, d))
    y_half = rng.standard_normal(40) * 2
    # reflection-closed sample: every (phi, y) also appears as (-phi, y)
    phi = np.vstack([half, -half])
    y = np.concatenate([y_half, y_half])
    b = rng.standard_normal(d)
    res = baseline_em.fit(phi, y, (b, -b), 10, 0.8)
    np.testing.assert_allclose(res.beta1, -res.beta2, rtol=0,
                               atol=1e-8 * max(1.0, np.abs(res.beta1).max()))
