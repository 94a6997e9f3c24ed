import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from online_mlr.whitening import (WhitenState, Whitener, inverse_sqrt, update_covariance,
                                  whiten)


def test_first_update_overwrites():
    s = update_covariance(WhitenState(0, 7.0 * np.eye(3)), np.eye(3)[0])
    np.testing.assert_array_equal(s.Rbar, np.outer(np.eye(3)[0], np.eye(3)[0]))
    assert s.k == 1


def test_zero_regressors_shrink_estimate():
    s = WhitenState(1, np.eye(2))
    for _ in range(9):
        s = update_covariance(s, np.zeros(2))
    # prod_{k=2}^{10} (1 - 1/k) = 1/10
    np.testing.assert_allclose(s.Rbar, 0.1 * np.eye(2), rtol=1e-12)


def test_lln_on_scaled_gaussian():
    rng = np.random.default_rng(0)
    s = WhitenState.initial(3)
    for x in 2.0 * rng.standard_normal((100_000, 3)):
        s = update_covariance(s, x)
    assert np.linalg.norm(s.Rbar - 4.0 * np.eye(3)) <= 0.2


@pytest.mark.parametrize("Rbar, phi, expected", [
    (4.0 * np.eye(2), [2.0, 0.0], [1.0, 0.0]),
    (np.eye(2), [0.3, -1.2], [0.3, -1.2]),
    (np.diag([4.0, 9.0]), [2.0, 3.0], [1.0, 1.0]),
])
def test_whiten_examples(Rbar, phi, expected):
    out = whiten(WhitenState(5, Rbar), np.array(phi))
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_whiten_not_ready_for_singular_estimate():
    assert whiten(WhitenState(3, np.diag([1.0, 0.0])), np.ones(2)) is None


def test_whitened_stream_has_identity_covariance():
    rng = np.random.default_rng(1)
    Sigma = np.array([[4.0, 1.2, 0.0], [1.2, 1.0, 0.3], [0.0, 0.3, 0.5]])
    L = np.linalg.cholesky(Sigma)
    w = Whitener(3)
    out = np.array([w(L @ e)[0] for e in rng.standard_normal((100_000, 3))])
    emp = out.T @ out / out.shape[0]
    assert np.abs(emp - np.eye(3)).max() < 0.05


def test_warmup_passes_raw_regressors():
    w = Whitener(2)
    x = np.array([3.0, -1.0])
    for _ in range(3):
        out, root = w(x)
        np.testing.assert_array_equal(out, x)
        np.testing.assert_array_equal(root, np.eye(2))


def test_batched_whitener_matches_solo():
    rng = np.random.default_rng(2)
    xs = rng.standard_normal((200, 4, 3)) * [1.0, 2.0, 3.0]
    wb = Whitener(3, (4,))
    ws = Whitener(3)
    for x in xs:
        ob, _ = wb(x)
        os_, _ = ws(x[2])
        np.testing.assert_array_equal(ob[2], os_)


@st.composite
def spd_matrices(draw, d=3):
    A = draw(arrays(np.float64, (d, d), elements=st.floats(-3, 3)))
    return A @ A.T + 0.1 * np.eye(d)


@settings(max_examples=50, deadline=None)
@given(spd_matrices())
def test_prop_inverse_root_is_symmetric_and_exact(R):
    root, ready = inverse_sqrt(R)
    assert ready
    np.testing.assert_array_equal(root, root.T)
    resid = root @ root @ R - np.eye(3)
    assert np.abs(resid).max() <= 1e-8 * np.linalg.cond(R)
