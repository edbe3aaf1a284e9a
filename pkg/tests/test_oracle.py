import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from dltv.oracle import (bellman_residual, exact_quantile, lognormal_inverse_cdf, normal_cdf,
                         normal_inverse_cdf, policy_q_values, value_iteration)
from dltv.tabular_rl import TabularMDP, make_chain, make_cliff_walk, make_gridworld


def test_exact_quantile_examples():
    assert exact_quantile([1, 2, 3, 4], 0.5) == 2
    for tau in (0.01, 0.5, 0.99):
        assert exact_quantile([5], tau) == 5
    assert exact_quantile([-1, 0, 2], 0.9) == 2
    assert exact_quantile([2, -1, 0], 1 / 3) == -1


def test_exact_quantile_errors():
    with pytest.raises(ValueError):
        exact_quantile([1, 2], 0.0)
    with pytest.raises(ValueError):
        exact_quantile([], 0.5)
    with pytest.raises(ValueError):
        exact_quantile([1.0, np.nan], 0.5)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=30),
       st.floats(0.001, 0.999), st.floats(0.001, 0.999))
def test_exact_quantile_monotone_member(sample, t1, t2):
    lo, hi = sorted((t1, t2))
    assert exact_quantile(sample, lo) <= exact_quantile(sample, hi)
    assert exact_quantile(sample, lo) in sample


def test_exact_quantile_matches_numpy_inverted_cdf():
    x = np.random.default_rng(0).normal(size=37)
    for tau in np.linspace(0.01, 0.99, 41):
        assert exact_quantile(x, tau) == np.quantile(x, tau, method="inverted_cdf")


def test_normal_inverse_cdf_examples():
    assert normal_inverse_cdf(0.5, 3.0, 2.0) == 3.0
    assert normal_inverse_cdf(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    with pytest.raises(ValueError):
        normal_inverse_cdf(1.0)
    with pytest.raises(ValueError):
        normal_inverse_cdf(0.5, sigma=0.0)


@given(st.floats(1e-6, 1 - 1e-6))
def test_normal_inverse_cdf_symmetry_and_accuracy(tau):
    assert normal_inverse_cdf(tau) == pytest.approx(-normal_inverse_cdf(1 - tau), abs=1e-8)
    assert normal_inverse_cdf(tau) == pytest.approx(stats.norm.ppf(tau), abs=1e-8)


def test_inverse_then_cdf_is_identity():
    for tau in np.linspace(0.001, 0.999, 999):
        assert normal_cdf(normal_inverse_cdf(tau)) == pytest.approx(tau, abs=1e-6)


def test_lognormal_inverse_cdf():
    assert lognormal_inverse_cdf(0.5) == 1.0
    assert lognormal_inverse_cdf(0.9) == pytest.approx(stats.lognorm.ppf(0.9, 1.0), rel=1e-9)


def test_value_iteration_single_state():
    mdp = TabularMDP([[0]], [[1.0]], [[1.0]], gamma=0.5)
    assert value_iteration(mdp, tol=1e-12)[0, 0] == pytest.approx(2.0, abs=1e-12)


def test_value_iteration_chain():
    Q = value_iteration(make_chain(3, gamma=0.9), tol=1e-12)
    assert Q[0, 0] == pytest.approx(0.81, abs=1e-12)
    assert Q[2, 0] == pytest.approx(1.0)


def test_value_iteration_gamma_zero():
    mdp = make_gridworld(4, 2, 0.2, gamma=0.0)
    assert np.allclose(value_iteration(mdp), mdp.expected_reward)


@pytest.mark.parametrize("mdp", [make_cliff_walk(6, 3, 0.1), make_gridworld(5, 3, 0.0, cliff=False)])
def test_value_iteration_residual(mdp):
    Q = value_iteration(mdp, tol=1e-9)
    assert bellman_residual(mdp, Q) < 1e-9


def test_value_iteration_rejects_bad_tol():
    with pytest.raises(ValueError):
        value_iteration(make_chain(), tol=0)


def test_policy_q_values_consistent_with_optimum():
    mdp = make_cliff_walk(6, 3, 0.1)
    Q = value_iteration(mdp, tol=1e-11)
    Qpi = policy_q_values(mdp, Q.argmax(axis=1))
    assert np.allclose(Qpi, Q, atol=1e-8)
    # any other policy is no better anywhere
    Qbad = policy_q_values(mdp, np.zeros(mdp.n_states, dtype=int))
    assert np.all(Qbad <= Q + 1e-8)


def test_normal_cdf_tail():
    assert normal_cdf(-40) == 0.0 or normal_cdf(-40) < 1e-300
    assert normal_cdf(0.0, 1.0, 2.0) == pytest.approx(0.5 * math.erfc(1 / (2 * math.sqrt(2))))
