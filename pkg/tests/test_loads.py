import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochdc import StochasticParams, analytic_moments, check_assumptions, exact_samples, stream


def test_moments_at_zero_state_and_time():
    assert analytic_moments(2.5, 1.0, 0.0, 3.0) == (0.0, 0.0)
    assert analytic_moments(2.5, 1.0, 1.7, 0.0) == (1.7, pytest.approx(1.7 ** 2))
    with pytest.raises(ValueError):
        analytic_moments(2.5, 1.0, 1.0, -0.1)


def test_moments_against_exact_solution():
    mean, second = analytic_moments(2.5, 1.0, 1.0, 1.0)
    assert mean == pytest.approx(math.exp(-2.5)) and mean == pytest.approx(0.0821, abs=5e-5)
    assert second == pytest.approx(math.exp(-4.0)) and second == pytest.approx(0.0183, abs=5e-5)
    x = exact_samples(2.5, 1.0, 1.0, 1.0, 400_000, np.random.default_rng(11))
    se_mean = x.std(ddof=1) / math.sqrt(x.size)
    se_second = (x ** 2).std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - mean) < 3 * se_mean
    assert abs((x ** 2).mean() - second) < 3 * se_second


@given(st.floats(0.1, 5), st.floats(0.0, 2), st.floats(-3, 3), st.floats(0, 2))
def test_moments_consistent(mu, sigma, x0, t):
    mean, second = analytic_moments(mu, sigma, x0, t)
    assert second >= mean ** 2 * (1 - 1e-12)          # variance is non-negative
    assert abs(mean) <= abs(x0) * (1 + 1e-12)           # mean decays


def test_assumptions_default_values():
    sp = StochasticParams.build(4, 2.5, 1.0, 2.0, 0.7, 1.3, 0.2)
    flags = check_assumptions(sp)
    assert all(np.all(v) for v in flags.values())


@pytest.mark.parametrize("kw,bad", [
    (dict(mu_P=0.25, sigma_P=0.5), "power"),
    (dict(mu_G=0.0625, sigma_G=0.25), "conductance"),
    (dict(sigma_I=2.0), "current"),                  # mu_I set to the boundary below
])
def test_assumption_boundaries_strict(kw, bad):
    base = dict(mu_I=2.5, sigma_I=1.0, mu_P=2.0, sigma_P=0.7, mu_G=1.3, sigma_G=0.2)
    base.update(kw)
    if bad == "current":
        base["mu_I"] = 0.5 * base["sigma_I"] ** 2 - 0.5
    flags = check_assumptions(StochasticParams.build(1, **base))
    assert not flags[bad][0]
    assert all(flags[k][0] for k in flags if k != bad)


def test_params_validation():
    with pytest.raises(ValueError):
        StochasticParams.build(1, 0.0, 1.0, 2.0, 0.7, 1.3, 0.2)
    with pytest.raises(ValueError):
        StochasticParams.build(1, 2.5, -1.0, 2.0, 0.7, 1.3, 0.2)
    sp = StochasticParams.build(2, 2.5, 1.0, 2.0, 0.7, 1.3, 0.2, initial_I_hat=[0.1, 0.2])
    assert sp.mu.tolist() == [2.5, 2.5, 2.0, 2.0, 1.3, 1.3]
    assert sp.initial.tolist() == [0.1, 0.2, 0, 0, 0, 0]
    assert np.all(sp.without_noise().sigma == 0)


def test_exact_samples_deterministic():
    a = exact_samples(2.0, 0.7, 1.0, 0.5, 100, stream(5))
    b = exact_samples(2.0, 0.7, 1.0, 0.5, 100, stream(5))
    np.testing.assert_array_equal(a, b)
