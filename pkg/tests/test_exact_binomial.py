import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import special, stats

from saferoute.errors import InvalidArgumentError
from saferoute.exact_binomial import (
    BinomialObservation,
    beta_quantile,
    cp_upper_bound,
    min_calibration_size,
    regularized_incomplete_beta,
)

# UCB_0.10(k, n) golden table, verified against scipy.stats.beta.ppf(0.9, k+1, n-k)
GOLDEN = {
    (0, 50): 0.045, (0, 100): 0.023, (0, 200): 0.011, (0, 300): 0.008, (0, 500): 0.005,
    (1, 50): 0.076, (1, 100): 0.038, (1, 200): 0.019, (1, 300): 0.013, (1, 500): 0.008,
    (5, 50): 0.178, (5, 100): 0.091, (5, 200): 0.046, (5, 300): 0.031, (5, 500): 0.018,
    (10, 50): 0.291, (10, 100): 0.150, (10, 200): 0.076, (10, 300): 0.051, (10, 500): 0.031,
    (20, 100): 0.261, (20, 200): 0.133, (20, 300): 0.089, (20, 500): 0.054,
}


@pytest.mark.parametrize("kn,expected", sorted(GOLDEN.items()))
def test_golden_table(kn, expected):
    k, n = kn
    assert cp_upper_bound(k, n, 0.10) == pytest.approx(expected, abs=1e-3)


def test_zero_of_300_is_tight():
    assert cp_upper_bound(0, 300, 0.10) == pytest.approx(0.0076, abs=5e-4)


def test_all_unsafe_returns_one():
    for n in (1, 7, 300):
        assert cp_upper_bound(n, n, 0.10) == 1.0


def test_observation_type():
    obs = BinomialObservation(5, 200, 0.1)
    assert obs.upper_bound == pytest.approx(0.046, abs=1e-3)
    with pytest.raises(InvalidArgumentError):
        BinomialObservation(6, 5, 0.1)
    with pytest.raises(InvalidArgumentError):
        BinomialObservation(0, 5, 1.0)


@pytest.mark.parametrize("k,n,delta", [(0, 0, 0.1), (-1, 5, 0.1), (3, 2, 0.1), (0, 5, 0.0), (0, 5, 1.0), (0, 5, math.nan)])
def test_invalid_observations(k, n, delta):
    with pytest.raises(InvalidArgumentError):
        cp_upper_bound(k, n, delta)


def test_quantile_examples():
    assert beta_quantile(0.5, 1, 1) == pytest.approx(0.5, abs=1e-12)
    # Beta(1, b): x = 1 - (1 - p)^(1/b)
    assert beta_quantile(0.9, 1, 300) == pytest.approx(1 - 0.1 ** (1 / 300), abs=1e-12)
    assert beta_quantile(0.9, 1, 300) == pytest.approx(0.00765, abs=1e-5)
    # Beta(a, 1): CDF = x^a
    assert beta_quantile(0.25, 2, 1) == pytest.approx(0.5, abs=1e-12)


def test_quantile_endpoints_and_errors():
    assert beta_quantile(0.0, 3, 4) == 0.0
    assert beta_quantile(1.0, 3, 4) == 1.0
    for bad in [(-0.1, 1, 1), (1.1, 1, 1), (0.5, 0, 1), (0.5, 1, -2), (math.nan, 1, 1), (0.5, math.inf, 1)]:
        with pytest.raises(InvalidArgumentError):
            beta_quantile(*bad)


def test_min_calibration_size():
    assert min_calibration_size(0.2, 0.1) == 11
    assert min_calibration_size(0.05, 0.1) == 45
    assert min_calibration_size(0.5, 0.5) == 1
    for bad in [(0.0, 0.1), (1.0, 0.1), (0.2, 0.0), (0.2, 1.0)]:
        with pytest.raises(InvalidArgumentError):
            min_calibration_size(*bad)


def test_min_calibration_size_is_smallest_certifying_n():
    # k = 0: UCB(0, n) = 1 - delta^(1/n) <= alpha  <=>  n >= log(delta)/log(1-alpha)
    for alpha in (0.05, 0.1, 0.2, 0.3):
        for delta in (0.05, 0.1, 0.2):
            n = min_calibration_size(alpha, delta)
            assert cp_upper_bound(0, n, delta) <= alpha + 1e-12
            if n > 1:
                assert cp_upper_bound(0, n - 1, delta) > alpha


def test_against_scipy_grid():
    rng = np.random.default_rng(1)
    for _ in range(400):
        n = int(rng.integers(1, 2000))
        k = int(rng.integers(0, n))
        delta = float(rng.uniform(0.01, 0.5))
        assert cp_upper_bound(k, n, delta) == pytest.approx(stats.beta.ppf(1 - delta, k + 1, n - k), abs=1e-10)


@given(
    x=st.floats(0.0, 1.0),
    a=st.floats(0.5, 500.0),
    b=st.floats(0.5, 500.0),
)
def test_incomplete_beta_matches_scipy(x, a, b):
    assert regularized_incomplete_beta(x, a, b) == pytest.approx(special.betainc(a, b, x), abs=1e-11)


@given(p=st.floats(0.0, 1.0), a=st.floats(0.5, 2000.0), b=st.floats(0.5, 2000.0))
def test_quantile_inverts_cdf(p, a, b):
    x = beta_quantile(p, a, b)
    assert 0.0 <= x <= 1.0
    assert regularized_incomplete_beta(x, a, b) == pytest.approx(p, abs=1e-8)


@given(p1=st.floats(0.0, 1.0), p2=st.floats(0.0, 1.0), a=st.floats(0.5, 200.0), b=st.floats(0.5, 200.0))
def test_quantile_monotone_in_p(p1, p2, a, b):
    lo, hi = sorted((p1, p2))
    assert beta_quantile(lo, a, b) <= beta_quantile(hi, a, b) + 1e-12


@given(n=st.integers(1, 600), data=st.data(), delta=st.floats(0.001, 0.5))
def test_bound_exceeds_point_estimate(n, data, delta):
    # holds for delta <= 1/2: the 1-delta quantile of Beta(k+1, n-k) is above k/n
    k = data.draw(st.integers(0, n))
    assert cp_upper_bound(k, n, delta) >= k / n


@given(n=st.integers(2, 400), data=st.data(), delta=st.floats(0.01, 0.5))
def test_bound_monotone(n, data, delta):
    k = data.draw(st.integers(0, n - 1))
    assert cp_upper_bound(k, n, delta) < cp_upper_bound(k + 1, n, delta)
    assert cp_upper_bound(k, n + 1, delta) <= cp_upper_bound(k, n, delta)


@pytest.mark.parametrize("n,p,delta", [(30, 0.1, 0.1), (100, 0.2, 0.1), (300, 0.05, 0.05), (50, 0.5, 0.2)])
def test_coverage_property(n, p, delta):
    trials = 20_000
    rng = np.random.default_rng(n)
    ks = rng.binomial(n, p, size=trials)
    # bound depends only on k, so evaluate each distinct k once
    ucb = {int(k): cp_upper_bound(int(k), n, delta) for k in np.unique(ks)}
    covered = np.mean([p <= ucb[int(k)] for k in ks])
    assert covered >= 1 - delta - 3 * math.sqrt(delta * (1 - delta) / trials)
