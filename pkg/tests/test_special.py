import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evits.errors import DomainError
from evits.special import digamma, lgamma, trigamma

mpmath.mp.dps = 40

EULER_MASCHERONI = 0.5772156649015329


def test_lgamma_hand_values():
    assert lgamma(1.0) == pytest.approx(0.0, abs=1e-14)
    assert lgamma(2.0) == pytest.approx(0.0, abs=1e-14)
    assert lgamma(5.0) == pytest.approx(math.log(24.0), abs=1e-12)


def test_digamma_hand_values():
    assert digamma(1.0) == pytest.approx(-EULER_MASCHERONI, abs=1e-12)
    assert digamma(2.0) == pytest.approx(1.0 - EULER_MASCHERONI, abs=1e-12)
    assert digamma(3.0) - digamma(2.0) == pytest.approx(0.5, abs=1e-12)


@pytest.mark.parametrize("x", [1e-3, 0.02, 0.5, 1.0, 3.7, 9.99, 10.0, 88.0,
                               1234.5, 1e6])
def test_lgamma_against_high_precision(x):
    want = float(mpmath.loggamma(x))
    # 1e-12 absolute wherever float64 can express it; ulp-level beyond
    tolerance = max(1e-12, 4.0 * np.spacing(abs(want)))
    assert abs(lgamma(x) - want) <= tolerance


@pytest.mark.parametrize("x", [1e-3, 0.02, 0.5, 1.0, 3.7, 9.99, 10.0, 88.0,
                               1234.5, 1e6])
def test_digamma_against_high_precision(x):
    want = float(mpmath.digamma(x))
    tolerance = max(1e-10, 4.0 * np.spacing(abs(want)))
    assert abs(digamma(x) - want) <= tolerance


@pytest.mark.parametrize("x", [1e-3, 0.1, 1.0, 2.5, 9.9, 10.1, 150.0, 1e5])
def test_trigamma_against_high_precision(x):
    want = float(mpmath.polygamma(1, x))
    assert abs(trigamma(x) - want) <= max(1e-10, 4.0 * np.spacing(abs(want)))


@given(st.floats(min_value=0.1, max_value=100.0, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_lgamma_recurrence(x):
    assert abs(lgamma(x + 1.0) - lgamma(x) - math.log(x)) < 1e-10


@given(st.floats(min_value=0.1, max_value=100.0, allow_nan=False))
@settings(max_examples=200, deadline=None)
def test_digamma_recurrence(x):
    assert abs(digamma(x + 1.0) - digamma(x) - 1.0 / x) < 1e-10


@given(st.floats(min_value=0.1, max_value=100.0))
@settings(max_examples=100, deadline=None)
def test_trigamma_recurrence(x):
    assert abs(trigamma(x + 1.0) - trigamma(x) + 1.0 / x ** 2) < 1e-10


def test_vectorized_matches_scalar():
    xs = np.array([[0.5, 1.5], [2.5, 40.0]])
    out = lgamma(xs)
    assert out.shape == xs.shape
    for index in np.ndindex(*xs.shape):
        assert out[index] == lgamma(float(xs[index]))


@pytest.mark.parametrize("fn", [lgamma, digamma, trigamma])
@pytest.mark.parametrize("bad", [0.0, -1.0, float("nan"), float("inf")])
def test_domain_errors(fn, bad):
    with pytest.raises(DomainError):
        fn(bad)
    with pytest.raises(DomainError):
        fn(np.array([1.0, bad]))
