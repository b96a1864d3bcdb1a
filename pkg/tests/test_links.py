import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ipwgee import IDENTITY, LOG, LOGIT, eval_link, get_family
from ipwgee.errors import DomainError

GRID = np.linspace(-6, 6, 49)


@pytest.mark.parametrize(
    "family, x, expected",
    [("logit", 0.0, (0.5, 0.25, 0.0)), ("log", 0.0, (1.0, 1.0, 1.0)), ("identity", 3.7, (3.7, 1.0, 0.0))],
)
def test_eval_link_reference_points(family, x, expected):
    assert eval_link(family, x) == pytest.approx(expected, abs=1e-15)


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_eval_link_rejects_non_finite(bad):
    with pytest.raises(DomainError):
        eval_link("logit", bad)


@pytest.mark.parametrize("fam", [IDENTITY, LOG, LOGIT])
def test_derivatives_match_finite_differences(fam):
    h = 1e-5
    d1 = (fam.mu(GRID + h) - fam.mu(GRID - h)) / (2 * h)
    d2 = (fam.mu_prime(GRID + h) - fam.mu_prime(GRID - h)) / (2 * h)
    assert np.max(np.abs(d1 - fam.mu_prime(GRID)) / np.maximum(1, np.abs(fam.mu_prime(GRID)))) < 1e-6
    assert np.max(np.abs(d2 - fam.mu_double_prime(GRID)) / np.maximum(1, np.abs(fam.mu_double_prime(GRID)))) < 1e-6


def test_logit_matches_high_precision():
    mpmath.mp.dps = 60
    for x in (-30.0, -2.5, 0.3, 7.0, 40.0):
        e = mpmath.mpf(x)
        mu = 1 / (1 + mpmath.exp(-e))
        mu1 = mu * (1 - mu)
        mu2 = mu1 * (1 - 2 * mu)
        got = LOGIT.evaluate(x)
        for g, ref in zip(got, (mu, mu1, mu2)):
            assert float(g) == pytest.approx(float(ref), rel=1e-13, abs=1e-300)


def test_logit_stable_at_extremes():
    x = np.array([-800.0, -50.0, 50.0, 800.0])
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        mu, mu1, mu2 = LOGIT.evaluate(x)
    assert np.all((mu >= 0) & (mu <= 1))
    assert mu[0] == 0.0 and mu[-1] == 1.0
    assert np.all(np.isfinite(mu1)) and np.all(np.isfinite(mu2))


@given(st.floats(-30, 30), st.floats(-30, 30))
@settings(max_examples=200, deadline=None)
def test_mean_functions_monotone(a, b):
    for fam in (IDENTITY, LOG, LOGIT):
        if a < b:
            assert fam.mu(a) <= fam.mu(b)
        assert fam.mu_prime(a) > 0 or fam.tag == "logit" and abs(a) > 700


def test_family_aliases():
    assert get_family("binomial") is LOGIT
    assert get_family("Poisson") is LOG
    assert get_family("normal") is IDENTITY
    assert get_family(LOG) is LOG
    with pytest.raises(ValueError):
        get_family("probit")
