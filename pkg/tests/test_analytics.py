import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gremlab.analytics import (B_integral, aging_prediction, arcsine_cdf, ehrenfest_pgf, ehrenfest_pgf_linear,
                               pi_analytic, pi_bruteforce)
from gremlab.environment import ABOVE_FT, AT_FT, BELOW_FT, INTERMEDIATE


def test_pgf_anchors():
    assert ehrenfest_pgf(1, 1, 0.3) == pytest.approx(0.3, abs=1e-14)
    assert ehrenfest_pgf(2, 1, 0.5) == pytest.approx(2 / 7, abs=1e-14)
    assert ehrenfest_pgf(3, 1, 0.5) == pytest.approx(11 / 58, abs=1e-14)


@given(st.integers(1, 12), st.floats(0.01, 0.99))
@settings(max_examples=60, deadline=None)
def test_pgf_matches_linear_system(n2, t):
    oracle = ehrenfest_pgf_linear(n2, t)
    got = np.array([ehrenfest_pgf(n2, i, t) for i in range(n2 + 1)])
    np.testing.assert_allclose(got, oracle, atol=1e-11)
    # farther starts take longer: the pgf decreases in i
    assert np.all(np.diff(got) <= 1e-15)


def test_pgf_edges():
    assert ehrenfest_pgf(5, 0, 0.4) == 1.0
    assert ehrenfest_pgf(5, 3, 1.0) == 1.0
    assert ehrenfest_pgf(5, 3, 0.0) == 0.0
    with pytest.raises(ValueError):
        ehrenfest_pgf(5, 6, 0.5)


def test_B_integral_against_quadrature():
    from scipy import integrate
    i, a, n2 = 2, 0.7, 5
    val, _ = integrate.quad(lambda u: (1 - u) ** i * (1 + u) ** (n2 - i) * u ** (a - 1), 0, 1, limit=200)
    assert B_integral(i, a, n2) == pytest.approx(val, rel=1e-8)


def test_pi_anchors():
    assert pi_analytic(1, 1.0) == pytest.approx(2 / 3, abs=1e-14)
    assert pi_analytic(2, 1.0) == pytest.approx(3 / 7, abs=1e-14)


@given(st.integers(1, 14), st.floats(1e-2, 1e2))
@settings(max_examples=60, deadline=None)
def test_pi_matches_bruteforce(n2, lp):
    assert pi_analytic(n2, lp) == pytest.approx(pi_bruteforce(n2, lp), abs=1e-10)


@given(st.floats(0.05, 0.95), st.floats(0.0, 1.0))
@settings(max_examples=80, deadline=None)
def test_arcsine_quad_equals_beta(alpha, u):
    assert arcsine_cdf(alpha, u) == pytest.approx(arcsine_cdf(alpha, u, method="beta"), abs=1e-10)


def test_arcsine_half_is_classical():
    u = 0.3
    assert arcsine_cdf(0.5, u) == pytest.approx(2 / math.pi * math.asin(math.sqrt(u)), abs=1e-12)


def test_aging_predictions_combine():
    a1, a2, p, th = 2 / 9, 2 / 3, 0.1, 1.0
    above = aging_prediction(ABOVE_FT, th, a1, a2, p)
    at = aging_prediction(AT_FT, th, a1, a2, p)
    below = aging_prediction(BELOW_FT, th, a1, a2, p)
    assert above == pytest.approx(arcsine_cdf(a2, 0.5))
    assert at == pytest.approx(p * arcsine_cdf(a1 * a2, 0.5) + (1 - p) * above)
    assert below == pytest.approx(p * aging_prediction(INTERMEDIATE, th, a1, a2, p))
    with pytest.raises(ValueError):
        aging_prediction("nope", th, a1, a2, p)
