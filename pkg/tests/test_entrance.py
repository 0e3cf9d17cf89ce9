import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gremlab.entrance import (entrance_factorization, entrance_params_asymptotic, limit_nu1, nu1,
                              stationary_law, trap_jump_sequence, trap_kernel, transition_counts,
                              validate_cylinder_entrance)
from gremlab.environment import ABOVE_FT, AT_FT, BELOW_FT, derive_params, rank_top, sample_environment
from gremlab.rng import derive_stream


def test_hand_kernel():
    # psi = 1, gamma1 = (2, 1), M2 = 2: lambda = (1/5, 1/3), nu1 = (6/11, 5/11)
    ep = entrance_params_asymptotic(2, 2, 1.0, [2.0, 1.0])
    np.testing.assert_allclose(ep.lam, [1 / 5, 1 / 3])
    np.testing.assert_allclose(nu1(ep), [6 / 11, 5 / 11])
    P = trap_kernel(2, 2, 1.0, [2.0, 1.0]).transition
    np.testing.assert_allclose(P[0], [5 / 22 * 2, 5 / 22 * 2, 1 / 22, 1 / 22], atol=1e-15)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-15)


def test_printed_convention_not_stochastic():
    P = trap_kernel(2, 2, 1.0, [2.0, 1.0], convention="printed").transition
    assert np.max(np.abs(P.sum(axis=1) - 1)) > 1e-3


@given(st.integers(1, 5), st.integers(1, 5), st.floats(0.01, 100.0),
       st.lists(st.floats(0.01, 100.0), min_size=5, max_size=5))
@settings(max_examples=60, deadline=None)
def test_kernel_rows_sum_to_one(M1, M2, psi, g):
    P = trap_kernel(M1, M2, psi, sorted(g[:M1], reverse=True)).transition
    assert np.all(P >= 0)
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-13)


def test_stationary_law_of_kernel():
    P = trap_kernel(3, 2, 0.5, [3.0, 2.0, 1.0]).transition
    pi = stationary_law(P)
    np.testing.assert_allclose(pi @ P, pi, atol=1e-12)


def test_jump_frequencies():
    K = trap_kernel(2, 2, 1.0, [2.0, 1.0])
    seq = trap_jump_sequence(K, 50000, derive_stream(0, "test.trap"))
    c = transition_counts(seq, 4)
    emp = c / c.sum(axis=1, keepdims=True)
    se = np.sqrt(K.transition * (1 - K.transition) / c.sum(axis=1, keepdims=True))
    assert np.all(np.abs(emp - K.transition) <= 5 * se + 1e-12)


def test_limit_nu1_regimes():
    g = np.array([4.0, 1.0])
    np.testing.assert_allclose(limit_nu1(ABOVE_FT, g, 2, 1.0), [0.8, 0.2])
    np.testing.assert_allclose(limit_nu1(BELOW_FT, g, 2, 1.0), [0.5, 0.5])
    w = g / (1 + 2 * g)
    np.testing.assert_allclose(limit_nu1(AT_FT, g, 2, 1.0), w / w.sum())


def test_cylinder_entrance_small():
    env = sample_environment(derive_params(12, 0.375, 0.5, 2.5), 11)
    _, top = rank_top(env, 2, 2)
    outside = np.flatnonzero(~top.wbar_mask())[:10]
    rows = validate_cylinder_entrance(env, top, outside, tolerance=1.0)
    # the cylinder targets exclude the Top, so the two probabilities from a start
    # add up to one minus the chance of landing on one of the four Top states first
    by_start = {}
    for r in rows:
        by_start[r.start] = by_start.get(r.start, 0.0) + r.measured
    tot = np.array(list(by_start.values()))
    assert np.all(tot <= 1 + 1e-10) and np.all(tot > 0.98)


def test_factorization_rows_sum_to_one():
    env = sample_environment(derive_params(12, 0.25, 0.5, 1.6), 4)
    _, top = rank_top(env, 2, 2)
    rows = entrance_factorization(env, top)
    assert len(rows) == 4
    assert sum(r.measured for r in rows) == pytest.approx(1.0, abs=1e-8)
    assert sum(r.predicted for r in rows) == pytest.approx(1.0)
