import math

import numpy as np
import pytest
from scipy import stats

from gremlab.environment import (BETA_STAR, ParameterError, critical_betas, derive_params, hamming,
                                 limit_alphas, load_environment, ppp_decreasing, ppp_tail_mean, rank_top,
                                 sample_environment, sample_limit_cascade, scaled_weights, u_scale,
                                 u_scale_inv)
from gremlab.rng import derive_stream


def test_derive_params_levels():
    pr = derive_params(16, 0.375, 0.5, 2.5)
    assert (pr.N1, pr.N2) == (6, 10)
    assert pr.n_states == 1 << 16


@pytest.mark.parametrize("args", [(2, 0.4, 0.6, 1.0), (10, 0.6, 0.5, 1.0), (10, 0.2, 0.5, -1.0), (1, 0.2, 0.5, 1.0)])
def test_derive_params_rejects(args):
    with pytest.raises(ParameterError):
        derive_params(*args)


def test_critical_betas_closed_form():
    cb = critical_betas(0.1, 0.5)
    assert cb.beta1_cr == pytest.approx(BETA_STAR * math.sqrt(0.2))
    assert cb.beta2_cr == pytest.approx(BETA_STAR * math.sqrt(1.8))
    assert cb.beta_ft == pytest.approx(BETA_STAR * 0.9 / (2 * math.sqrt(0.05)))
    a1, a2 = limit_alphas(0.1, 0.5, 2 * cb.beta2_cr)
    assert a2 == pytest.approx(0.5) and a1 < a2


def test_u_scale_roundtrip():
    x = np.linspace(-3, 5, 9)
    np.testing.assert_allclose(u_scale_inv(12, u_scale(12, x)), x, atol=1e-12)


def test_environment_reproducible(tmp_path):
    pr = derive_params(10, 0.3, 0.5, 2.0)
    env = sample_environment(pr, 99)
    env.save(tmp_path / "env.json")
    back = load_environment(tmp_path / "env.json")
    np.testing.assert_array_equal(env.xi1, back.xi1)
    np.testing.assert_array_equal(env.xi2, back.xi2)
    assert not env.xi2.flags.writeable


def test_rank_top_orders_fields():
    env = sample_environment(derive_params(12, 0.25, 0.5, 2.0), 3)
    ranked, top = rank_top(env, 2, 3)
    assert env.xi1[ranked.level1[0]] == env.xi1.max()
    rows = env.xi2_by_cylinder()
    for x1 in range(2):
        v = rows[top.top1[x1], top.top2[x1]]
        assert np.all(np.diff(v) <= 0)
        assert v[0] == rows[top.top1[x1]].max()
    st = top.states
    assert top.locate(int(st[1, 2])) == (1, 2)
    assert top.top_mask().sum() == 6 and top.wbar_mask().sum() == 2 << env.params.N2


def test_scaled_weights_consistent():
    env = sample_environment(derive_params(12, 0.25, 0.5, 2.0), 5)
    sw = scaled_weights(env)
    pr = env.params
    # gamma_1 is c_1 exp(beta sqrt(aN) xi1), equivalently exp(u^{-1}-rescaled field / alpha_1)
    expected = sw.log_c1N + pr.beta * math.sqrt(pr.a * pr.N) * env.xi1
    np.testing.assert_allclose(sw.log_gamma1, expected)
    y = u_scale_inv(pr.N1, env.xi1) / sw.alpha1N
    np.testing.assert_allclose(sw.log_gamma1, y, rtol=1e-10, atol=1e-10)


def test_ppp_maximum_law():
    # gamma(1)^(-alpha) is standard exponential
    pts = ppp_decreasing(0.4, (10000, 3), derive_stream(1, "test.ppp"))
    assert np.all(np.diff(pts, axis=1) <= 0)
    assert stats.kstest(pts[:, 0] ** -0.4, "expon").pvalue > 0.01


def test_ppp_tail_mean_matches_simulation():
    rng = derive_stream(2, "test.tail")
    pts = ppp_decreasing(0.5, (4000, 400), rng)
    below = pts[:, 40:].sum(axis=1)
    # the truncated sum is missing a tail; compare first 360 points against the integral on a window
    pred = ppp_tail_mean(0.5, pts[:, 39]) - ppp_tail_mean(0.5, pts[:, -1])
    assert below.mean() == pytest.approx(pred.mean(), rel=0.03)


def test_limit_cascade_shape():
    cas = sample_limit_cascade(2 / 9, 2 / 3, 5, 7, seed=derive_stream(0, "test.cascade"))
    assert cas.truncation == (5, 7)
    assert np.all(np.diff(cas.gamma1) < 0)
    rep = cas.tail_report()
    assert rep["K1"] == 5 and rep["gamma1_tail_mean"] > 0


def test_hamming():
    assert hamming(0b1011, 0b0001) == 2
