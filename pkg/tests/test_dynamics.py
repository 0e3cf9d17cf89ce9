import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gremlab.dynamics import (HittingQuery, balance_report, distance_chain_projection, gibbs_measures,
                              hitting_vector, jump_kernel, lump_partition, mc_hitting_probability, q_star,
                              simple_walk, simulate_rhd)
from gremlab.environment import derive_params, sample_environment
from gremlab.rng import derive_stream


def _env(N=8, seed=1, p=0.25, a=0.5, beta=2.0):
    return sample_environment(derive_params(N, p, a, beta), seed)


@pytest.mark.parametrize("N", [3, 6, 10])
def test_balance_and_rows(N):
    rep = balance_report(_env(N, p=0.4, a=0.6))
    assert rep.rhd_balance < 1e-12 and rep.chain_balance < 1e-12 and rep.row_sum < 1e-12
    assert rep.edges == N * (1 << N) // 2


def test_kernel_only_hamming_neighbours():
    env = _env(6)
    P = jump_kernel(env).tocoo()
    assert np.all(np.bitwise_count((P.row ^ P.col).astype(np.uint64)) == 1)
    qs = q_star(env)
    assert np.all((qs > 0) & (qs <= 1))


def test_gibbs_normalised():
    g1, g2 = gibbs_measures(_env(8))
    assert g1.sum() == pytest.approx(1.0) and g2.sum() == pytest.approx(1.0)


def test_pcg_matches_dense():
    env = _env(13, seed=4, p=0.3)
    tgt, avoid = [5], [100, 2000]
    a = hitting_vector(env, tgt, avoid)
    b = hitting_vector(env, tgt, avoid, dense_below=13)
    assert a.method == "pcg-cylinder" and b.method == "dense"
    np.testing.assert_allclose(a.h, b.h, atol=1e-8)


def test_hitting_against_monte_carlo():
    env = _env(6, seed=2)
    q = HittingQuery.make([3], [60], start=20)
    exact = hitting_vector(env, q.target, q.avoid).h[20]
    mc = mc_hitting_probability(env, q, 4000, derive_stream(0, "test.mc"))
    assert abs(mc.estimate - exact) < 4 * mc.stderr + 1e-3


def test_rhd_hits_target_and_respects_horizon():
    env = _env(6, seed=3)
    tr = simulate_rhd(env, 0, derive_stream(0, "test.rhd"), hit_set=[63])
    assert int(tr.states[-1]) == 63
    tr = simulate_rhd(env, 0, derive_stream(1, "test.rhd"), horizon=0.5)
    assert tr.holds.sum() == pytest.approx(0.5)


@given(st.integers(1, 40), st.integers(0, 2 ** 20))
@settings(max_examples=40, deadline=None)
def test_walk_distance_moves_by_one(steps, seed):
    w = simple_walk(10, 0, steps, derive_stream(seed, "test.walk"))
    d = distance_chain_projection(w, 0)
    assert d[0] == 0 and np.all(np.abs(np.diff(d)) == 1)


def test_lump_partition():
    lp = lump_partition([0b0011, 0b0101], 4)
    np.testing.assert_array_equal(lp.labels, [3, 1, 2, 0])
    np.testing.assert_array_equal(lp.sizes, [1, 1, 1, 1])
    np.testing.assert_allclose(lp.magnetization(0b0011), [-1, 1, -1, 1])
