import numpy as np
import pytest
from scipy import stats

from gremlab.environment import ABOVE_FT, AT_FT, BELOW_FT, sample_limit_cascade
from gremlab.kprocess import (K2Spec, KSpec, ProductSpec, build_limit_specs, occupation_tv,
                              restricted_sequence, restricted_transitions, simulate_k, simulate_k2,
                              simulate_product_limit, superposed_events)
from gremlab.rng import derive_stream


def test_kspec_validation():
    with pytest.raises(ValueError):
        KSpec(np.array([1.0, -1.0]), np.ones(2))
    with pytest.raises(ValueError):
        K2Spec(np.ones(2), np.ones((3, 2)))


def test_superposed_events_rates():
    t, lab = superposed_events(np.array([1.0, 3.0]), 2000.0, derive_stream(0, "test.sup"))
    assert np.all(np.diff(t) >= 0)
    counts = np.bincount(lab, minlength=2)
    assert counts[1] / counts.sum() == pytest.approx(0.75, abs=0.02)


def test_k_sojourn_exponential():
    spec = KSpec(np.array([2.0, 0.5, 1.0]), np.array([1.0, 1.0, 2.0]))
    path, clock = simulate_k(spec, 4000.0, derive_stream(1, "test.k"))
    m = clock.mass[clock.label == 0]
    assert stats.kstest(m / 2.0, "expon").pvalue > 0.01
    occ = path.occupation(3)
    assert occupation_tv(occ, spec.equilibrium()) < 0.03


def test_k2_equilibrium():
    spec = K2Spec(np.array([1.0, 0.5]), np.array([[1.0, 0.2], [0.5, 0.5]]))
    r = simulate_k2(spec, 3000.0, derive_stream(2, "test.k2"))
    assert occupation_tv(r.path.occupation(4), spec.equilibrium().ravel()) < 0.03
    # Gamma_1 jumps add up to the total of Gamma'
    assert r.clock1.mass.sum() == pytest.approx(r.clock.mass.sum())


def test_product_limit_equilibrium():
    spec = ProductSpec(np.array([1.0, 2.0]), np.array([[1.0, 3.0], [1.0, 1.0]]))
    rng = derive_stream(3, "test.prod")
    q = np.sort(rng.random(50000) * 5000.0)
    smp = simulate_product_limit(spec, q, rng)
    occ = np.bincount(smp.x1 * 2 + smp.x2, minlength=4) / q.size
    assert occupation_tv(occ, spec.equilibrium().ravel()) < 0.03
    with pytest.raises(ValueError):
        simulate_product_limit(spec, q[::-1], rng)


def test_limit_specs_share_equilibrium():
    cas = sample_limit_cascade(2 / 9, 2 / 3, 4, 5, seed=derive_stream(4, "test.cas"))
    target = (cas.gamma1[:, None] * cas.gamma2).ravel()
    target /= target.sum()
    for regime in (ABOVE_FT, AT_FT, BELOW_FT):
        spec = build_limit_specs(cas, 0.1, 1.0, regime)
        np.testing.assert_allclose(np.ravel(spec.equilibrium()), target, rtol=1e-12)


def test_restricted_sequence_relabels():
    K2 = 10
    states = np.array([0, 1, 11, 5, 10, 21, 0])
    np.testing.assert_array_equal(restricted_sequence(states, K2, 2, 2), [0, 1, 3, 2, 0])
    with pytest.raises(ValueError):
        restricted_transitions(states, K2, 2, 2, min_jumps=100)
