import math

import numpy as np
import pytest
from scipy import stats

from gremlab.aging import (AgingModel, AgingQuery, check_intermediate_beta, clock_samples, estimate_pi,
                           f3_intensity, intermediate_lln, kanter_stable, sample_replica, synthetic_control,
                           tail_hit_rate, tail_index)
from gremlab.environment import ABOVE_FT, AT_FT, BELOW_FT, INTERMEDIATE, ParameterError
from gremlab.rng import derive_stream

A1, A2, P = 2 / 9, 2 / 3, 0.1


def test_model_validation():
    with pytest.raises(ValueError):
        AgingModel("nope", A1, A2, P)
    with pytest.raises(ValueError):
        AgingModel(ABOVE_FT, A2, A1, P)
    with pytest.raises(ValueError):
        AgingQuery(1e-3, 1.0, 10, ABOVE_FT)
    assert AgingModel(INTERMEDIATE, A1, A2, P).weights == (1.0, 1.0, 0.0)
    assert AgingModel(AT_FT, A1, A2, P).weights == (1.0, P, 1 - P)


def test_kanter_laplace_transform():
    x = kanter_stable(0.6, 200000, derive_stream(0, "test.kanter"))
    for lam in (0.5, 1.0, 2.0):
        assert np.mean(np.exp(-lam * x)) == pytest.approx(math.exp(-lam ** 0.6), abs=4e-3)


def test_tail_index_on_pareto():
    x = stats.pareto.rvs(0.7, size=100000, random_state=np.random.default_rng(1))
    assert tail_index(x, method="hill").index == pytest.approx(0.7, abs=0.03)
    assert tail_index(x).index == pytest.approx(0.7, abs=0.04)
    assert tail_index(np.ones(5)).degenerate


def test_synthetic_control_hill2():
    fit = synthetic_control(2 / 3, 200000, 12345)
    assert fit.index == pytest.approx(2 / 3, abs=0.03)


def test_f3_intensity_by_simulation():
    # E[(S/(1-p))^alpha1] for S with Laplace transform exp(-Gamma(1-a2) lam^a2)
    rng = derive_stream(2, "test.f3")
    s = kanter_stable(A2, 400000, rng) * math.gamma(1 - A2) ** (1 / A2)
    assert np.mean((s / (1 - P)) ** A1) == pytest.approx(f3_intensity(A1, A2, P), rel=0.01)


def test_tail_hit_rate_limits():
    # with y large the truncation keeps nothing: full rate alpha a^-alpha Gamma(alpha)
    full = A2 * 2.0 ** -A2 * math.gamma(A2)
    assert tail_hit_rate([1.0], [1e12], A2, 2.0) == pytest.approx(full, rel=1e-6)
    assert tail_hit_rate([1.0], [1e-6], A2, 2.0) < 1e-100


@pytest.mark.parametrize("regime", [ABOVE_FT, AT_FT, BELOW_FT, INTERMEDIATE])
def test_replica_clock_nondecreasing(regime):
    m = AgingModel(regime, A1, A2, P, K1=16, K2=128)
    rc = sample_replica(m, derive_stream(3, "test.replica"), 0.5)
    pairs = [(rc.left1, rc.right1)] + ([(rc.left2, rc.right2)] if rc.left2 is not None else [])
    for left, right in pairs:
        assert np.all(np.diff(right) >= 0) and np.all(right >= left)
    assert rc.right1[-1] >= 0.5


@pytest.mark.parametrize("regime", [ABOVE_FT, BELOW_FT])
def test_estimate_pi_near_prediction(regime):
    m = AgingModel(regime, A1, A2, P, K1=64, K2=512)
    q = AgingQuery(1e-2, 1.0, 2000, regime)
    est = estimate_pi(m, q, seed=5)
    assert 0 <= est.value <= 1
    assert abs(est.value - m.prediction(1.0)) < 4 * est.stderr + 0.03


def test_clock_samples_scale():
    m = AgingModel(AT_FT, A1, A2, P, K1=16, K2=256)
    x = clock_samples(m, "gamma_prime", 1e-2, 1.0, 2000, seed=1)
    assert x.shape == (2000,) and np.all(x >= 0)
    with pytest.raises(ValueError):
        clock_samples(m, "nope", 1e-2, 1.0, 10, seed=1)


def test_intermediate_beta_guard():
    check_intermediate_beta(0.1, 0.5, 0.8)
    with pytest.raises(ParameterError, match="beta_int"):
        check_intermediate_beta(0.1, 0.5, 1.2)
    with pytest.raises(ParameterError, match="beta1_cr"):
        check_intermediate_beta(0.1, 0.5, 0.3)


def test_intermediate_lln_small():
    rows = intermediate_lln(14, 0.1, 0.5, 0.8, [1.0], 4, 512, seed=3)
    assert rows[0].steps >= 1 and abs(rows[0].scaled_sum - 1.0) < 0.5


def test_estimate_independent_of_workers():
    from gremlab.aging import estimate_pi_cells
    m = AgingModel(ABOVE_FT, A1, A2, P, K1=16, K2=128)
    a = estimate_pi_cells(m, [(1e-2, 1.0)], 600, seed=3, workers=1)
    b = estimate_pi_cells(m, [(1e-2, 1.0)], 600, seed=3, workers=2)
    assert a[0].value == b[0].value
