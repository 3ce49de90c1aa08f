import math

import numpy as np
import pytest
from scipy import optimize

from zipscan.em import DegenerateDataError, EmConfig, e_step, em_fit
from zipscan.likelihood import incomplete_loglik, zip_mle_null
from zipscan.regions import CaseData

from conftest import line_map, random_instance


def test_e_step_positive_counts_are_zero():
    m = line_map(range(4), [10, 20, 30, 40])
    delta = e_step(m, CaseData([1, 0, 3, 0]), [0, 1], 0.4, 0.05, 0.1)
    assert delta[0] == 0 and delta[2] == 0
    assert 0 < delta[1] < 1 and 0 < delta[3] < 1


def test_e_step_zero_mean():
    m = line_map([0, 1], [5, 5])
    delta = e_step(m, CaseData([0, 2]), None, 0.5, 0.0)
    assert delta[0] == 0.5


def test_e_step_scalar_substitution():
    m = line_map([0, 1], [1, 1])
    delta = e_step(m, CaseData([0, 2]), None, 0.2, math.log(4))
    assert delta[0] == pytest.approx(0.5, rel=1e-12)


def test_e_step_uses_zone_rate():
    m = line_map(range(3), [10, 10, 10])
    data = CaseData([0, 0, 4])
    delta = e_step(m, data, [0], 0.3, 0.2, 0.0)
    assert delta[0] == pytest.approx(0.3)  # e^0 inside
    assert delta[1] == pytest.approx(0.3 / (0.3 + 0.7 * math.exp(-2.0)))


def test_no_zeros_converges_in_one_iteration(rng):
    m, _ = random_instance(rng, 4, 8, with_d=False)
    data = CaseData(rng.integers(1, 6, m.k))
    res = em_fit(m, data, [0, 1])
    assert res.converged and res.iterations == 1
    assert res.fit.p_hat == 0
    x, n = data.counts, m.population
    assert res.fit.thetaZ_hat == pytest.approx(x[:2].sum() / n[:2].sum())
    assert res.fit.theta0_hat == pytest.approx(x[2:].sum() / n[2:].sum())


def test_large_population_zero_is_structural():
    m = line_map(range(6), [100, 100, 100, 100, 100, 10_000])
    data = CaseData([5, 6, 4, 7, 5, 0])
    res = em_fit(m, data, None)
    assert res.converged
    assert res.fit.delta_hat[5] > 0.99


def test_two_region_fixed_point():
    m = line_map([0, 1], [100, 100])
    data = CaseData([0, 4])
    res = em_fit(m, data, None, EmConfig(tol=1e-13, max_iter=10_000))
    assert res.converged

    # nontrivial root of delta = p / (p + (1 - p) e^{-100 theta}) with
    # p = delta / 2 and theta = 4 / (100 (1 - delta) + 100)
    def h(d):
        return d / 2 + (1 - d / 2) * math.exp(-400 / (200 - 100 * d)) - 0.5

    root = optimize.brentq(h, 1e-9, 1 - 1e-12, xtol=1e-15)
    assert res.fit.delta_hat[0] == pytest.approx(root, rel=1e-8)
    assert res.fit.p_hat == pytest.approx(root / 2, rel=1e-8)
    assert res.fit.theta0_hat == pytest.approx(4 / (100 * (1 - root) + 100), rel=1e-8)


def test_all_zero_data_is_degenerate():
    with pytest.raises(DegenerateDataError):
        em_fit(line_map([0, 1]), CaseData([0, 0]))


def test_nonconvergence_is_reported():
    m = line_map(range(5), [100] * 5)
    data = CaseData([0, 0, 3, 1, 2])
    res = em_fit(m, data, [0], EmConfig(tol=1e-15, max_iter=2))
    assert res.iterations == 2 and not res.converged


def test_config_validation():
    with pytest.raises(ValueError):
        EmConfig(tol=0)
    with pytest.raises(ValueError):
        EmConfig(max_iter=0)


def test_deterministic(rng):
    m, data = random_instance(rng, 6, 9, with_d=False)
    a = em_fit(m, data, [0, 1, 2])
    b = em_fit(m, data, [0, 1, 2])
    assert a.fit.p_hat == b.fit.p_hat
    assert np.array_equal(a.fit.delta_hat, b.fit.delta_hat)
    assert a.iterations == b.iterations


def test_fit_matches_mstep_of_its_posteriors(rng):
    m, data = random_instance(rng, 6, 9, with_d=False)
    res = em_fit(m, data, None)
    th0, p = zip_mle_null(m, data, res.fit.delta_hat)
    assert res.fit.theta0_hat == pytest.approx(th0, rel=1e-12)
    assert res.fit.p_hat == pytest.approx(p, rel=1e-12)


def check_monotone(m, data, zone):
    res = em_fit(m, data, zone, trace=True)
    lls = [incomplete_loglik(m, data, zone, p, t0, tz) for p, t0, tz in res.trace]
    for a, b in zip(lls, lls[1:]):
        assert b >= a - 1e-9
    positive = data.counts > 0
    for delta in res.delta_trace:
        assert np.all((delta >= 0) & (delta <= 1))
        assert np.all(delta[positive] == 0)
    return res


def test_monotone_incomplete_likelihood(rng):
    for _ in range(30):
        m, data = random_instance(rng, 3, 10, with_d=False, max_count=4, integer_pop=False)
        zone = None if rng.random() < 0.3 else list(range(int(rng.integers(1, m.k))))
        check_monotone(m, data, zone)


def test_zero_initial_p_gives_poisson_fit(rng):
    m, data = random_instance(rng, 5, 8, with_d=False)
    data = CaseData(np.where(np.arange(m.k) % 2 == 0, 0, data.counts + 1))
    res = em_fit(m, data, [0, 1], EmConfig(init_p=0.0))
    assert res.iterations == 1 and res.converged
    assert res.fit.p_hat == 0 and not res.fit.delta_hat.any()
    x, n = data.counts, m.population
    assert res.fit.thetaZ_hat == pytest.approx(x[:2].sum() / n[:2].sum())
