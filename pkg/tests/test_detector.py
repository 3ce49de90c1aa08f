import math

import numpy as np
import pytest

from zipscan.detector import ScanConfig, Scanner, scan_poisson, scan_zip, scan_zip_em
from zipscan.em import DegenerateDataError, EmConfig, em_fit
from zipscan.likelihood import aggregates, complete_loglik, log_poisson_llr
from zipscan.regions import CaseData, InputError, RegionMap

from conftest import line_map, random_instance
from oracles import brute_zone_list, power_form_log_ratio, scripted_em


def oracle_scores(region_map, data, method, zones):
    """Per-zone log ratios computed without the compiled kernels."""
    x = data.counts.astype(float)
    n = region_map.population
    if method == "zip":
        w = 1 - data.structural_zero
        x, n = x * w, n * w
    out = []
    for members, _ in zones:
        inside = np.zeros(region_map.k, bool)
        inside[list(members)] = True
        if method == "zip-em":
            delta, (xi, ni, xo, no) = scripted_em(data.counts, region_map.population, inside)
        else:
            xi, ni, xo, no = x[inside].sum(), n[inside].sum(), x[~inside].sum(), n[~inside].sum()
        out.append(power_form_log_ratio(xi, ni, xo, no) if ni > 0 and no > 0 else 0.0)
    return np.array(out)


def assert_matches_brute_force(region_map, data, method, atol):
    zones = brute_zone_list(region_map)
    scored = data if method == "zip" else data.without_structural_zeros()
    scores = oracle_scores(region_map, scored, method, zones)
    outcome = Scanner(region_map).scan(scored, method)
    top = scores.max()
    assert outcome.log_lambda == pytest.approx(top, abs=atol, rel=1e-9)
    keys = [(-s, len(m), c) for s, (m, c) in zip(scores, zones)]
    order = sorted(range(len(zones)), key=lambda i: keys[i])
    best = zones[order[0]]
    runner_up = scores[order[1]] if len(order) > 1 else -np.inf
    if top - runner_up > 10 * atol or runner_up == top:
        assert set(outcome.best_zone.members) == set(best[0])
    return outcome


def test_concentrated_cases_pick_singleton():
    m = line_map(range(6), [100] * 6)
    out = scan_poisson(m, CaseData([0, 0, 0, 12, 0, 0]))
    assert out.best_zone.members == (3,)
    assert out.lambda_obs > 1


def test_uniform_cases_give_lambda_one():
    m = line_map(range(5), [100, 200, 100, 300, 100])
    out = scan_poisson(m, CaseData([1, 2, 1, 3, 1]))
    assert out.log_lambda == 0.0 and out.lambda_obs == 1.0
    assert out.best_zone.members == (0,)


def test_zero_cases_rejected():
    m = line_map(range(3))
    for scan in (scan_poisson, scan_zip_em):
        with pytest.raises(DegenerateDataError):
            scan(m, CaseData([0, 0, 0], [0, 0, 0]))


def test_zip_needs_indicators():
    with pytest.raises(InputError):
        scan_zip(line_map(range(3)), CaseData([1, 0, 2]))


@pytest.mark.parametrize("method", ["poisson", "zip", "zip-em"])
def test_brute_force_small_maps(rng, method):
    atol = 1e-7 if method == "zip-em" else 1e-10
    for _ in range(15):
        m, data = random_instance(rng, 3, 10)
        assert_matches_brute_force(m, data, method, atol)


def test_zip_scan_with_one_structural_zero(rng):
    m, data = random_instance(rng, 6, 6, with_d=False)
    counts = data.counts.copy()
    counts[2] = 0
    d = np.zeros(6, int)
    d[2] = 1
    out = assert_matches_brute_force(m, CaseData(counts, d), "zip", 1e-10)
    assert 2 not in out.best_zone.members or len(out.best_zone) > 1


def test_zip_without_zeros_equals_poisson(rng):
    for _ in range(10):
        m, data = random_instance(rng, 3, 10, with_d=False)
        a = scan_poisson(m, data)
        b = scan_zip(m, CaseData(data.counts, np.zeros(m.k, int)))
        assert a.best_zone == b.best_zone
        assert a.log_lambda == b.log_lambda


def test_zip_em_without_zero_counts_equals_poisson(rng):
    for _ in range(10):
        m, _ = random_instance(rng, 3, 10, with_d=False)
        data = CaseData(rng.integers(1, 8, m.k))
        a = scan_poisson(m, data)
        b = scan_zip_em(m, data)
        assert a.best_zone == b.best_zone
        assert b.log_lambda == pytest.approx(a.log_lambda, abs=1e-12)
        assert b.fit.p_hat == 0


def test_structural_zero_population_is_ignored():
    # a line of structural zeros through the middle of a cluster
    m = RegionMap(tuple("abcdefgh"), np.arange(8.0), np.zeros(8), np.full(8, 100.0))
    counts = np.array([1, 6, 0, 7, 1, 2, 1, 1])
    d = np.array([0, 0, 1, 0, 0, 0, 0, 0])
    base = scan_zip(m, CaseData(counts, d))
    pops = m.population.copy()
    pops[2] = 5_000.0
    heavy = Scanner(RegionMap(m.ids, m.x, m.y, pops), zones=Scanner(m).zones)
    other = heavy.scan(CaseData(counts, d), "zip")
    assert other.log_lambda == base.log_lambda
    assert other.best_zone.members == base.best_zone.members


def co_located_instance(rng):
    """Map whose structural zeros sit on top of ordinary regions with zero population.

    Removing them leaves every circular zone of the reduced map intact, so
    the known-zero scan must equal the Poisson scan of the reduced map.
    """
    base, data = random_instance(rng, 4, 9, with_d=False)
    hosts = rng.choice(base.k, size=int(rng.integers(1, 4)), replace=False)
    k = base.k + len(hosts)
    x = np.concatenate([base.x, base.x[hosts]])
    y = np.concatenate([base.y, base.y[hosts]])
    pop = np.concatenate([base.population, np.zeros(len(hosts))])
    counts = np.concatenate([data.counts, np.zeros(len(hosts), int)])
    d = np.concatenate([np.zeros(base.k, int), np.ones(len(hosts), int)])
    full = RegionMap(tuple(f"r{i}" for i in range(k)), x, y, pop)
    return full, CaseData(counts, d), base, data


def test_reduction_to_poisson_on_reduced_map(rng):
    for _ in range(20):
        full, data, reduced, reduced_data = co_located_instance(rng)
        zipped = scan_zip(full, data)
        pois = scan_poisson(reduced, reduced_data)
        assert zipped.log_lambda == pytest.approx(pois.log_lambda, rel=1e-12, abs=1e-12)
        real = {i for i in zipped.best_zone.members if i < reduced.k}
        if zipped.log_lambda > 0:
            lam = log_poisson_llr(aggregates(reduced, reduced_data, sorted(real)))
            assert lam == pytest.approx(pois.log_lambda, rel=1e-12)


def test_pointwise_reduction(rng):
    m, data = random_instance(rng, 6, 10)
    scanner = Scanner(m)
    zip_scores, _ = scanner.zone_scores(data, "zip")
    keep = np.flatnonzero(data.structural_zero == 0)
    for z in range(len(scanner.zones)):
        members = [i for i in scanner.zones.members(z) if data.structural_zero[i] == 0]
        if not members or len(members) == len(keep):
            assert zip_scores[z] == 0
            continue
        inside = np.isin(keep, members)
        xr, nr = data.counts[keep], m.population[keep]
        ref = power_form_log_ratio(xr[inside].sum(), nr[inside].sum(),
                                  xr[~inside].sum(), nr[~inside].sum())
        assert zip_scores[z] == pytest.approx(ref, rel=1e-10, abs=1e-12)


def move_case_into_zone(rng, data, zone, d):
    """Shift one case from an eligible region outside the zone to one inside."""
    inside = np.zeros(len(data.counts), bool)
    inside[list(zone)] = True
    ok = d == 0
    src = np.flatnonzero(~inside & ok & (data.counts > 0))
    dst = np.flatnonzero(inside & ok)
    if not len(src) or not len(dst):
        return None
    counts = data.counts.copy()
    counts[rng.choice(src)] -= 1
    counts[rng.choice(dst)] += 1
    return CaseData(counts, data.structural_zero)


@pytest.mark.parametrize("method", ["poisson", "zip"])
def test_moving_cases_into_cluster_never_lowers_statistic(rng, method):
    checked = 0
    while checked < 40:
        m, data = random_instance(rng, 4, 10)
        if method == "poisson":
            data = data.without_structural_zeros()
        scanner = Scanner(m)
        out = scanner.scan(data, method)
        if out.log_lambda <= 0:
            continue
        d = np.zeros(m.k, int) if data.structural_zero is None else data.structural_zero
        moved = move_case_into_zone(rng, data, out.best_zone.members, d)
        if moved is None:
            continue
        assert scanner.scan_statistic(moved, method) >= out.log_lambda - 1e-12
        checked += 1


def test_em_separate_null_mode(rng):
    cfg = ScanConfig(em_null="separate")
    for _ in range(5):
        m, data = random_instance(rng, 4, 8, with_d=False, max_count=3)
        data = data.without_structural_zeros()
        scanner = Scanner(m, cfg)
        scores, _ = scanner.zone_scores(data, "zip-em")
        assert np.all(scores >= 0)
        null = em_fit(m, data, None, EmConfig())
        l0 = complete_loglik(m, data, null.fit.delta_hat, None, null.fit.p_hat,
                             null.fit.theta0_hat)
        for z in range(len(scanner.zones)):
            members = scanner.zones.members(z)
            alt = em_fit(m, data, members, EmConfig())
            f = alt.fit
            agg = aggregates(m, data, members, f.delta_hat)
            if agg.n_in <= 0 or agg.n_out <= 0 or agg.x_in * agg.n_out <= agg.x_out * agg.n_in:
                assert scores[z] == 0
                continue
            la = complete_loglik(m, data, f.delta_hat, members, f.p_hat, f.theta0_hat,
                                 f.thetaZ_hat)
            assert scores[z] == pytest.approx(max(la - l0, 0.0), abs=1e-7)


def test_em_modes_agree_without_zero_counts(rng):
    m, _ = random_instance(rng, 5, 8, with_d=False)
    data = CaseData(rng.integers(1, 6, m.k))
    a = Scanner(m, ScanConfig(em_null="per-zone")).scan(data, "zip-em")
    b = Scanner(m, ScanConfig(em_null="separate")).scan(data, "zip-em")
    assert a.best_zone == b.best_zone
    assert a.log_lambda == pytest.approx(b.log_lambda, abs=1e-9)


def test_kernel_em_matches_reference_em(rng):
    for _ in range(5):
        m, data = random_instance(rng, 5, 10, with_d=False, integer_pop=False)
        data = data.without_structural_zeros()
        scanner = Scanner(m)
        scores, diag = scanner.zone_scores(data, "zip-em")
        stalled = 0
        for z in range(len(scanner.zones)):
            members = scanner.zones.members(z)
            res = em_fit(m, data, members)
            stalled += not res.converged
            fit = res.fit
            agg = aggregates(m, data, members, fit.delta_hat)
            ref = log_poisson_llr(agg) if agg.n_in > 0 and agg.n_out > 0 else 0.0
            assert scores[z] == pytest.approx(ref, abs=1e-7)
        assert diag["em_nonconverged_zones"] == stalled


def test_determinism(rng):
    m, data = random_instance(rng, 8, 10)
    for method in ("poisson", "zip", "zip-em"):
        a = Scanner(m).scan(data, method)
        b = Scanner(m).scan(data, method)
        assert a.best_zone == b.best_zone and a.log_lambda == b.log_lambda


def test_large_map_ties_prefer_small_zones():
    m = line_map(range(10), [10] * 10)
    # two identical hot spots; the lower center wins
    out = scan_poisson(m, CaseData([0, 5, 0, 0, 0, 0, 0, 0, 5, 0]))
    assert out.best_zone.members == (1,)
    assert math.isfinite(out.lambda_obs)
