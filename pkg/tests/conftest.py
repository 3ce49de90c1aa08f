import numpy as np
import pytest

from zipscan.regions import CaseData, RegionMap


def random_instance(rng, k_min=3, k_max=10, max_count=5, zero_rate=0.3, with_d=True,
                    integer_pop=True):
    """Small random map with counts and (optionally) structural zeros."""
    k = int(rng.integers(k_min, k_max + 1))
    x = rng.uniform(0, 10, k)
    y = rng.uniform(0, 10, k)
    if integer_pop:
        pop = rng.integers(50, 500, k).astype(float)
    else:
        pop = rng.uniform(50, 500, k)
    counts = rng.integers(0, max_count + 1, k)
    d = None
    if with_d:
        d = (rng.random(k) < zero_rate).astype(int)
        d[np.argmax(counts)] = 0
        counts = np.where(d == 1, 0, counts)
    if counts.sum() == 0:
        counts[np.argmax(pop)] = 1
        if d is not None:
            d[np.argmax(pop)] = 0
    m = RegionMap(tuple(f"r{i}" for i in range(k)), x, y, pop)
    return m, CaseData(counts, d)


@pytest.fixture
def rng():
    return np.random.default_rng(20240517)


def line_map(xs, pops=None):
    xs = np.asarray(xs, dtype=float)
    pops = np.ones_like(xs) if pops is None else np.asarray(pops, dtype=float)
    return RegionMap(tuple(str(i) for i in range(len(xs))), xs, np.zeros_like(xs), pops)
