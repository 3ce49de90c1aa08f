"""Hex-map simulation studies: scenarios, risk calibration, power and type I error."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .detector import METHODS, ScanConfig, Scanner, Zone
from .inference import (ALT_STREAM, MAP_STREAM, NULL_STREAM, TYPE_I_STREAM,
                        critical_value, parallel_map, replica_statistics, stream)
from .regions import CaseData, InputError, RegionMap

HEX_ROWS = 14
HEX_PITCH = 1.0
HEX_POPULATION = 1000.0
JITTER_FRACTION = 0.05
DEFAULT_CASES = 507
DEFAULT_ZEROS = 15
BUILTIN_SCENARIOS = ("A0", "A", "B", "C", "D", "A1", "A2", "A3", "A4")


def hex_cell_id(row: int, col: int) -> str:
    return f"h{row:02d}{col:02d}"


def build_hex_map(seed: int | None = 0, jitter: float = JITTER_FRACTION) -> RegionMap:
    """203 hexagonal cells of population 1000 with jittered centroids.

    Rows alternate 15 and 14 cells; odd rows are shifted half a pitch.
    ``jitter`` is the maximum uniform displacement per coordinate as a
    fraction of the pitch; ``seed=None`` or ``jitter=0`` gives the exact lattice.
    """
    ids, xs, ys = [], [], []
    for r in range(HEX_ROWS):
        for c in range(15 if r % 2 == 0 else 14):
            ids.append(hex_cell_id(r, c))
            xs.append((c + (0.5 if r % 2 else 0.0)) * HEX_PITCH)
            ys.append(r * HEX_PITCH * math.sqrt(3) / 2)
    x, y = np.array(xs), np.array(ys)
    if seed is not None and jitter > 0:
        rng = stream(seed, MAP_STREAM, 0)
        amp = jitter * HEX_PITCH
        x = x + rng.uniform(-amp, amp, x.size)
        y = y + rng.uniform(-amp, amp, y.size)
    return RegionMap(tuple(ids), x, y, np.full(len(ids), HEX_POPULATION))


@dataclass(frozen=True)
class Scenario:
    name: str
    true_cluster: tuple[int, ...]
    structural_zeros: tuple[int, ...]
    relative_risks: np.ndarray = field(repr=False)
    total_cases: int = DEFAULT_CASES
    target_power: float = 0.999

    def zero_mask(self, k: int) -> np.ndarray:
        d = np.zeros(k, dtype=np.int8)
        d[list(self.structural_zeros)] = 1
        return d


# -- risk calibration ---------------------------------------------------------

def _binomial_critical(M: int, pi0: float, level: float) -> int:
    """Smallest c with P(X >= c) <= level for X ~ Binomial(M, pi0)."""
    c = int(stats.binom.isf(level, M, pi0)) + 1
    while c > 0 and stats.binom.sf(c - 2, M, pi0) <= level:
        c -= 1
    while stats.binom.sf(c - 1, M, pi0) > level:
        c += 1
    return c


def binomial_test_power(r: float, share: float, M: int, level: float = 0.05) -> float:
    c = _binomial_critical(M, share, level)
    pi = r * share / (r * share + 1 - share)
    return float(stats.binom.sf(c - 1, M, pi))


def calibrate_risks(region_map: RegionMap, true_cluster: Iterable[int], M: int,
                    target_power: float = 0.999, level: float = 0.05,
                    r_max: float = 1e6, structural_zeros: Iterable[int] = ()) -> np.ndarray:
    """Relative risks: ``r`` inside the cluster, 1 elsewhere.

    ``r`` is the smallest elevation for which an exact one-sided binomial
    test of the in-cluster case count (given ``M`` cases) rejects with
    probability at least ``target_power``. Structural-zero regions cannot
    receive cases, so their population is left out of both the cluster
    share and the map total.
    """
    cluster = sorted(set(int(i) for i in true_cluster))
    if not cluster:
        raise ValueError("true_cluster must be nonempty")
    if M <= 0:
        raise ValueError("M must be positive")
    pop = region_map.population.copy()
    pop[list(structural_zeros)] = 0.0
    if pop[cluster].sum() <= 0:
        raise ValueError("every cluster region is a structural zero")
    share = float(pop[cluster].sum() / pop.sum())
    if share >= 1:
        raise ValueError("the cluster holds all the observable population")
    if binomial_test_power(1.0, share, M, level) >= target_power:
        r = 1.0
    else:
        if binomial_test_power(r_max, share, M, level) < target_power:
            raise ValueError(f"target power {target_power} unreachable with r <= {r_max:g}")
        lo, hi = 1.0, 2.0
        while binomial_test_power(hi, share, M, level) < target_power:
            lo, hi = hi, min(hi * 2, r_max)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if binomial_test_power(mid, share, M, level) >= target_power:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-10 * hi:
                break
        r = hi
    risks = np.ones(region_map.k)
    risks[cluster] = r
    return risks


# -- scenarios ---------------------------------------------------------------

def scenario_from_dict(doc: dict, region_map: RegionMap) -> Scenario:
    try:
        cluster = tuple(sorted(region_map.index_of(i) for i in doc["true_cluster"]))
        zeros = tuple(sorted(region_map.index_of(i) for i in doc["structural_zeros"]))
        M = int(doc.get("total_cases", DEFAULT_CASES))
        target = float(doc.get("target_power", 0.999))
        name = str(doc.get("name", "custom"))
    except KeyError as exc:
        raise InputError(f"scenario is missing field {exc}") from None
    risks = _cached_risks(region_map, cluster, zeros, M, target)
    return Scenario(name, cluster, zeros, risks, M, target)


@lru_cache(maxsize=64)
def _cached_risks_key(pop_key: bytes, k: int, cluster: tuple[int, ...], zeros: tuple[int, ...],
                      M: int, target: float) -> np.ndarray:
    pop = np.frombuffer(pop_key, dtype=float)
    m = RegionMap(tuple(str(i) for i in range(k)), np.arange(k), np.zeros(k), pop)
    risks = calibrate_risks(m, cluster, M, target, structural_zeros=zeros)
    risks.setflags(write=False)
    return risks


def _cached_risks(region_map, cluster, zeros, M, target):
    return _cached_risks_key(region_map.population.tobytes(), region_map.k, cluster, zeros,
                             M, target)


def load_scenario(name_or_path: str | Path, region_map: RegionMap | None = None) -> Scenario:
    """A built-in scenario by name, or a scenario JSON file."""
    region_map = region_map or build_hex_map()
    if str(name_or_path) in BUILTIN_SCENARIOS:
        text = resources.files("zipscan.scenarios").joinpath(f"{name_or_path}.json").read_text()
    else:
        path = Path(name_or_path)
        if not path.is_file():
            raise InputError(f"unknown scenario {str(name_or_path)!r}; built-ins are "
                             + ", ".join(BUILTIN_SCENARIOS))
        text = path.read_text(encoding="utf-8")
    return scenario_from_dict(json.loads(text), region_map)


# -- case generation -----------------------------------------------------------

def draw_cases(region_map: RegionMap, scenario: Scenario, rng: np.random.Generator) -> CaseData:
    """Multinomial cases restricted to the non-structural-zero regions."""
    d = scenario.zero_mask(region_map.k)
    w = region_map.population * scenario.relative_risks * (1 - d)
    counts = rng.multinomial(scenario.total_cases, w / w.sum())
    return CaseData(counts, d)


def draw_cases_rejection(region_map: RegionMap, scenario: Scenario,
                         rng: np.random.Generator) -> CaseData:
    """Place cases one at a time over the whole map, redrawing any that land on a structural zero."""
    d = scenario.zero_mask(region_map.k)
    w = region_map.population * scenario.relative_risks
    probs = w / w.sum()
    counts = np.zeros(region_map.k, dtype=np.int64)
    remaining = scenario.total_cases
    while remaining:
        cells = rng.choice(region_map.k, size=remaining, p=probs)
        kept = cells[d[cells] == 0]
        np.add.at(counts, kept, 1)
        remaining -= kept.size
    return CaseData(counts, d)


def draw_null_with_zeros(region_map: RegionMap, n_zeros: int, M: int,
                         rng: np.random.Generator) -> CaseData:
    """Constant-risk cases with exactly ``n_zeros`` randomly placed structural zeros."""
    d = np.zeros(region_map.k, dtype=np.int8)
    d[rng.choice(region_map.k, size=n_zeros, replace=False)] = 1
    w = region_map.population * (1 - d)
    return CaseData(rng.multinomial(M, w / w.sum()), d)


# -- metrics -------------------------------------------------------------------

def sensitivity_ppv(detected: Zone | Iterable[int], true_cluster: Iterable[int],
                    region_map: RegionMap) -> tuple[float, float]:
    det = set(detected.members if isinstance(detected, Zone) else detected)
    if not det:
        raise ValueError("detected zone is empty")
    true = set(true_cluster)
    pop = region_map.population
    inter = float(pop[list(det & true)].sum()) if det & true else 0.0
    pop_true = float(pop[list(true)].sum())
    pop_det = float(pop[list(det)].sum())
    return (inter / pop_true if pop_true > 0 else 0.0,
            inter / pop_det if pop_det > 0 else 0.0)


@dataclass
class StudyReport:
    scenario: str
    method: str
    power: float
    sensitivity: float
    ppv: float
    N: int
    B: int
    seed: int
    alpha: float
    log_lambda_star: float
    log_lambdas: np.ndarray = field(repr=False)

    def row(self) -> dict:
        return {"scenario": self.scenario, "method": self.method, "power": self.power,
                "sensitivity": self.sensitivity, "ppv": self.ppv, "N": self.N,
                "B": self.B, "seed": self.seed}


@dataclass
class TypeIReport:
    method: str
    rejection_rate: float
    N: int
    B: int
    seed: int
    alpha: float
    log_lambda_star: float
    log_lambdas: np.ndarray = field(repr=False)

    def row(self) -> dict:
        return {"method": self.method, "rejection_rate": self.rejection_rate,
                "N": self.N, "B": self.B, "seed": self.seed, "alpha": self.alpha}


def _check_sizes(N: int, B: int) -> None:
    if N < 1:
        raise ValueError("N must be at least 1")
    if B < 19:
        raise ValueError("B must be at least 19")


def _scored(data: CaseData, method: str) -> CaseData:
    return data if method == "zip" else data.without_structural_zeros()


def _null_p(method: str, n_zeros: int, k: int) -> float:
    return 0.0 if method == "poisson" else n_zeros / k


def compare_methods(scenario: Scenario | str, methods: Sequence[str] = METHODS, N: int = 1000,
                    B: int = 999, seed: int = 1, alpha: float = 0.05,
                    region_map: RegionMap | None = None, scan_config: ScanConfig | None = None,
                    workers: int | None = None) -> dict[str, StudyReport]:
    """Power, sensitivity and PPV of several methods on identical case draws.

    The critical value of each method comes from ``B`` null replicas with
    the scenario's structural-zero rate (none for the Poisson scan). Draw
    ``i`` under the alternative uses the stream ``(seed, i)`` whatever the
    method, so all methods see the same data.
    """
    _check_sizes(N, B)
    region_map = region_map or build_hex_map()
    if isinstance(scenario, str):
        scenario = load_scenario(scenario, region_map)
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    scanner = Scanner(region_map, scan_config)
    theta0 = scenario.total_cases / region_map.total_population
    n_zeros = len(scenario.structural_zeros)

    draws = [draw_cases(region_map, scenario, stream(seed, ALT_STREAM, i)) for i in range(N)]
    reports = {}
    for method in methods:
        null = replica_statistics(scanner, method, _null_p(method, n_zeros, region_map.k),
                                  theta0, scenario.total_cases, B, seed, workers, NULL_STREAM)
        crit = critical_value(null.log_lambdas, alpha)

        def one(i: int, method=method):
            out = scanner.scan(_scored(draws[i], method), method)
            sens, ppv = sensitivity_ppv(out.best_zone, scenario.true_cluster, region_map)
            return out.log_lambda, sens, ppv

        res = parallel_map(one, N, workers)
        lam = np.array([r[0] for r in res])
        reports[method] = StudyReport(
            scenario.name, method, float(np.mean(lam > crit)),
            float(np.mean([r[1] for r in res])), float(np.mean([r[2] for r in res])),
            N, B, int(seed), alpha, crit, lam)
    return reports


def power_study(scenario: Scenario | str, method: str, N: int = 1000, B: int = 999,
                seed: int = 1, **kwargs) -> StudyReport:
    return compare_methods(scenario, (method,), N, B, seed, **kwargs)[method]


def compare_type_i(methods: Sequence[str] = METHODS, N: int = 1000, B: int = 999,
                   seed: int = 1, alpha: float = 0.05, n_zeros: int = DEFAULT_ZEROS,
                   M: int = DEFAULT_CASES, region_map: RegionMap | None = None,
                   scan_config: ScanConfig | None = None,
                   workers: int | None = None) -> dict[str, TypeIReport]:
    """Rejection rates on constant-risk maps with ``n_zeros`` structural zeros each."""
    _check_sizes(N, B)
    region_map = region_map or build_hex_map()
    scanner = Scanner(region_map, scan_config)
    theta0 = M / region_map.total_population
    draws = [draw_null_with_zeros(region_map, n_zeros, M, stream(seed, TYPE_I_STREAM, i))
             for i in range(N)]
    reports = {}
    for method in methods:
        if method not in METHODS:
            raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
        null = replica_statistics(scanner, method, _null_p(method, n_zeros, region_map.k),
                                  theta0, M, B, seed, workers, NULL_STREAM)
        crit = critical_value(null.log_lambdas, alpha)
        lam = np.array(parallel_map(
            lambda i, method=method: scanner.scan_statistic(_scored(draws[i], method), method),
            N, workers))
        reports[method] = TypeIReport(method, float(np.mean(lam > crit)), N, B, int(seed),
                                      alpha, crit, lam)
    return reports


def type_i_study(method: str, N: int = 1000, B: int = 999, seed: int = 1,
                 **kwargs) -> TypeIReport:
    return compare_type_i((method,), N, B, seed, **kwargs)[method]
