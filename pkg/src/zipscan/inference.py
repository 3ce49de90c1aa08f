"""Monte Carlo significance for the scan statistics.

Null replicas follow the parametric bootstrap: each region becomes a
structural zero with probability ``p_hat`` and the cases are spread
multinomially over the remaining regions in proportion to population.
Every replica owns an RNG stream derived from ``(seed, index)`` so results
do not depend on execution order or worker count.
"""

from __future__ import annotations

import csv
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Literal, Sequence, TypeVar

import numpy as np

from .detector import METHODS, ReplicaSummary, ScanConfig, ScanOutcome, Scanner
from .em import em_fit
from .likelihood import zip_mle_null
from .regions import CaseData, InputError, RegionMap

T = TypeVar("T")

# stream tags keep replica, alternative-draw and map streams disjoint
NULL_STREAM = 1
ALT_STREAM = 2
TYPE_I_STREAM = 3
MAP_STREAM = 4

MAX_ZERO_REDRAWS = 1000


class ReplicaError(RuntimeError):
    pass


def stream(seed: int, tag: int, index: int) -> np.random.Generator:
    """Independent generator for ``(seed, tag, index)``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(tag, int(index))))


def default_workers() -> int:
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else os.cpu_count() or 1


def parallel_map(fn: Callable[[int], T], n: int, workers: int | None = None) -> list[T]:
    """``[fn(i) for i in range(n)]`` on a thread pool; results stay in index order.

    The scan kernels release the GIL, so threads give real parallelism.
    """
    workers = default_workers() if workers is None else workers
    if workers <= 1 or n <= 1:
        return [fn(i) for i in range(n)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(n), chunksize=max(1, n // (8 * workers))))


@dataclass(frozen=True)
class NullReplicaConfig:
    B: int = 999
    seed: int = 12345
    alpha: float = 0.05
    # "observed": replicas carry the observed case total;
    # "population": the literal total of sum(n_i) cases
    total_cases_rule: Literal["observed", "population"] = "observed"

    def __post_init__(self):
        if self.B < 19:
            raise ValueError("B must be at least 19")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.total_cases_rule not in ("observed", "population"):
            raise ValueError(f"unknown total_cases_rule {self.total_cases_rule!r}")


def generate_null_replica(region_map: RegionMap, p_hat: float, theta0_hat: float,
                          total_cases: int, rng: np.random.Generator) -> CaseData:
    """One constant-risk data set with randomly placed structural zeros.

    ``theta0_hat`` only scales the multinomial weights and therefore cancels;
    it is accepted to mirror the model parameters.
    """
    if not 0 <= p_hat < 1:
        raise ValueError("p_hat must lie in [0, 1)")
    if total_cases < 0:
        raise ValueError("total_cases must be nonnegative")
    k = region_map.k
    weights = region_map.population * max(theta0_hat, 0.0)
    if not np.any(weights > 0):
        weights = region_map.population
    for _ in range(MAX_ZERO_REDRAWS):
        d = (rng.random(k) < p_hat) if p_hat > 0 else np.zeros(k, dtype=bool)
        w = np.where(d, 0.0, weights)
        if w.sum() > 0:
            break
    else:
        raise ReplicaError(f"every region drawn as a structural zero {MAX_ZERO_REDRAWS} times")
    counts = rng.multinomial(int(total_cases), w / w.sum())
    return CaseData(counts, d.astype(np.int8))


def null_parameters(region_map: RegionMap, data: CaseData, method: str,
                    scan_config: ScanConfig | None = None) -> tuple[float, float]:
    """``(p_hat, theta0_hat)`` used to generate null replicas for ``method``."""
    if method == "poisson":
        theta0, _ = zip_mle_null(region_map, data, None)
        return 0.0, theta0
    if method == "zip":
        if data.structural_zero is None:
            raise InputError("the zip method needs known structural-zero indicators")
        theta0, p = zip_mle_null(region_map, data, data.structural_zero)
        return p, theta0
    if method == "zip-em":
        cfg = (scan_config or ScanConfig()).em
        fit = em_fit(region_map, data, None, cfg).fit
        return fit.p_hat, fit.theta0_hat
    raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")


def replica_statistics(scanner: Scanner, method: str, p_hat: float, theta0_hat: float,
                       total_cases: int, B: int, seed: int, workers: int | None = None,
                       tag: int = NULL_STREAM) -> ReplicaSummary:
    """Scan statistic (log scale) of ``B`` null replicas."""

    def one(b: int) -> tuple[float, int]:
        rep = generate_null_replica(scanner.map, p_hat, theta0_hat, total_cases,
                                    stream(seed, tag, b))
        scored = rep if method == "zip" else rep.without_structural_zeros()
        try:
            value = scanner.scan_statistic(scored, method)
        except Exception as exc:
            raise ReplicaError(f"replica {b} (seed {seed}) failed: {exc}") from exc
        return value, int(rep.structural_zero.sum())

    results = parallel_map(one, B, workers)
    return ReplicaSummary(np.array([r[0] for r in results]),
                          np.array([r[1] for r in results], dtype=np.int64), int(seed))


def critical_value(log_lambdas: Sequence[float], alpha: float) -> float:
    """The ceil((1 - alpha) B)-th smallest replica statistic."""
    values = np.sort(np.asarray(log_lambdas, dtype=float))
    B = len(values)
    rank = math.ceil(round((1 - alpha) * B, 9))
    rank = min(max(rank, 1), B)
    return float(values[rank - 1])


def rank_p_value(log_lambda_obs: float, log_lambdas: Sequence[float]) -> float:
    values = np.asarray(log_lambdas, dtype=float)
    return (1 + int(np.sum(values >= log_lambda_obs))) / (len(values) + 1)


def significance(region_map: RegionMap, data: CaseData, method: str,
                 config: NullReplicaConfig | None = None,
                 scan_config: ScanConfig | None = None, workers: int | None = None,
                 scanner: Scanner | None = None) -> ScanOutcome:
    """Scan the observed data and attach the Monte Carlo p-value and critical value."""
    config = config or NullReplicaConfig()
    scanner = scanner or Scanner(region_map, scan_config)
    observed = data if method == "zip" else data.without_structural_zeros()
    outcome = scanner.scan(observed, method)
    p_hat, theta0 = null_parameters(region_map, data, method, scanner.config)
    if config.total_cases_rule == "observed":
        total = data.total
    else:
        total = int(round(region_map.total_population))
    reps = replica_statistics(scanner, method, p_hat, theta0, total, config.B,
                              config.seed, workers)
    outcome = replace(
        outcome,
        p_value=rank_p_value(outcome.log_lambda, reps.log_lambdas),
        log_lambda_star=critical_value(reps.log_lambdas, config.alpha),
        replicas=reps,
    )
    outcome.diagnostics.update({"null_p_hat": p_hat, "null_theta0_hat": theta0,
                                "replica_total_cases": total})
    return outcome


def write_replica_log(path: str | Path, summary: ReplicaSummary) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["replica_index", "lambda", "structural_zero_count"])
        for b, (v, z) in enumerate(zip(summary.log_lambdas, summary.structural_zero_counts)):
            writer.writerow([b, repr(math.exp(v)) if v < 709 else "inf", int(z)])
