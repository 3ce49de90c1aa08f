"""Most likely cluster search for the Poisson, known-zero ZIP and EM-ZIP scans."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import _kernels
from .em import DegenerateDataError, EmConfig, em_fit, initial_p
from .likelihood import ZipFit
from .regions import CaseData, InputError, RegionMap, Zone, ZoneFamily, enumerate_circular_zones

Method = Literal["poisson", "zip", "zip-em"]
METHODS: tuple[str, ...] = ("poisson", "zip", "zip-em")


@dataclass
class ScanOutcome:
    best_zone: Zone
    log_lambda: float
    method: str
    fit: ZipFit | None = None
    p_value: float | None = None
    log_lambda_star: float | None = None
    replicas: "ReplicaSummary | None" = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def lambda_obs(self) -> float:
        return _exp(self.log_lambda)

    @property
    def lambda_star(self) -> float | None:
        if self.log_lambda_star is None:
            return None
        return _exp(self.log_lambda_star)

    @property
    def reject(self) -> bool | None:
        if self.log_lambda_star is None:
            return None
        return self.log_lambda > self.log_lambda_star


@dataclass(frozen=True)
class ReplicaSummary:
    log_lambdas: np.ndarray
    structural_zero_counts: np.ndarray
    seed: int


def _exp(v: float) -> float:
    try:
        return math.exp(v)
    except OverflowError:
        return math.inf


@dataclass(frozen=True)
class ScanConfig:
    max_pop_fraction: float = 0.5
    em: EmConfig = EmConfig()
    # "per-zone": EM posteriors of each zone used in numerator and denominator;
    # "separate": denominator from one constant-risk EM fit
    em_null: Literal["per-zone", "separate"] = "per-zone"


class Scanner:
    """Holds a map and its zone family so repeated scans skip enumeration."""

    def __init__(self, region_map: RegionMap, config: ScanConfig | None = None,
                 zones: ZoneFamily | None = None):
        self.map = region_map
        self.config = config or ScanConfig()
        if self.config.em_null not in ("per-zone", "separate"):
            raise ValueError(f"unknown em_null mode {self.config.em_null!r}")
        self.zones = zones or enumerate_circular_zones(region_map, self.config.max_pop_fraction)

    # -- per-zone score vectors ------------------------------------------------

    def zone_scores(self, data: CaseData, method: str) -> tuple[np.ndarray, dict]:
        """Log likelihood ratio of every zone in ``self.zones`` order."""
        data.check_against(self.map)
        zf = self.zones
        out = np.empty(len(zf))
        x = data.counts.astype(float)
        n = np.ascontiguousarray(self.map.population, dtype=float)
        if method == "poisson":
            _kernels.scan_fixed(zf.order, zf.keep, zf.max_size, x, n, out)
            return out, {}
        if method == "zip":
            if data.structural_zero is None:
                raise InputError("the zip scan needs known structural-zero indicators")
            w = 1.0 - data.structural_zero.astype(float)
            _kernels.scan_fixed(zf.order, zf.keep, zf.max_size, x * w, n * w, out)
            return out, {}
        if method == "zip-em":
            return self._em_scores(data, x, n, out)
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")

    def _em_scores(self, data, x, n, out):
        zf = self.zones
        cfg = self.config.em
        zero = data.counts == 0
        class_pop, cls, class_total = np.unique(n[zero], return_inverse=True,
                                                return_counts=True)
        zero_class = np.full(self.map.k, -1, dtype=np.int64)
        zero_class[zero] = cls
        null_ll = 0.0
        use_null = self.config.em_null == "separate"
        if use_null:
            null_ll = null_complete_loglik(em_fit(self.map, data, None, cfg).fit, x, n)
        iters = np.empty(len(zf), dtype=np.int64)
        conv = np.empty(len(zf), dtype=np.bool_)
        _kernels.scan_em(zf.order, zf.keep, zf.max_size, x, n, zero_class,
                         class_pop.astype(float), class_total.astype(np.int64),
                         initial_p(data.counts, cfg), cfg.tol, cfg.max_iter,
                         null_ll, use_null, out, iters, conv)
        diag = {
            "em_nonconverged_zones": int((~conv).sum()),
            "em_total_iterations": int(iters.sum()),
            "em_max_iterations": int(iters.max()) if len(iters) else 0,
        }
        return out, diag

    # -- best zone -------------------------------------------------------------

    def best_index(self, scores: np.ndarray) -> int:
        """Index of the maximum; ties go to fewer members, then the lower center."""
        top = scores.max()
        tied = np.flatnonzero(scores == top)
        if len(tied) == 1:
            return int(tied[0])
        zf = self.zones
        pick = np.lexsort((zf.center[tied], zf.size[tied]))[0]
        return int(tied[pick])

    def scan_statistic(self, data: CaseData, method: str) -> float:
        """Log of the scan statistic only (used for Monte Carlo replicas)."""
        _check_cases(data, method)
        scores, _ = self.zone_scores(data, method)
        return float(scores.max())

    def scan(self, data: CaseData, method: str) -> ScanOutcome:
        _check_cases(data, method)
        scores, diag = self.zone_scores(data, method)
        z = self.best_index(scores)
        zone = self.zones.zone(z, data.counts)
        fit = None
        if method == "zip":
            fit = _known_fit(self.map, data, zone)
        elif method == "zip-em":
            res = em_fit(self.map, data, zone.members, self.config.em)
            fit = res.fit
            diag["best_zone_em_iterations"] = res.iterations
            diag["best_zone_em_converged"] = res.converged
        return ScanOutcome(zone, float(scores[z]), method, fit, diagnostics=diag)


def null_complete_loglik(fit: ZipFit, x: np.ndarray, n: np.ndarray) -> float:
    """Constant-risk complete-data log-likelihood, up to terms free of the posteriors."""
    d = fit.delta_hat
    k = len(d)
    s = float(d.sum())
    p = s / k
    ll = 0.0
    if s > 0:
        ll += s * math.log(p)
    if k - s > 0:
        ll += (k - s) * math.log1p(-p)
    w = 1.0 - d
    n_adj = float(np.sum(n * w))
    x_adj = float(np.sum(x * w))
    theta = x_adj / n_adj
    if x_adj > 0:
        ll += x_adj * math.log(theta)
    return ll - theta * n_adj


def _known_fit(region_map: RegionMap, data: CaseData, zone: Zone) -> ZipFit:
    d = data.structural_zero.astype(float)
    w = 1.0 - d
    inside = np.zeros(region_map.k, dtype=bool)
    inside[list(zone.members)] = True
    x = data.counts * w
    n = region_map.population * w

    def rate(mask):
        den = n[mask].sum()
        return float(x[mask].sum() / den) if den > 0 else 0.0

    return ZipFit(float(d.sum()) / region_map.k, rate(~inside), rate(inside), d)


def _check_cases(data: CaseData, method: str) -> None:
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    if data.total <= 0:
        raise DegenerateDataError("no cases observed; the scan statistic is undefined")


def scan_poisson(region_map: RegionMap, data: CaseData,
                 config: ScanConfig | None = None) -> ScanOutcome:
    return Scanner(region_map, config).scan(data, "poisson")


def scan_zip(region_map: RegionMap, data: CaseData,
             config: ScanConfig | None = None) -> ScanOutcome:
    if data.structural_zero is None:
        raise InputError("the zip scan needs known structural-zero indicators")
    return Scanner(region_map, config).scan(data, "zip")


def scan_zip_em(region_map: RegionMap, data: CaseData,
                config: ScanConfig | None = None) -> ScanOutcome:
    return Scanner(region_map, config).scan(data, "zip-em")
