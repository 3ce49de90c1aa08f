"""Poisson and zero-inflated Poisson likelihood statistics.

Everything here is plain numpy and evaluates one zone at a time. The scan
kernels in :mod:`zipscan._kernels` reimplement the same formulas for speed;
these functions are the reference they are tested against.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import gammaln

from .regions import CaseData, RegionMap, Zone


@dataclass(frozen=True)
class ZoneAggregates:
    """Structural-zero adjusted sums inside and outside a zone."""

    x_in: float
    n_in: float
    x_out: float
    n_out: float

    @property
    def x_tot(self) -> float:
        return self.x_in + self.x_out

    @property
    def n_tot(self) -> float:
        return self.n_in + self.n_out


@dataclass(frozen=True)
class ZipFit:
    p_hat: float
    theta0_hat: float
    thetaZ_hat: float | None
    delta_hat: np.ndarray


def xlogy_ratio(x: float, n: float) -> float:
    """``x * log(x / n)`` with 0 log 0 = 0."""
    if x == 0:
        return 0.0
    return x * np.log(x / n)


def _as_delta(delta, k: int) -> np.ndarray:
    d = np.zeros(k) if delta is None else np.asarray(delta, dtype=float)
    if d.shape != (k,):
        raise ValueError("delta must have one entry per region")
    if np.any(d < 0) or np.any(d > 1):
        raise ValueError("delta entries must lie in [0, 1]")
    return d


def _mask(zone: Zone | Sequence[int], k: int) -> np.ndarray:
    members = zone.members if isinstance(zone, Zone) else zone
    inside = np.zeros(k, dtype=bool)
    inside[list(members)] = True
    return inside


def aggregates(region_map: RegionMap, data: CaseData, zone: Zone | Sequence[int],
               delta=None) -> ZoneAggregates:
    k = region_map.k
    w = 1.0 - _as_delta(delta, k)
    inside = _mask(zone, k)
    x = data.counts * w
    n = region_map.population * w
    return ZoneAggregates(float(x[inside].sum()), float(n[inside].sum()),
                          float(x[~inside].sum()), float(n[~inside].sum()))


def log_poisson_llr(agg: ZoneAggregates) -> float:
    """Log of the Poisson scan likelihood ratio for one zone (0 when the in-rate is not higher)."""
    if agg.n_in <= 0 or agg.n_out <= 0:
        raise ValueError("zone needs positive population both inside and outside")
    if agg.x_in * agg.n_out <= agg.x_out * agg.n_in:
        return 0.0
    val = (xlogy_ratio(agg.x_in, agg.n_in) + xlogy_ratio(agg.x_out, agg.n_out)
           - xlogy_ratio(agg.x_tot, agg.n_tot))
    return max(val, 0.0)


def poisson_llr(agg: ZoneAggregates) -> float:
    return float(np.exp(log_poisson_llr(agg)))


def zip_mle_null(region_map: RegionMap, data: CaseData, delta) -> tuple[float, float]:
    """Return ``(theta0_hat, p_hat)`` of the constant-risk model; ``delta`` may be fractional."""
    d = _as_delta(delta, region_map.k)
    w = 1.0 - d
    denom = float(np.sum(region_map.population * w))
    if denom <= 0:
        raise ValueError("no adjusted population left: every region is a structural zero")
    return float(np.sum(data.counts * w)) / denom, float(d.sum()) / region_map.k


def zip_mle_alt(region_map: RegionMap, data: CaseData, delta,
                zone: Zone | Sequence[int]) -> tuple[float, float, float]:
    """Return ``(thetaZ_hat, theta0_hat, p_hat)`` for an elevated-risk zone."""
    d = _as_delta(delta, region_map.k)
    agg = aggregates(region_map, data, zone, d)
    if agg.n_in <= 0 or agg.n_out <= 0:
        raise ValueError("zone needs positive adjusted population inside and outside")
    return agg.x_in / agg.n_in, agg.x_out / agg.n_out, float(d.sum()) / region_map.k


def log_zip_llr(region_map: RegionMap, data: CaseData, delta,
                zone: Zone | Sequence[int]) -> float:
    agg = aggregates(region_map, data, zone, delta)
    if agg.n_in <= 0 or agg.n_out <= 0:
        raise ValueError("zone needs positive adjusted population inside and outside")
    return log_poisson_llr(agg)


def zip_llr(region_map: RegionMap, data: CaseData, delta, zone: Zone | Sequence[int]) -> float:
    return float(np.exp(log_zip_llr(region_map, data, delta, zone)))


def complete_loglik(region_map: RegionMap, data: CaseData, delta, zone, p: float,
                    theta0: float, thetaZ: float | None = None) -> float:
    """Complete-data log-likelihood given (possibly fractional) structural-zero weights.

    ``zone=None`` or ``thetaZ=None`` evaluates the constant-risk model.
    """
    k = region_map.k
    d = _as_delta(delta, k)
    x = data.counts.astype(float)
    n = region_map.population
    theta = np.full(k, float(theta0))
    if zone is not None and thetaZ is not None:
        theta[_mask(zone, k)] = thetaZ
    mu = n * theta
    w = 1.0 - d
    with np.errstate(divide="ignore", invalid="ignore"):
        log_p = np.where(d > 0, d * np.log(p), 0.0)
        pois = np.where(x > 0, x * np.log(mu), 0.0) - mu - gammaln(x + 1)
        log_q = np.log1p(-p) if p < 1 else -np.inf
        body = np.where(w > 0, w * (log_q + pois), 0.0)
    return float(np.sum(log_p + body))


def incomplete_loglik(region_map: RegionMap, data: CaseData, zone, p: float,
                      theta0: float, thetaZ: float | None = None) -> float:
    """Observed-data ZIP log-likelihood with the structural zeros marginalised out."""
    if not 0 <= p < 1:
        raise ValueError("p must lie in [0, 1)")
    k = region_map.k
    x = data.counts.astype(float)
    theta = np.full(k, float(theta0))
    if zone is not None and thetaZ is not None:
        theta[_mask(zone, k)] = thetaZ
    mu = region_map.population * theta
    zero = x == 0
    total = float(np.sum(np.log(p + (1 - p) * np.exp(-mu[zero]))))
    xp, mup = x[~zero], mu[~zero]
    if np.any(mup <= 0):
        return -np.inf
    total += float(np.sum(np.log1p(-p) - mup + xp * np.log(mup) - gammaln(xp + 1)))
    return total


def zip_pmf(x, p: float, mu):
    x = np.asarray(x)
    mu = np.asarray(mu, dtype=float)
    pois = np.exp(-mu + np.where(x > 0, x * np.log(np.where(mu > 0, mu, 1.0)), 0.0)
                  - gammaln(x + 1))
    pois = np.where((mu == 0) & (x > 0), 0.0, pois)
    return np.where(x == 0, p, 0.0) + (1 - p) * pois


def zip_rvs(p: float, mu, size=None, rng: np.random.Generator | None = None) -> np.ndarray:
    """Draw ZIP(p, mu) variates: zero with probability ``p``, else Poisson(mu)."""
    rng = np.random.default_rng() if rng is None else rng
    structural = rng.random(size) < p
    return np.where(structural, 0, rng.poisson(mu, size))
