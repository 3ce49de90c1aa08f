"""EM estimation of latent structural zeros for one zone or the null model."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .likelihood import ZipFit, _mask
from .regions import CaseData, RegionMap, Zone

P_FLOOR = 1e-6


class DegenerateDataError(ValueError):
    """Raised when the data carry no information (e.g. every count is zero)."""


@dataclass(frozen=True)
class EmConfig:
    tol: float = 1e-8
    max_iter: int = 500
    # None: share of zero counts, clipped to [1e-6, 1 - 1e-6]
    init_p: float | None = None

    def __post_init__(self):
        if self.init_p is not None and not 0 <= self.init_p < 1:
            raise ValueError("init_p must lie in [0, 1)")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")


@dataclass(frozen=True)
class EmResult:
    fit: ZipFit
    iterations: int
    converged: bool
    # parameter iterates (p, theta0, thetaZ) starting from the initial values
    trace: list[tuple[float, float, float | None]] = field(default_factory=list, repr=False)
    delta_trace: list[np.ndarray] = field(default_factory=list, repr=False)


def initial_p(counts: np.ndarray, config: EmConfig | None = None) -> float:
    if config is not None and config.init_p is not None:
        return float(config.init_p)
    p = float(np.mean(np.asarray(counts) == 0))
    return min(max(p, P_FLOOR), 1 - P_FLOOR)


def e_step(region_map: RegionMap, data: CaseData, zone: Zone | Sequence[int] | None,
           p: float, theta0: float, thetaZ: float | None = None) -> np.ndarray:
    """Posterior probability that each region is a structural zero."""
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    k = region_map.k
    theta = np.full(k, float(theta0))
    if zone is not None and thetaZ is not None:
        theta[_mask(zone, k)] = thetaZ
    q = np.exp(-region_map.population * theta)
    zero = data.counts == 0
    delta = np.zeros(k)
    denom = p + (1 - p) * q[zero]
    with np.errstate(invalid="ignore"):
        delta[zero] = np.where(denom > 0, p / denom, 0.0)
    return delta


def _m_step(x: np.ndarray, n: np.ndarray, inside: np.ndarray | None, delta: np.ndarray):
    w = 1.0 - delta
    xw, nw = x * w, n * w
    p = float(delta.sum()) / len(x)
    if inside is None:
        return p, _rate(xw.sum(), nw.sum()), None
    return (p, _rate(xw[~inside].sum(), nw[~inside].sum()),
            _rate(xw[inside].sum(), nw[inside].sum()))


def _rate(x: float, n: float) -> float:
    return float(x / n) if n > 0 else 0.0


def em_fit(region_map: RegionMap, data: CaseData, zone: Zone | Sequence[int] | None = None,
           config: EmConfig | None = None, trace: bool = False) -> EmResult:
    """Alternate E and M steps until the structural-zero posteriors settle.

    ``zone=None`` fits the constant-risk model. Convergence is declared when
    the largest change in any posterior falls below ``config.tol``; running
    out of iterations returns the last iterate with ``converged=False``.
    """
    config = config or EmConfig()
    x = data.counts.astype(float)
    if not np.any(x > 0):
        raise DegenerateDataError("EM needs at least one region with a positive count")
    n = region_map.population
    inside = None if zone is None else _mask(zone, region_map.k)

    delta_prev = np.zeros(region_map.k)
    _, theta0, thetaZ = _m_step(x, n, inside, delta_prev)
    p = initial_p(data.counts, config)
    params = [(p, theta0, thetaZ)]
    deltas = []
    converged = False
    it = 0
    while it < config.max_iter:
        it += 1
        delta = e_step(region_map, data, zone, p, theta0, thetaZ)
        p, theta0, thetaZ = _m_step(x, n, inside, delta)
        if trace:
            params.append((p, theta0, thetaZ))
            deltas.append(delta)
        change = float(np.max(np.abs(delta - delta_prev)))
        delta_prev = delta
        if change < config.tol:
            converged = True
            break
    fit = ZipFit(p, theta0, thetaZ, delta_prev)
    return EmResult(fit, it, converged, params if trace else [], deltas)
