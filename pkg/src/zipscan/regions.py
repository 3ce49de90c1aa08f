"""Study-area geometry, case data and circular candidate zones."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np


class InputError(ValueError):
    """Raised when region or case data violate their invariants."""


@dataclass(frozen=True)
class RegionMap:
    """Region centroids and at-risk populations.

    Arrays are copied and frozen on construction so a map can be shared
    freely between workers.
    """

    ids: tuple[str, ...]
    x: np.ndarray
    y: np.ndarray
    population: np.ndarray

    def __post_init__(self):
        ids = tuple(str(i) for i in self.ids)
        x = np.array(self.x, dtype=float)
        y = np.array(self.y, dtype=float)
        pop = np.array(self.population, dtype=float)
        k = len(ids)
        if k < 2:
            raise InputError("a map needs at least 2 regions")
        if len(set(ids)) != k:
            raise InputError("region ids must be unique")
        if not (x.shape == y.shape == pop.shape == (k,)):
            raise InputError("coordinate and population arrays must match the id count")
        if not np.all(np.isfinite(x) & np.isfinite(y)):
            raise InputError("coordinates must be finite")
        if np.any(~np.isfinite(pop)) or np.any(pop < 0):
            raise InputError("populations must be finite and nonnegative")
        for arr in (x, y, pop):
            arr.setflags(write=False)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "population", pop)

    @property
    def k(self) -> int:
        return len(self.ids)

    @property
    def total_population(self) -> float:
        return float(self.population.sum())

    def index_of(self, region_id: str) -> int:
        try:
            return self._id_index[region_id]
        except KeyError:
            raise InputError(f"unknown region id {region_id!r}") from None

    @cached_property
    def _id_index(self) -> dict[str, int]:
        return {rid: i for i, rid in enumerate(self.ids)}

    @cached_property
    def neighbor_order(self) -> np.ndarray:
        """(k, k) matrix; row i is :func:`nearest_neighbor_order` of region i."""
        dx = self.x[:, None] - self.x[None, :]
        dy = self.y[:, None] - self.y[None, :]
        d2 = dx * dx + dy * dy
        idx = np.broadcast_to(np.arange(self.k), d2.shape)
        # lexsort: last key is primary -> distance, then index
        order = np.lexsort((idx, d2), axis=1)
        order.setflags(write=False)
        return order


@dataclass(frozen=True)
class CaseData:
    """Observed counts, optionally with known structural-zero indicators."""

    counts: np.ndarray
    structural_zero: np.ndarray | None = None

    def __post_init__(self):
        counts = np.asarray(self.counts)
        if counts.ndim != 1:
            raise InputError("counts must be one-dimensional")
        if counts.size and (np.any(counts < 0) or np.any(counts != np.round(counts))):
            raise InputError("counts must be nonnegative integers")
        counts = counts.astype(np.int64)
        counts.setflags(write=False)
        object.__setattr__(self, "counts", counts)
        if self.structural_zero is not None:
            d = np.asarray(self.structural_zero)
            if d.shape != counts.shape:
                raise InputError("structural_zero must align with counts")
            if not np.all((d == 0) | (d == 1)):
                raise InputError("structural_zero values must be 0 or 1")
            d = d.astype(np.int8)
            bad = np.flatnonzero((d == 1) & (counts > 0))
            if bad.size:
                raise InputError(
                    f"region index {int(bad[0])} is a structural zero with "
                    f"{int(counts[bad[0]])} cases; structural zeros must have count 0"
                )
            d.setflags(write=False)
            object.__setattr__(self, "structural_zero", d)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def check_against(self, region_map: RegionMap) -> None:
        if self.counts.shape[0] != region_map.k:
            raise InputError(
                f"{self.counts.shape[0]} counts for a map of {region_map.k} regions"
            )

    def without_structural_zeros(self) -> CaseData:
        return CaseData(self.counts)


@dataclass(frozen=True)
class Zone:
    """A candidate cluster: region indices in nearest-neighbour order from ``center``."""

    members: tuple[int, ...]
    center: int
    pop_inside: float
    cases_inside: int | None = None

    @property
    def key(self) -> frozenset[int]:
        return frozenset(self.members)

    def __len__(self) -> int:
        return len(self.members)


def nearest_neighbor_order(region_map: RegionMap, i: int) -> np.ndarray:
    """All region indices sorted by distance from region ``i``.

    Ties are broken by ascending index, so ``i`` itself always comes first.
    """
    if not 0 <= i < region_map.k:
        raise IndexError(f"region index {i} out of range for {region_map.k} regions")
    return region_map.neighbor_order[i].copy()


@dataclass(frozen=True)
class ZoneFamily:
    """Deduplicated circular zones stored as (center, size) prefixes.

    Zone ``z`` has members ``order[center[z], :size[z]]``. Zones are kept
    in emission order: centers ascending, sizes ascending within a center.
    ``keep[i, j-1]`` marks whether the size-``j`` prefix of center ``i`` is
    emitted (False for prefixes already reached from a lower center).
    """

    order: np.ndarray
    center: np.ndarray
    size: np.ndarray
    keep: np.ndarray
    max_size: np.ndarray
    population: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.center)

    def members(self, z: int) -> np.ndarray:
        return self.order[self.center[z], : self.size[z]]

    def zone(self, z: int, counts: np.ndarray | None = None) -> Zone:
        m = self.members(z)
        cases = None if counts is None else int(np.asarray(counts)[m].sum())
        return Zone(tuple(int(v) for v in m), int(self.center[z]),
                    float(self.population[m].sum()), cases)

    def __iter__(self) -> Iterator[Zone]:
        for z in range(len(self)):
            yield self.zone(z)

    def index_of(self, members: Sequence[int]) -> int:
        """Position of the zone with this member set, or -1 if absent."""
        return self._key_index.get(frozenset(int(m) for m in members), -1)

    @cached_property
    def _key_index(self) -> dict[frozenset, int]:
        return {frozenset(self.members(z).tolist()): z for z in range(len(self))}


def enumerate_circular_zones(region_map: RegionMap, max_pop_fraction: float = 0.5) -> ZoneFamily:
    """Nearest-neighbour prefix zones whose population stays within the cap.

    For every center the prefixes of its neighbour order are emitted until
    adding the next region would push the zone population above
    ``max_pop_fraction`` of the total. A singleton is always emitted even
    if its own population exceeds the cap.
    """
    if not 0 < max_pop_fraction <= 1:
        raise ValueError("max_pop_fraction must lie in (0, 1]")
    k = region_map.k
    order = region_map.neighbor_order
    pop = region_map.population
    cap = max_pop_fraction * region_map.total_population
    cum = np.cumsum(pop[order], axis=1)
    # small relative slack so a zone of exactly half the population is kept
    within = cum <= cap * (1 + 1e-12)
    within[:, 0] = True
    max_size = np.where(within.all(axis=1), k, np.argmin(within, axis=1)).astype(np.int64)

    keep = np.zeros((k, int(max_size.max())), dtype=bool)
    seen: set[frozenset] = set()
    centers, sizes = [], []
    for i in range(k):
        row = order[i]
        members: set[int] = set()
        for j in range(max_size[i]):
            members.add(int(row[j]))
            key = frozenset(members)
            if key in seen:
                continue
            seen.add(key)
            keep[i, j] = True
            centers.append(i)
            sizes.append(j + 1)
    center = np.array(centers, dtype=np.int64)
    size = np.array(sizes, dtype=np.int64)
    for arr in (center, size, keep, max_size):
        arr.setflags(write=False)
    return ZoneFamily(order, center, size, keep, max_size, pop)


REQUIRED_COLUMNS = ("id", "x", "y", "population", "cases")


def read_region_csv(path: str | Path) -> tuple[RegionMap, CaseData]:
    """Parse ``id,x,y,population,cases[,structural_zero]``."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise InputError(f"{path}: missing column(s) {', '.join(missing)}")
        has_d = "structural_zero" in header
        ids, xs, ys, pops, cases, d = [], [], [], [], [], []
        for lineno, raw in enumerate(reader, start=2):
            row = {k.strip(): (v or "").strip() for k, v in raw.items() if k is not None}
            try:
                ids.append(row["id"])
                xs.append(float(row["x"]))
                ys.append(float(row["y"]))
                pops.append(float(row["population"]))
                c = float(row["cases"])
                if c != int(c):
                    raise ValueError("cases must be an integer")
                cases.append(int(c))
                if has_d:
                    v = row["structural_zero"]
                    if v not in ("0", "1"):
                        raise ValueError("structural_zero must be 0 or 1")
                    d.append(int(v))
            except (KeyError, ValueError) as exc:
                raise InputError(f"{path}:{lineno}: {exc}") from None
            if has_d and d[-1] == 1 and cases[-1] > 0:
                raise InputError(
                    f"{path}:{lineno}: region {row['id']!r} has structural_zero=1 "
                    f"but {cases[-1]} cases (a structural zero must have 0 cases)"
                )
    region_map = RegionMap(tuple(ids), np.array(xs), np.array(ys), np.array(pops))
    data = CaseData(np.array(cases, dtype=np.int64), np.array(d) if has_d else None)
    return region_map, data


def write_region_csv(path: str | Path, region_map: RegionMap, data: CaseData) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        cols = list(REQUIRED_COLUMNS)
        if data.structural_zero is not None:
            cols.append("structural_zero")
        writer.writerow(cols)
        for i, rid in enumerate(region_map.ids):
            row = [rid, repr(float(region_map.x[i])), repr(float(region_map.y[i])),
                   repr(float(region_map.population[i])), int(data.counts[i])]
            if data.structural_zero is not None:
                row.append(int(data.structural_zero[i]))
            writer.writerow(row)
