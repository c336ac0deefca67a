"""Great-circle distances, radius queries and the empirical jump-length distribution."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np

from .ingest import Dataset, Venue

EARTH_RADIUS_KM = 6371.0088
KM_PER_DEGREE = math.pi * EARTH_RADIUS_KM / 180.0


def haversine(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Great-circle distance in km between two (lat, lon) pairs in degrees."""
    lat1, lon1 = map(math.radians, a)
    lat2, lon2 = map(math.radians, b)
    h = math.sin((lat2 - lat1) / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_many(lat, lon, lats, lons) -> np.ndarray:
    """Vectorised haversine from one point (degrees) to arrays of points."""
    lat1, lon1 = np.radians(lat), np.radians(lon)
    lat2, lon2 = np.radians(lats), np.radians(lons)
    h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


class SpatialIndex:
    """Uniform lat/lon grid over a venue catalog.

    Queries scan every cell intersecting the bounding box of the query disc and
    then filter by exact distance, so results equal a brute-force scan.
    Category-restricted queries scan the category's venues directly.
    """

    def __init__(self, catalog: Mapping[str, Venue], cell_km: float = 1.0):
        self.catalog = catalog
        self.ids = np.array(sorted(catalog), dtype=object)
        self.pos = {vid: i for i, vid in enumerate(self.ids)}
        self.lat = np.array([catalog[v].lat for v in self.ids], dtype=float)
        self.lon = np.array([catalog[v].lon for v in self.ids], dtype=float)
        mean_lat = float(self.lat.mean()) if len(self.ids) else 0.0
        self.cell_lat = max(cell_km, 1e-6) / KM_PER_DEGREE
        self.cell_lon = min(360.0, self.cell_lat / max(math.cos(math.radians(mean_lat)), 1e-6))
        self.cells: dict[tuple[int, int], np.ndarray] = {}
        buckets = defaultdict(list)
        for i, key in enumerate(zip(self._row(self.lat), self._col(self.lon))):
            buckets[key].append(i)
        self.cells = {k: np.array(v, dtype=np.intp) for k, v in buckets.items()}

        by_cat = defaultdict(list)
        for i, vid in enumerate(self.ids):
            by_cat[catalog[vid].category].append(i)
        self.by_category = {c: np.array(v, dtype=np.intp) for c, v in by_cat.items()}
        by_first = defaultdict(list)
        for i, vid in enumerate(self.ids):
            if catalog[vid].first_level_category is not None:
                by_first[catalog[vid].first_level_category].append(i)
        self.by_first_level = {c: np.array(v, dtype=np.intp) for c, v in by_first.items()}

    def _row(self, lat):
        return np.floor(np.asarray(lat) / self.cell_lat).astype(int)

    def _col(self, lon):
        return np.floor(np.asarray(lon) / self.cell_lon).astype(int)

    def __len__(self):
        return len(self.ids)

    def _grid_candidates(self, lat: float, lon: float, r: float) -> np.ndarray:
        dlat = r / KM_PER_DEGREE
        lat_hi = min(90.0, abs(lat) + dlat)
        cos_hi = math.cos(math.radians(lat_hi))
        if lat_hi >= 90.0 or cos_hi <= 1e-9 or r / (KM_PER_DEGREE * cos_hi) >= 180.0:
            return np.arange(len(self.ids))
        dlon = r / (KM_PER_DEGREE * cos_hi)
        r0, r1 = int(self._row(lat - dlat)), int(self._row(lat + dlat))
        lo, hi = lon - dlon, lon + dlon
        col_ranges = [(int(self._col(lo)), int(self._col(hi)))]
        # query box crossing the antimeridian
        if lo < -180.0:
            col_ranges = [(int(self._col(-180.0)), int(self._col(hi))), (int(self._col(lo + 360.0)), int(self._col(180.0)))]
        elif hi > 180.0:
            col_ranges = [(int(self._col(lo)), int(self._col(180.0))), (int(self._col(-180.0)), int(self._col(hi - 360.0)))]
        n_cells = (r1 - r0 + 1) * sum(c1 - c0 + 1 for c0, c1 in col_ranges)
        if n_cells > len(self.cells):
            return np.arange(len(self.ids))
        parts = [
            self.cells[(i, j)]
            for i in range(r0, r1 + 1)
            for c0, c1 in col_ranges
            for j in range(c0, c1 + 1)
            if (i, j) in self.cells
        ]
        return np.concatenate(parts) if parts else np.empty(0, dtype=np.intp)

    def within_idx(self, lat: float, lon: float, r: float, category: str | None = None,
                   first_level: str | None = None) -> np.ndarray:
        """Sorted catalog positions within ``r`` km of (lat, lon)."""
        if category is not None:
            cand = self.by_category.get(category, np.empty(0, dtype=np.intp))
        elif first_level is not None:
            cand = self.by_first_level.get(first_level, np.empty(0, dtype=np.intp))
        else:
            cand = self._grid_candidates(lat, lon, r)
        if cand.size == 0:
            return cand
        d = haversine_many(lat, lon, self.lat[cand], self.lon[cand])
        return np.sort(cand[d <= r])


def venues_within(index: SpatialIndex, center: Venue, r: float, category: str | None = None) -> set[str]:
    if r < 0:
        raise ValueError("radius must be non-negative")
    return set(index.ids[index.within_idx(center.lat, center.lon, r, category)])


def relevance(index: SpatialIndex, v: Venue, r_star: float) -> int:
    """Number of other catalog venues within ``r_star`` km of ``v``."""
    hits = index.within_idx(v.lat, v.lon, r_star)
    return int(len(hits) - (1 if v.venue_id in index.pos and index.pos[v.venue_id] in hits else 0))


def relevance_all(index: SpatialIndex, r_star: float) -> dict[str, int]:
    """Relevance of every catalog venue, computed cell block by cell block."""
    out = np.zeros(len(index.ids), dtype=np.int64)
    for key, members in index.cells.items():
        lat_c = float(index.lat[members].mean())
        lon_c = float(index.lon[members].mean())
        # every member lies within one cell diagonal of the block centre
        spread = float(haversine_many(lat_c, lon_c, index.lat[members], index.lon[members]).max())
        cand = index._grid_candidates(lat_c, lon_c, r_star + spread)
        if cand.size == 0:
            continue
        lat2 = np.radians(index.lat[cand])[None, :]
        lon2 = np.radians(index.lon[cand])[None, :]
        for lo in range(0, members.size, 256):
            chunk = members[lo:lo + 256]
            lat1 = np.radians(index.lat[chunk])[:, None]
            lon1 = np.radians(index.lon[chunk])[:, None]
            h = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
            d = 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))
            out[chunk] = (d <= r_star).sum(axis=1) - 1
    return {vid: int(out[i]) for i, vid in enumerate(index.ids)}


@dataclass(frozen=True)
class JumpLengthDistribution:
    samples: np.ndarray

    @property
    def median(self) -> float:
        if self.samples.size == 0:
            raise ValueError("empty jump-length distribution")
        s = np.sort(self.samples)
        return float(s[(s.size - 1) // 2])

    def __len__(self):
        return int(self.samples.size)


def build_jump_distribution(dataset: Dataset, events: Iterable | None = None) -> JumpLengthDistribution:
    """Distances between consecutive visits of each user, in km."""
    events = dataset.events if events is None else events
    last: dict[str, str] = {}
    a_lat, a_lon, b_lat, b_lon = [], [], [], []
    cat = dataset.catalog
    for e in events:
        prev = last.get(e.user_id)
        if prev is not None:
            a_lat.append(cat[prev].lat)
            a_lon.append(cat[prev].lon)
            b_lat.append(cat[e.venue_id].lat)
            b_lon.append(cat[e.venue_id].lon)
        last[e.user_id] = e.venue_id
    if not a_lat:
        return JumpLengthDistribution(np.empty(0))
    la1, lo1, la2, lo2 = (np.radians(np.asarray(x)) for x in (a_lat, a_lon, b_lat, b_lon))
    h = np.sin((la2 - la1) / 2) ** 2 + np.cos(la1) * np.cos(la2) * np.sin((lo2 - lo1) / 2) ** 2
    return JumpLengthDistribution(2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h))))


def sample_jump(dist: JumpLengthDistribution, rng: np.random.Generator) -> float:
    if dist.samples.size == 0:
        raise ValueError("cannot sample from an empty jump-length distribution")
    return float(dist.samples[rng.integers(dist.samples.size)])
