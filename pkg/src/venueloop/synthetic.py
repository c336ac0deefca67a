"""Synthetic check-in data in the raw dump layout.

Used for tests and for exercising the pipeline when no real check-in dump is
at hand. Venues are scattered around a few urban centres with heavy-tailed
attractiveness; each user follows an exploration / preferential-return walk
with distance decay.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .geo import KM_PER_DEGREE, haversine_many

START = datetime(2012, 4, 3, tzinfo=timezone.utc)


@dataclass
class CityParams:
    n_users: int = 200
    n_venues: int = 3000
    n_categories: int = 40
    n_first_level: int = 8
    days: int = 304
    mean_checkins: float = 120.0
    center: tuple[float, float] = (40.73, -73.99)
    spread_km: float = 8.0
    n_hubs: int = 6
    rho: float = 0.6
    gamma: float = 0.21
    decay_km: float = 2.0


def generate_city(params: CityParams, seed: int = 0):
    """Return (rows, hierarchy) where rows follow the raw dump column order."""
    rng = np.random.default_rng(seed)
    p = params
    deg = p.spread_km / KM_PER_DEGREE
    hubs = np.array(p.center) + rng.normal(0, deg, size=(p.n_hubs, 2))
    hub_of = rng.integers(p.n_hubs, size=p.n_venues)
    lat = hubs[hub_of, 0] + rng.normal(0, deg / 3, size=p.n_venues)
    lon = hubs[hub_of, 1] + rng.normal(0, deg / 3, size=p.n_venues) / np.cos(np.radians(p.center[0]))
    cat_weights = 1.0 / np.arange(1, p.n_categories + 1) ** 0.8
    cats = rng.choice(p.n_categories, size=p.n_venues, p=cat_weights / cat_weights.sum())
    attract = rng.pareto(1.5, size=p.n_venues) + 1.0
    venue_ids = [f"v{i:05d}" for i in range(p.n_venues)]
    cat_names = [f"Category {c:02d}" for c in range(p.n_categories)]
    hierarchy = {cat_names[c]: f"Group {c % p.n_first_level}" for c in range(p.n_categories)}

    rows = []
    t0 = START.timestamp()
    for u in range(p.n_users):
        n = max(2, int(rng.lognormal(np.log(p.mean_checkins), 0.6)))
        times = np.sort(rng.uniform(0, p.days * 86400, size=n))
        home = int(rng.choice(p.n_venues, p=attract / attract.sum()))
        counts = {home: 1}
        cur = home
        seq = [home]
        for _ in range(n - 1):
            if len(counts) < p.n_venues and rng.random() < p.rho * len(counts) ** (-p.gamma):
                d = haversine_many(lat[cur], lon[cur], lat, lon)
                w = attract * np.exp(-d / p.decay_km)
                w[list(counts)] = 0.0
                if w.sum() <= 0:  # decay underflow far from everything
                    w = attract.copy()
                    w[list(counts)] = 0.0
                nxt = int(rng.choice(p.n_venues, p=w / w.sum()))
            else:
                ids = np.array(sorted(counts))
                c = np.array([counts[i] for i in ids], dtype=float)
                nxt = int(ids[rng.choice(ids.size, p=c / c.sum())])
            counts[nxt] = counts.get(nxt, 0) + 1
            seq.append(nxt)
            cur = nxt
        for v, t in zip(seq, times):
            stamp = datetime.fromtimestamp(t0 + t, tz=timezone.utc).strftime("%a %b %d %H:%M:%S +0000 %Y")
            rows.append([f"u{u:04d}", venue_ids[v], f"cat{cats[v]:02d}", cat_names[cats[v]],
                         f"{lat[v]:.6f}", f"{lon[v]:.6f}", "-240", stamp])
    rows.sort(key=lambda r: datetime.strptime(r[7], "%a %b %d %H:%M:%S %z %Y"))
    return rows, hierarchy


def write_city(params: CityParams, checkins_path, hierarchy_path=None, seed: int = 0) -> None:
    rows, hierarchy = generate_city(params, seed)
    with open(checkins_path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, delimiter="\t", lineterminator="\n").writerows(rows)
    if hierarchy_path is not None:
        with open(hierarchy_path, "w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(sorted(hierarchy.items()))
