import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from venueloop.geo import (
    EARTH_RADIUS_KM,
    JumpLengthDistribution,
    SpatialIndex,
    build_jump_distribution,
    haversine,
    relevance,
    relevance_all,
    sample_jump,
    venues_within,
)
from venueloop.ingest import Venue

from conftest import T0, dataset, offset_east, venue

lat_s = st.floats(-89.9, 89.9)
lon_s = st.floats(-180, 180)
point = st.tuples(lat_s, lon_s)


def oracle_km(a, b):
    """Spherical law of cosines, an independent great-circle formula."""
    p1, l1, p2, l2 = map(math.radians, (*a, *b))
    c = math.sin(p1) * math.sin(p2) + math.cos(p1) * math.cos(p2) * math.cos(l2 - l1)
    return EARTH_RADIUS_KM * math.acos(max(-1.0, min(1.0, c)))


def test_haversine_examples():
    assert haversine((10, 20), (10, 20)) == 0.0
    assert haversine((0, 0), (0, 1)) == pytest.approx(math.pi * EARTH_RADIUS_KM / 180, abs=1e-9)
    assert haversine((0, 0), (0, 1)) == pytest.approx(111.195, abs=1e-3)
    assert haversine((0, 0), (0, 180)) == pytest.approx(math.pi * EARTH_RADIUS_KM, abs=1e-6)
    assert haversine((0, 0), (0, 180)) == pytest.approx(20015.1, abs=0.1)


@settings(max_examples=300, deadline=None)
@given(point, point, point)
def test_haversine_metric(a, b, c):
    assert haversine(a, b) == pytest.approx(haversine(b, a), abs=1e-9)
    assert haversine(a, a) == 0.0
    assert haversine(a, c) <= haversine(a, b) + haversine(b, c) + 1e-9


@settings(max_examples=100, deadline=None)
@given(point, point)
def test_haversine_matches_cosine_law(a, b):
    assert haversine(a, b) == pytest.approx(oracle_km(a, b), abs=1e-3)


def line_catalog(kms, cat="c"):
    return {f"v{i}": Venue(f"v{i}", cat, 0.0, offset_east(k)) for i, k in enumerate(kms)}


def test_venues_within_examples():
    cat = line_catalog([0, 1, 2, 3])
    cat["o"] = Venue("o", "other", 0.0, offset_east(0.5))
    idx = SpatialIndex(cat, 1.0)
    center = cat["v0"]
    assert venues_within(idx, center, 2.5, "c") == {"v0", "v1", "v2"}
    assert venues_within(idx, center, 0.0, "c") == {"v0"}
    assert venues_within(idx, center, 5.0, "nothing") == set()
    with pytest.raises(ValueError):
        venues_within(idx, center, -1.0)


def test_relevance_examples():
    cat = line_catalog([0, 1, 2])
    idx = SpatialIndex(cat, 1.0)
    # neighbours at exactly 1 km, with a hair of slack for the degree conversion
    r = 1.0 + 1e-9
    assert [relevance(idx, cat[v], r) for v in ("v0", "v1", "v2")] == [1, 2, 1]
    assert relevance_all(idx, r) == {"v0": 1, "v1": 2, "v2": 1}
    assert relevance_all(idx, 0.0) == {"v0": 0, "v1": 0, "v2": 0}
    single = {"a": Venue("a", "c", 5, 5)}
    assert relevance(SpatialIndex(single), single["a"], 10.0) == 0


def random_catalog(rng, n, spread):
    lat = rng.uniform(-spread, spread, n) + 40
    lon = rng.uniform(-spread, spread, n) - 74
    cats = rng.integers(0, 4, n)
    return {f"v{i:03d}": Venue(f"v{i:03d}", f"c{cats[i]}", float(lat[i]), float(lon[i])) for i in range(n)}


@pytest.mark.parametrize("seed", range(5))
def test_venues_within_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    cat = random_catalog(rng, int(rng.integers(1, 500)), spread=0.3)
    idx = SpatialIndex(cat, float(rng.uniform(0.2, 5)))
    vs = list(cat.values())
    for _ in range(100):
        c = vs[rng.integers(len(vs))]
        r = float(rng.exponential(5))
        want_cat = None if rng.random() < 0.5 else f"c{rng.integers(4)}"
        brute = {v.venue_id for v in vs if haversine((c.lat, c.lon), (v.lat, v.lon)) <= r
                 and (want_cat is None or v.category == want_cat)}
        assert venues_within(idx, c, r, want_cat) == brute


def test_venues_within_antimeridian_and_pole():
    cat = {"e": Venue("e", "c", 0.0, 179.99), "w": Venue("w", "c", 0.0, -179.99),
           "n1": Venue("n1", "c", 89.99, 0.0), "n2": Venue("n2", "c", 89.99, 180.0)}
    idx = SpatialIndex(cat, 1.0)
    assert venues_within(idx, cat["e"], 3.0) == {"e", "w"}
    assert venues_within(idx, cat["n1"], 3.0) == {"n1", "n2"}


@pytest.mark.parametrize("seed", range(3))
def test_relevance_identity(seed):
    rng = np.random.default_rng(100 + seed)
    cat = random_catalog(rng, 300, spread=0.1)
    idx = SpatialIndex(cat, 1.0)
    r_star = float(rng.uniform(0.5, 4))
    rel = relevance_all(idx, r_star)
    for v in list(cat.values())[:60]:
        within = venues_within(idx, v, r_star)
        assert rel[v.venue_id] == relevance(idx, v, r_star) == len(within) - (v.venue_id in within)


def test_jump_distribution_examples():
    cat = [venue("A", lon=0.0), venue("B", lon=offset_east(1)), venue("C", lon=offset_east(3))]
    d = dataset([("u", "A", T0), ("u", "B", T0 + 1), ("u", "C", T0 + 2)], cat)
    dist = build_jump_distribution(d)
    assert sorted(dist.samples) == pytest.approx([1.0, 2.0], abs=1e-9)
    d2 = dataset([("u", "A", T0), ("w", "B", T0 + 1)], cat)
    assert len(build_jump_distribution(d2)) == 0
    assert JumpLengthDistribution(np.array([1.0, 2.0, 9.0])).median == 2.0


def test_sample_jump():
    rng = np.random.default_rng(0)
    assert {sample_jump(JumpLengthDistribution(np.array([5.0])), rng) for _ in range(20)} == {5.0}
    dist = JumpLengthDistribution(np.array([1.0, 2.0, 3.0]))
    draws = np.array([sample_jump(dist, rng) for _ in range(30000)])
    for x in (1.0, 2.0, 3.0):
        assert abs(np.mean(draws == x) - 1 / 3) < 0.02
    a = [sample_jump(dist, np.random.default_rng(7)) for _ in range(5)]
    b = [sample_jump(dist, np.random.default_rng(7)) for _ in range(5)]
    assert a == b
    with pytest.raises(ValueError):
        sample_jump(JumpLengthDistribution(np.empty(0)), rng)
