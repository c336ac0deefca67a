import numpy as np
import pytest

from venueloop.ingest import Dataset, Venue, VisitEvent, load_category_hierarchy, load_checkins, preprocess
from venueloop.synthetic import CityParams, write_city

DAY = 86400
T0 = 1333411200  # 2012-04-03T00:00:00Z


def venue(vid, cat="c", lat=0.0, lon=0.0, fl=None):
    return Venue(vid, cat, float(lat), float(lon), fl)


def offset_east(km, lat=0.0):
    """Longitude offset (degrees) that is ``km`` away along the equator."""
    from venueloop.geo import KM_PER_DEGREE

    return km / KM_PER_DEGREE


def dataset(events, catalog):
    return Dataset.from_events([VisitEvent(u, v, t) for u, v, t in events], {c.venue_id: c for c in catalog})


@pytest.fixture(scope="session")
def small_city(tmp_path_factory):
    """A 60-user synthetic city, preprocessed; (dataset, hierarchy, checkins path, hierarchy path)."""
    d = tmp_path_factory.mktemp("city")
    checkins, hier = d / "city.tsv", d / "hier.csv"
    write_city(CityParams(n_users=60, n_venues=800), checkins, hier, seed=3)
    return preprocess(load_checkins(checkins)), load_category_hierarchy(hier), checkins, hier


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
