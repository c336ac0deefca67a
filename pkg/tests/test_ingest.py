import dataclasses

import pytest
from hypothesis import given, settings, strategies as st

from venueloop.ingest import (
    DEFAULT_EXCLUDED_CATEGORIES,
    Dataset,
    MalformedRowError,
    SplitSpec,
    VisitEvent,
    attach_hierarchy,
    load_category_hierarchy,
    load_checkins,
    preprocess,
    split,
    write_events,
)

from conftest import DAY, T0, dataset, venue

RAW = "{u}\t{v}\tcid\t{c}\t{lat}\t{lon}\t-240\t{t}\n"


def stamp(day, hour=12):
    from datetime import datetime, timezone

    return datetime.fromtimestamp(T0 + day * DAY + hour * 3600, tz=timezone.utc).strftime("%a %b %d %H:%M:%S +0000 %Y")


def test_empty_file(tmp_path):
    p = tmp_path / "empty.tsv"
    p.write_text("")
    d = load_checkins(p)
    assert len(d) == 0 and len(d.catalog) == 0


def test_duplicate_venue_first_coordinates_win(tmp_path):
    p = tmp_path / "dup.tsv"
    p.write_text(
        RAW.format(u="u1", v="A", c="Bar", lat=40.7, lon=-74.0, t=stamp(0))
        + RAW.format(u="u2", v="B", c="Bar", lat=40.8, lon=-74.1, t=stamp(1))
        + RAW.format(u="u1", v="A", c="Bar", lat=41.0, lon=-73.0, t=stamp(2))
    )
    d = load_checkins(p)
    assert len(d) == 3 and len(d.catalog) == 2
    assert (d.catalog["A"].lat, d.catalog["A"].lon) == (40.7, -74.0)


def test_timestamps_are_utc(tmp_path):
    p = tmp_path / "tz.tsv"
    p.write_text(RAW.format(u="u", v="A", c="Bar", lat=1, lon=1, t="Tue Apr 03 18:00:06 +0000 2012"))
    assert load_checkins(p).events[0].timestamp == 1333476006


def test_malformed_rows_skipped_and_counted(tmp_path):
    p = tmp_path / "bad.tsv"
    p.write_text(
        RAW.format(u="u1", v="A", c="Bar", lat=40.7, lon=-74.0, t=stamp(0))
        + RAW.format(u="u1", v="B", c="Bar", lat="north", lon=-74.0, t=stamp(0))
        + RAW.format(u="u1", v="C", c="Bar", lat=95.0, lon=-74.0, t=stamp(0))
        + RAW.format(u="u1", v="D", c="Bar", lat=40.0, lon=-74.0, t="yesterday")
    )
    d = load_checkins(p)
    assert len(d) == 1
    assert sum(d.skipped_rows.values()) == 3
    with pytest.raises(MalformedRowError):
        load_checkins(p, on_error="fail")


def test_preprocess_identity_with_empty_exclusion():
    d = dataset([("u", "a", T0), ("u", "b", T0 + 1)], [venue("a", "Bar"), venue("b", "Office")])
    assert preprocess(d, excluded=()) == d


def test_preprocess_drops_office():
    cats = ["Office", "Bar", "Office", "Park", "Cafe"]
    d = dataset([("u", f"v{i}", T0 + i) for i in range(5)], [venue(f"v{i}", c) for i, c in enumerate(cats)])
    out = preprocess(d, excluded={"Office"})
    assert len(out) == 3
    assert set(out.catalog) == {"v1", "v3", "v4"}


def test_default_exclusions_cover_transport():
    for c in ("Train", "Transport Hub", "Transportation Service"):
        assert c in DEFAULT_EXCLUDED_CATEGORIES


def test_split_days():
    d = dataset([("u", "a", T0 + day * DAY) for day in (0, 99, 249, 399)], [venue("a")])
    # days measured from the first event: day offsets 0, 99, 249, 399 correspond to days 1, 100, 250, 400
    train, post = split(d, SplitSpec(210, 304))
    assert [e.timestamp for e in train.events] == [T0, T0 + 99 * DAY]
    assert [e.timestamp for e in post.events] == [T0 + 249 * DAY]


def test_split_all_train_when_nothing_after():
    d = dataset([("u", "a", T0 + day * DAY) for day in (0, 10, 20)], [venue("a")])
    train, post = split(d, SplitSpec(303.999, 304))
    assert len(train) == 3 and len(post) == 0


def test_split_rejects_bad_spec():
    with pytest.raises(ValueError):
        SplitSpec(304, 210)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("uvw"), st.sampled_from("abcd"), st.integers(0, 400 * DAY)), max_size=40))
def test_split_partitions(rows):
    d = dataset([(u, v, T0 + t) for u, v, t in rows], [venue(x) for x in "abcd"])
    train, post = split(d, SplitSpec())
    if not d.events:
        return
    cut = d.start + 210 * DAY
    assert all(e.timestamp <= cut for e in train.events)
    assert all(cut < e.timestamp <= d.start + 304 * DAY for e in post.events)
    assert len(train) + len(post) == sum(e.timestamp <= d.start + 304 * DAY for e in d.events)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("ab"), st.sampled_from("wxyz"), st.integers(0, 1000)), max_size=30))
def test_preprocess_idempotent(rows):
    cats = {"w": "Office", "x": "Bar", "y": "Train", "z": "Park"}
    d = dataset([(u, v, T0 + t) for u, v, t in rows], [venue(v, c) for v, c in cats.items()])
    once = preprocess(d)
    assert preprocess(once) == once


def test_roundtrip(tmp_path, small_city):
    d = small_city[0]
    p1, p2 = tmp_path / "a.csv", tmp_path / "b.csv"
    write_events(d, p1)
    back = load_checkins(p1)
    assert back.events == d.events
    assert {k: dataclasses.replace(v, first_level_category=None) for k, v in d.catalog.items()} == back.catalog
    write_events(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_hierarchy(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("Coffee Shop,Food\n")
    assert load_category_hierarchy(p)["Coffee Shop"] == "Food"
    assert load_category_hierarchy(tmp_path / "missing.csv") == {}


def test_hierarchy_size_159(tmp_path):
    p = tmp_path / "h159.csv"
    p.write_text("".join(f"Cat {i},Group {i % 9}\n" for i in range(159)))
    assert len(load_category_hierarchy(p)) == 159


def test_hierarchy_conflict(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("Bar,Nightlife\nBar,Food\n")
    with pytest.raises(ValueError):
        load_category_hierarchy(p)


def test_attach_hierarchy():
    d = dataset([("u", "a", T0)], [venue("a", "Bar")])
    assert attach_hierarchy(d, {"Bar": "Nightlife"}).catalog["a"].first_level_category == "Nightlife"
