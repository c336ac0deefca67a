"""Loading, filtering and splitting of check-in data.

The raw input follows the layout of the public Foursquare check-in dumps:
one row per check-in with the columns

    user_id, venue_id, category_id, category_name, lat, lon, tz_offset_minutes, utc_time

separated by tabs or commas. A second, canonical layout
(``user_id,venue_id,category,lat,lon,timestamp_iso8601`` with a header) is
written by :func:`write_events` and read back by :func:`load_checkins`.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping

logger = logging.getLogger(__name__)

SECONDS_PER_DAY = 86400

DEFAULT_EXCLUDED_CATEGORIES = frozenset({
    "Train",
    "Transport Hub",
    "Transportation Service",
    "Travel and Transportation",
    "Boat or Ferry",
    "Platform",
    "Road",
    "Island",
    "River",
    "Housing Development",
    "Meeting Room",
    "Conference Room",
    "Office",
    "Home (private)",
    "Apartment or Condo",
    "Unknown",
})

CANONICAL_COLUMNS = ("user_id", "venue_id", "category", "lat", "lon", "timestamp_iso8601")


class MalformedRowError(ValueError):
    """Raised for an unparsable input row under the ``fail`` policy."""


@dataclass(frozen=True)
class Venue:
    venue_id: str
    category: str
    lat: float
    lon: float
    first_level_category: str | None = None

    def __post_init__(self):
        if not (-90.0 <= self.lat <= 90.0) or not (-180.0 <= self.lon <= 180.0):
            raise ValueError(f"venue {self.venue_id!r}: coordinates out of range ({self.lat}, {self.lon})")


@dataclass(frozen=True, slots=True)
class VisitEvent:
    user_id: str
    venue_id: str
    timestamp: int  # UTC epoch seconds


@dataclass(frozen=True)
class Dataset:
    events: tuple[VisitEvent, ...]
    catalog: Mapping[str, Venue]
    users: frozenset[str]
    skipped_rows: Mapping[str, int] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for a, b in zip(self.events, self.events[1:]):
            if b.timestamp < a.timestamp:
                raise ValueError("events must be sorted by timestamp")

    @classmethod
    def from_events(cls, events: Iterable[VisitEvent], catalog: Mapping[str, Venue], **kw) -> "Dataset":
        events = tuple(sorted(events, key=lambda e: e.timestamp))
        missing = {e.venue_id for e in events} - catalog.keys()
        if missing:
            raise KeyError(f"events reference {len(missing)} venues absent from the catalog")
        return cls(events, dict(catalog), frozenset(e.user_id for e in events), **kw)

    def __len__(self) -> int:
        return len(self.events)

    @property
    def start(self) -> int | None:
        return self.events[0].timestamp if self.events else None

    def category_of(self, venue_id: str) -> str:
        return self.catalog[venue_id].category

    def categories(self) -> set[str]:
        return {v.category for v in self.catalog.values()}


@dataclass(frozen=True)
class SplitSpec:
    t_train: float = 210.0
    t_max: float = 304.0

    def __post_init__(self):
        if not 0 < self.t_train < self.t_max:
            raise ValueError(f"need 0 < t_train < t_max, got {self.t_train}, {self.t_max}")


def parse_timestamp(text: str) -> int:
    """Parse a UTC timestamp, either in the dump format or ISO 8601."""
    text = text.strip()
    try:
        dt = datetime.strptime(text, "%a %b %d %H:%M:%S %z %Y")
    except ValueError:
        dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(dt.timestamp())


def format_timestamp(ts: int) -> str:
    return datetime.fromtimestamp(ts, tz=timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def _sniff_delimiter(first_line: str) -> str:
    return "\t" if "\t" in first_line else ","


def load_checkins(path, fmt: str = "auto", on_error: str = "skip", encoding: str = "latin-1") -> Dataset:
    """Read a check-in file into a chronologically sorted :class:`Dataset`.

    Parameters
    ----------
    path : path-like
        TSV/CSV check-in dump, or a canonical event CSV.
    fmt : {"auto", "raw", "canonical"}
        Column layout. ``auto`` picks ``canonical`` when the first line is the
        canonical header.
    on_error : {"skip", "fail"}
        Malformed rows are either skipped and counted, or raise
        :class:`MalformedRowError`.

    The first occurrence of a venue fixes its coordinates and category.
    """
    if on_error not in ("skip", "fail"):
        raise ValueError("on_error must be 'skip' or 'fail'")
    path = Path(path)
    with path.open("r", encoding=encoding, newline="") as fh:
        text = fh.read()
    lines = text.splitlines()
    if not lines:
        return Dataset((), {}, frozenset())

    delim = _sniff_delimiter(lines[0])
    rows = csv.reader(lines, delimiter=delim)
    if fmt == "auto":
        fmt = "canonical" if lines[0].strip().split(delim)[: len(CANONICAL_COLUMNS)] == list(CANONICAL_COLUMNS) else "raw"
    if fmt == "canonical":
        next(rows)

    catalog: dict[str, Venue] = {}
    events: list[VisitEvent] = []
    skipped: Counter = Counter()
    for lineno, row in enumerate(rows, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            if fmt == "raw":
                user, venue, _cat_id, category, lat, lon, _tz, utc = row[:8]
            else:
                user, venue, category, lat, lon, utc = row[:6]
            lat, lon = float(lat), float(lon)
        except ValueError as exc:
            if on_error == "fail":
                raise MalformedRowError(f"{path}:{lineno}: {exc}") from exc
            skipped["malformed"] += 1
            continue
        try:
            ts = parse_timestamp(utc)
        except ValueError as exc:
            if on_error == "fail":
                raise MalformedRowError(f"{path}:{lineno}: bad timestamp {utc!r}") from exc
            skipped["timestamp"] += 1
            continue
        if venue not in catalog:
            try:
                catalog[venue] = Venue(venue, category, lat, lon)
            except ValueError as exc:
                if on_error == "fail":
                    raise MalformedRowError(f"{path}:{lineno}: {exc}") from exc
                skipped["coordinates"] += 1
                continue
        events.append(VisitEvent(user, venue, ts))

    if skipped:
        logger.warning("skipped %d malformed rows in %s: %s", sum(skipped.values()), path, dict(skipped))
    return Dataset.from_events(events, catalog, skipped_rows=dict(skipped))


def write_events(dataset: Dataset, path, events: Iterable[VisitEvent] | None = None) -> None:
    """Write events in the canonical sorted CSV layout."""
    events = dataset.events if events is None else events
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CANONICAL_COLUMNS)
        for e in events:
            v = dataset.catalog[e.venue_id]
            w.writerow([e.user_id, e.venue_id, v.category, repr(v.lat), repr(v.lon), format_timestamp(e.timestamp)])


def preprocess(dataset: Dataset, excluded: Iterable[str] | None = None) -> Dataset:
    """Drop check-ins to excluded categories and prune unused venues."""
    excluded = DEFAULT_EXCLUDED_CATEGORIES if excluded is None else frozenset(excluded)
    keep = [e for e in dataset.events if dataset.catalog[e.venue_id].category not in excluded]
    used = {e.venue_id for e in keep}
    catalog = {vid: v for vid, v in dataset.catalog.items() if vid in used}
    return Dataset(tuple(keep), catalog, frozenset(e.user_id for e in keep), dataset.skipped_rows)


def split(dataset: Dataset, spec: SplitSpec) -> tuple[Dataset, Dataset]:
    """Partition into (train, post) by days elapsed since the first event."""
    if not dataset.events:
        return dataset, dataset
    start = dataset.start
    t_train = start + spec.t_train * SECONDS_PER_DAY
    t_max = start + spec.t_max * SECONDS_PER_DAY
    train = tuple(e for e in dataset.events if e.timestamp <= t_train)
    post = tuple(e for e in dataset.events if t_train < e.timestamp <= t_max)
    if not post:
        logger.warning("post-training split is empty (t_train=%s days)", spec.t_train)
    return (
        Dataset(train, dataset.catalog, frozenset(e.user_id for e in train)),
        Dataset(post, dataset.catalog, frozenset(e.user_id for e in post)),
    )


def load_category_hierarchy(path) -> dict[str, str]:
    """Read a ``second_level,first_level`` mapping. A missing file gives ``{}``."""
    if path is None or not Path(path).exists():
        return {}
    mapping: dict[str, str] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if len(row) < 2 or not row[0].strip():
                continue
            child, parent = row[0].strip(), row[1].strip()
            if mapping.get(child, parent) != parent:
                raise ValueError(f"category {child!r} mapped to both {mapping[child]!r} and {parent!r}")
            mapping[child] = parent
    return mapping


def attach_hierarchy(dataset: Dataset, hierarchy: Mapping[str, str]) -> Dataset:
    """Return a copy whose venues carry their first-level category."""
    catalog = {
        vid: Venue(v.venue_id, v.category, v.lat, v.lon, hierarchy.get(v.category, v.first_level_category))
        for vid, v in dataset.catalog.items()
    }
    return Dataset(dataset.events, catalog, dataset.users, dataset.skipped_rows)
