"""Inequality, co-location network and attention-shift measurements."""

from __future__ import annotations

import bisect
import itertools
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np


def gini(counts) -> float:
    """Gini index of non-negative counts (sorted ascending internally).

    >>> round(gini([1, 1, 8]), 4)
    0.4667
    """
    x = np.sort(np.asarray(counts, dtype=float))
    if x.size == 0 or np.any(x < 0) or x.sum() <= 0:
        raise ValueError("gini needs non-negative counts with a positive total")
    n = x.size
    rank_weight = n + 1 - np.arange(1, n + 1)
    return float((n + 1 - 2 * np.dot(rank_weight, x) / x.sum()) / n)


def venue_counts(visits: Iterable) -> Counter:
    return Counter(v.venue_id for v in visits)


def collective_gini(visits: Iterable) -> float:
    """Gini of visit totals over the venues that were visited at least once."""
    return gini(list(venue_counts(visits).values()))


def individual_ginis(visits: Iterable) -> dict[str, float]:
    per_user: dict[str, Counter] = defaultdict(Counter)
    for v in visits:
        per_user[v.user_id][v.venue_id] += 1
    return {u: gini(list(c.values())) for u, c in per_user.items()}


def mean_individual_gini(visits: Iterable) -> float:
    g = individual_ginis(visits)
    if not g:
        raise ValueError("mean individual Gini of an empty visit set")
    return float(np.mean([g[u] for u in sorted(g)]))


def lorenz(counts) -> list[tuple[float, float]]:
    x = np.sort(np.asarray(counts, dtype=float))
    if x.size == 0 or x.sum() <= 0:
        raise ValueError("lorenz needs counts with a positive total")
    share = np.cumsum(x) / x.sum()
    pts = [(0.0, 0.0)] + [((i + 1) / x.size, float(s)) for i, s in enumerate(share)]
    pts[-1] = (1.0, 1.0)
    return pts


def rank_size(counts) -> list[tuple[int, int]]:
    """(rank, visits) pairs by descending visits.

    ``counts`` may be a sequence or a venue -> count mapping; ties keep input
    order for sequences and ascending venue id for mappings.
    """
    if isinstance(counts, Mapping):
        items = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        vals = [c for _, c in items]
    else:
        vals = sorted(counts, key=lambda c: -c)
    return [(i + 1, int(c)) for i, c in enumerate(vals)]


@dataclass
class ColocationNetwork:
    nodes: tuple[str, ...]
    edges: dict[tuple[str, str], set] = field(default_factory=dict)

    def degrees(self) -> dict[str, int]:
        deg = dict.fromkeys(self.nodes, 0)
        for a, b in self.edges:
            deg[a] += 1
            deg[b] += 1
        return deg

    @property
    def edge_count(self) -> int:
        return len(self.edges)

    def has_edge(self, a, b) -> bool:
        return (min(a, b), max(a, b)) in self.edges


def colocation(visits: Sequence, epochs: Sequence[tuple[float, float]]) -> ColocationNetwork:
    """Link users who visited the same venue within the same closed time window."""
    ordered = sorted(visits, key=lambda v: v.timestamp)
    times = [v.timestamp for v in ordered]
    nodes: set[str] = set()
    edges: dict[tuple[str, str], set] = {}
    for w, (t1, t2) in enumerate(epochs):
        lo, hi = bisect.bisect_left(times, t1), bisect.bisect_right(times, t2)
        at_venue: dict[str, set[str]] = defaultdict(set)
        for v in ordered[lo:hi]:
            at_venue[v.venue_id].add(v.user_id)
            nodes.add(v.user_id)
        for venue, users in at_venue.items():
            for a, b in itertools.combinations(sorted(users), 2):
                edges.setdefault((a, b), set()).add((venue, w))
    return ColocationNetwork(tuple(sorted(nodes)), edges)


def epoch_windows(visits: Iterable) -> list[tuple[int, int]]:
    """Closed [first, last] timestamp window of each simulation epoch."""
    span: dict[int, list[int]] = {}
    for v in visits:
        s = span.setdefault(v.epoch_index, [v.timestamp, v.timestamp])
        s[0] = min(s[0], v.timestamp)
        s[1] = max(s[1], v.timestamp)
    return [tuple(span[k]) for k in sorted(span)]


def degree_distribution(net: ColocationNetwork) -> dict[int, float]:
    deg = net.degrees()
    n = len(deg)
    return {k: c / n for k, c in sorted(Counter(deg.values()).items())} if n else {}


def degree_slope(net: ColocationNetwork) -> float:
    """Absolute slope of a least-squares line through (ln k, ln P(k)), k >= 1."""
    pk = {k: p for k, p in degree_distribution(net).items() if k >= 1 and p > 0}
    if len(pk) < 2:
        raise ValueError("degree slope needs at least two distinct positive degrees")
    k = np.array(list(pk), dtype=float)
    p = np.array(list(pk.values()))
    slope, _ = np.polyfit(np.log(k), np.log(p), 1)
    return float(abs(slope))


def median_degree(net: ColocationNetwork) -> float:
    return float(np.median(list(net.degrees().values()))) if net.nodes else 0.0


def rich_club(net: ColocationNetwork, h: int = 15) -> list[str]:
    """The ``h`` highest-degree nodes, ties broken by ascending id."""
    if len(net.nodes) < h:
        raise ValueError(f"network has {len(net.nodes)} nodes, fewer than h={h}")
    deg = net.degrees()
    return sorted(deg, key=lambda u: (-deg[u], u))[:h]


def _density(net: ColocationNetwork, members: set) -> float:
    m = len(members)
    if m < 2:
        return 0.0
    inside = sum(1 for a, b in net.edges if a in members and b in members)
    return inside / (m * (m - 1) / 2)


def richclub_density(net: ColocationNetwork, h: int = 15) -> float:
    return _density(net, set(rich_club(net, h)))


def peripheral_density(net: ColocationNetwork, h: int = 15) -> float:
    """Edge density among the nodes outside the rich club (0 when fewer than two remain)."""
    return _density(net, set(net.nodes) - set(rich_club(net, h)))


@dataclass
class DecileReport:
    deciles: list[list[str]]
    train_share: np.ndarray
    exploration_share: np.ndarray

    @property
    def delta(self) -> np.ndarray:
        return self.exploration_share - self.train_share


def _decile_split(ordered: list[str], n_groups: int = 10) -> list[list[str]]:
    base, extra = divmod(len(ordered), n_groups)
    out, pos = [], 0
    for g in range(n_groups):
        size = base + (1 if g < extra else 0)
        out.append(ordered[pos:pos + size])
        pos += size
    return out


def decile_report(train_visits: Iterable, exploration_visits: Iterable, min_visitors: int = 3,
                  exploration_only: bool = True) -> DecileReport:
    """Attention share per venue-popularity decile, training vs simulated exploration.

    Deciles rank venues ascending by distinct training visitors (decile 1 least
    popular). With ``exploration_only`` a simulated (user, venue) pair counts
    only if the venue is new to that user relative to training.
    """
    train_pairs = {(v.user_id, v.venue_id) for v in train_visits}
    visitors = Counter(venue for _, venue in train_pairs)
    eligible = sorted((v for v, c in visitors.items() if c >= min_visitors), key=lambda v: (visitors[v], v))
    if len(eligible) < 10:
        raise ValueError(f"only {len(eligible)} venues have >= {min_visitors} training visitors")
    sim_pairs = {(v.user_id, v.venue_id) for v in exploration_visits}
    if exploration_only:
        sim_pairs -= train_pairs
    sim_deg = Counter(venue for _, venue in sim_pairs)

    deciles = _decile_split(eligible)
    train_tot = sum(visitors[v] for v in eligible)
    sim_tot = sum(sim_deg[v] for v in eligible)
    if sim_tot == 0:
        raise ValueError("no simulated exploration edges land on eligible venues")
    train_share = np.array([sum(visitors[v] for v in g) / train_tot for g in deciles])
    sim_share = np.array([sum(sim_deg[v] for v in g) / sim_tot for g in deciles])
    return DecileReport(deciles, train_share, sim_share)


def run_metrics(visits: Sequence, windows: Sequence[tuple[float, float]], h: int = 15) -> dict:
    """Headline numbers for one simulation run."""
    net = colocation(visits, windows)
    out = {
        "mean_individual_gini": mean_individual_gini(visits),
        "collective_gini": collective_gini(visits),
        "node_count": len(net.nodes),
        "edge_count": net.edge_count,
        "median_degree": median_degree(net),
    }
    try:
        out["alpha"] = degree_slope(net)
    except ValueError:
        out["alpha"] = None
    try:
        out["richclub_density"] = richclub_density(net, h)
        out["peripheral_density"] = peripheral_density(net, h)
    except ValueError:
        out["richclub_density"] = out["peripheral_density"] = None
    return out
