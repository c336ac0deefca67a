"""Autonomous venue choice: exploration, preferential return and fallbacks."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .geo import SpatialIndex, haversine_many

REC = "rec"
RETURN = "return"
EXPLORE = "explore"
FALLBACK_FIRST_LEVEL = "fallback_first_level"
FALLBACK_NEAREST = "fallback_nearest"
FALLBACK_TO_EXPLORE = "fallback_to_explore"
DEGENERATE = "degenerate"
MODES = (REC, RETURN, EXPLORE, FALLBACK_FIRST_LEVEL, FALLBACK_NEAREST, FALLBACK_TO_EXPLORE, DEGENERATE)


@dataclass
class UserHistory:
    visit_counts: Counter = field(default_factory=Counter)

    @property
    def distinct_count(self) -> int:
        return len(self.visit_counts)

    def add(self, venue_id: str, n: int = 1) -> None:
        self.visit_counts[venue_id] += n

    def __contains__(self, venue_id) -> bool:
        return venue_id in self.visit_counts


@dataclass(frozen=True)
class ExplorationPolicy:
    mode: str = "fixed_global"  # or "per_user"
    rho: float = 0.6
    gamma: float = 0.21

    def __post_init__(self):
        if self.mode not in ("fixed_global", "per_user"):
            raise ValueError(f"unknown exploration mode {self.mode!r}")


def exploration_probability(policy: ExplorationPolicy, catalog_size: int, history: UserHistory | None = None) -> float:
    if policy.mode == "fixed_global":
        n = max(catalog_size, 1)
    else:
        n = max(history.distinct_count if history is not None else 0, 1)
    return float(min(1.0, max(0.0, policy.rho * n ** (-policy.gamma))))


def _weighted_pick(ids: Sequence[str], weights: np.ndarray, rng: np.random.Generator) -> str:
    total = weights.sum()
    if total <= 0:
        return ids[rng.integers(len(ids))]
    return ids[rng.choice(len(ids), p=weights / total)]


def preferential_return(history: UserHistory, category: str, catalog: Mapping, rng: np.random.Generator,
                        level: str = "second") -> str | None:
    """Revisit a past venue of ``category`` with probability proportional to its visit count.

    ``level="first"`` matches on the venues' first-level category instead.
    """
    if level == "first":
        ids = sorted(v for v in history.visit_counts if catalog[v].first_level_category == category)
    else:
        ids = sorted(v for v in history.visit_counts if catalog[v].category == category)
    if not ids:
        return None
    return _weighted_pick(ids, np.array([history.visit_counts[v] for v in ids], dtype=float), rng)


def explore(candidates: Sequence[str], history: UserHistory, relevance_of: Callable[[str], int] | Mapping,
            rng: np.random.Generator, exclude: str | None = None) -> str | None:
    """Pick an unvisited candidate with probability proportional to its relevance."""
    rel = relevance_of.__getitem__ if isinstance(relevance_of, Mapping) else relevance_of
    ids = sorted(v for v in candidates if v not in history and v != exclude)
    if not ids:
        return None
    return _weighted_pick(ids, np.array([rel(v) for v in ids], dtype=float), rng)


@dataclass
class ChoiceContext:
    """Everything the fallback chain needs about one decision."""

    user: str
    category: str
    radius: float
    anchor: str
    index: SpatialIndex
    history: UserHistory
    relevance: Mapping[str, int]
    hierarchy: Mapping[str, str] = field(default_factory=dict)

    def first_level(self) -> str | None:
        return self.hierarchy.get(self.category)

    def candidates(self, category: str | None = None, first_level: str | None = None) -> list[str]:
        a = self.index.catalog[self.anchor]
        idx = self.index.within_idx(a.lat, a.lon, self.radius, category=category, first_level=first_level)
        return list(self.index.ids[idx])


def nearest_of_category(index: SpatialIndex, anchor: str, category: str) -> str | None:
    """Closest venue of ``category`` to ``anchor`` other than ``anchor``; ties by id."""
    pool = index.by_category.get(category)
    if pool is None or pool.size == 0:
        return None
    a = index.catalog[anchor]
    d = haversine_many(a.lat, a.lon, index.lat[pool], index.lon[pool])
    ids = index.ids[pool]
    keep = ids != anchor
    if not keep.any():
        return None
    d, ids = d[keep], ids[keep]
    # pool is sorted by id, so argmin returns the lowest id among ties
    return str(ids[int(np.argmin(d))])


def explore_chain(ctx: ChoiceContext, rng: np.random.Generator, primary: list[str] | None = None) -> tuple[str, str]:
    """Exploration with its fallbacks; returns (venue, mode)."""
    primary = ctx.candidates(category=ctx.category) if primary is None else primary
    v = explore(primary, ctx.history, ctx.relevance, rng, exclude=ctx.anchor)
    if v is not None:
        return v, EXPLORE
    return explore_fallback(ctx, rng)


def explore_fallback(ctx: ChoiceContext, rng: np.random.Generator) -> tuple[str, str]:
    fl = ctx.first_level()
    if fl is not None:
        v = explore(ctx.candidates(first_level=fl), ctx.history, ctx.relevance, rng, exclude=ctx.anchor)
        if v is not None:
            return v, FALLBACK_FIRST_LEVEL
    v = nearest_of_category(ctx.index, ctx.anchor, ctx.category)
    if v is not None:
        return v, FALLBACK_NEAREST
    return ctx.anchor, DEGENERATE


def return_chain(ctx: ChoiceContext, rng: np.random.Generator, primary: list[str] | None = None) -> tuple[str, str]:
    """Preferential return with its fallbacks; returns (venue, mode)."""
    catalog = ctx.index.catalog
    v = preferential_return(ctx.history, ctx.category, catalog, rng)
    if v is not None:
        return v, RETURN
    fl = ctx.first_level()
    if fl is not None:
        v = preferential_return(ctx.history, fl, catalog, rng, level="first")
        if v is not None:
            return v, FALLBACK_FIRST_LEVEL
    v, mode = explore_chain(ctx, rng, primary)
    return v, FALLBACK_TO_EXPLORE if mode == EXPLORE else mode


def fallback(stage: str, ctx: ChoiceContext, rng: np.random.Generator) -> tuple[str, str]:
    """Fallback chain after a failed primary selection at ``stage`` ("explore" or "return")."""
    if stage == "explore":
        return explore_fallback(ctx, rng)
    if stage == "return":
        catalog = ctx.index.catalog
        fl = ctx.first_level()
        if fl is not None:
            v = preferential_return(ctx.history, fl, catalog, rng, level="first")
            if v is not None:
                return v, FALLBACK_FIRST_LEVEL
        v, mode = explore_chain(ctx, rng)
        return v, FALLBACK_TO_EXPLORE if mode == EXPLORE else mode
    raise ValueError(f"unknown fallback stage {stage!r}")
