"""Simulation driver: replay post-training visits with recommender-mediated choices.

Events between two retraining barriers are independent across users (users
only interact through the retrained model), so each user's events inside an
epoch run as one task on a thread pool. Every user owns a random stream
derived from the master seed and a stable hash of the user id, so outcomes do
not depend on scheduling or on the number of workers.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import time
from collections import Counter, defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import metrics as M
from .geo import JumpLengthDistribution, SpatialIndex, build_jump_distribution, relevance_all, sample_jump
from .ingest import SECONDS_PER_DAY, Dataset, attach_hierarchy, format_timestamp
from .mobility import (
    REC,
    ChoiceContext,
    ExplorationPolicy,
    UserHistory,
    explore_fallback,
    explore_chain,
    exploration_probability,
    return_chain,
)
from .recsys import TrainingHyper, build_interactions, choose_from_scores, score, train
from .recsys.models import Recommender

logger = logging.getLogger(__name__)

_USER_TAG, _TRAIN_TAG, _REPLICATE_TAG = 1, 2, 3


@dataclass(frozen=True)
class SimulationConfig:
    eta: float = 0.0
    delta_days: float = 7.0
    algorithm: str = "UserKNN"
    top_k: int = 20
    exploration: ExplorationPolicy = ExplorationPolicy()
    anchor_mode: str = "trace"
    seed: int = 0
    runs: int = 1
    workers: int = 1
    jump_source: str = "full"
    hyper: TrainingHyper = field(default_factory=TrainingHyper)

    def __post_init__(self):
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")
        if self.delta_days <= 0:
            raise ValueError("delta_days must be positive")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.anchor_mode not in ("trace", "simulated"):
            raise ValueError(f"unknown anchor mode {self.anchor_mode!r}")
        if self.jump_source not in ("full", "train"):
            raise ValueError(f"unknown jump source {self.jump_source!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["exploration"] = asdict(self.exploration)
        return d


def stable_hash(text: str) -> int:
    return int.from_bytes(hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest(), "little")


class RngStreams:
    """Named random streams derived from one master seed."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed) & (2**64 - 1)

    def user(self, user_id: str) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.master_seed, _USER_TAG, stable_hash(user_id)]))

    def training(self, index: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence([self.master_seed, _TRAIN_TAG, index]))


def replicate_seed(master_seed: int, replicate: int) -> int:
    ss = np.random.SeedSequence([int(master_seed) & (2**64 - 1), _REPLICATE_TAG, replicate])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, slots=True)
class SimulatedVisit:
    user_id: str
    venue_id: str
    timestamp: int
    mode: str
    epoch_index: int


@dataclass
class World:
    """Immutable spatial context shared by every decision of a run."""

    catalog: Mapping
    index: SpatialIndex
    jumps: JumpLengthDistribution
    relevance: Mapping[str, int]
    hierarchy: Mapping[str, str]
    venues: tuple[str, ...]

    @classmethod
    def build(cls, train: Dataset, post: Dataset, hierarchy: Mapping[str, str] | None = None,
              jump_source: str = "full") -> "World":
        if hierarchy:
            train = attach_hierarchy(train, hierarchy)
        events = train.events + post.events if jump_source == "full" else train.events
        events = tuple(sorted(events, key=lambda e: e.timestamp))
        jumps = build_jump_distribution(train, events)
        r_star = jumps.median
        index = SpatialIndex(train.catalog, cell_km=max(r_star, 1.0))
        return cls(train.catalog, index, jumps, relevance_all(index, r_star), dict(hierarchy or {}),
                   tuple(index.ids))


@dataclass
class SimulationResult:
    visits: list[SimulatedVisit]
    metadata: dict


def plan_epochs(train_last: int | None, timestamps: Sequence[int], delta_seconds: float) -> tuple[list[int], list[bool]]:
    """Epoch index of every post event, and whether a retrain follows it."""
    t_last = train_last if train_last is not None else (timestamps[0] if timestamps else 0)
    epoch, epochs, triggers = 0, [], []
    for t in timestamps:
        epochs.append(epoch)
        fire = t - t_last > delta_seconds
        triggers.append(fire)
        if fire:
            t_last = t
            epoch += 1
    return epochs, triggers


def venue_selection(user: str, anchor: str, t: int, category: str, model: Recommender | None,
                    config: SimulationConfig, history: UserHistory, world: World,
                    rng: np.random.Generator) -> tuple[str, str]:
    """Choose the venue for one visit and record it in ``history``."""
    r = sample_jump(world.jumps, rng)
    a = world.catalog[anchor]
    cand = list(world.index.ids[world.index.within_idx(a.lat, a.lon, r, category=category)])
    ctx = ChoiceContext(user, category, r, anchor, world.index, history, world.relevance, world.hierarchy)
    if rng.random() < config.eta:
        if cand:
            sc = score(model, user, cand, (anchor, t))
            v, mode = choose_from_scores(sc.venues, sc.normalized, config.top_k, rng), REC
        else:
            v, mode = explore_fallback(ctx, rng)
    else:
        p = exploration_probability(config.exploration, len(world.catalog), history)
        if rng.random() < p:
            v, mode = explore_chain(ctx, rng, cand)
        else:
            v, mode = return_chain(ctx, rng, cand)
    history.add(v)
    return v, mode


def run_simulation(train_set: Dataset, post_set: Dataset, config: SimulationConfig,
                   world: World | None = None, hierarchy: Mapping[str, str] | None = None) -> SimulationResult:
    """Replay ``post_set`` under ``config``, retraining every ``delta_days`` of event time."""
    started = time.perf_counter()
    world = world or World.build(train_set, post_set, hierarchy, config.jump_source)
    streams = RngStreams(config.seed)
    histories: dict[str, UserHistory] = defaultdict(UserHistory)
    last_venue: dict[str, str] = {}
    for e in train_set.events:
        histories[e.user_id].add(e.venue_id)
        last_venue[e.user_id] = e.venue_id
    user_rngs: dict[str, np.random.Generator] = {}

    uses_model = config.eta > 0
    n_trained = 0

    def fit(events, index):
        nonlocal n_trained
        n_trained += 1
        m = build_interactions(events, world.venues)
        return train(config.algorithm, m, config.hyper, streams.training(index), world.catalog)

    model = fit(train_set.events, 0) if uses_model else None

    post = post_set.events
    train_last = train_set.events[-1].timestamp if train_set.events else None
    epochs, triggers = plan_epochs(train_last, [e.timestamp for e in post], config.delta_days * SECONDS_PER_DAY)

    simulated: list[SimulatedVisit] = []
    modes: Counter = Counter()
    retrains = 0
    cold_rec = 0

    def run_user(user: str, items: list[tuple[int, object, int]], model):
        rng = user_rngs[user]
        hist = histories[user]
        out = []
        for i, e, epoch in items:
            c = world.catalog[e.venue_id].category
            anchor = e.venue_id if config.anchor_mode == "trace" else last_venue.get(user, e.venue_id)
            v, mode = venue_selection(user, anchor, e.timestamp, c, model, config, hist, world, rng)
            last_venue[user] = v
            cold = mode == REC and not model.knows(user)
            out.append((i, SimulatedVisit(user, v, e.timestamp, mode, epoch), cold))
        return out

    pool = ThreadPoolExecutor(max_workers=config.workers) if config.workers > 1 else None
    try:
        start = 0
        while start < len(post):
            end = start
            while end < len(post) and not triggers[end]:
                end += 1
            end = min(end + 1, len(post))  # the trigger event belongs to this epoch
            by_user: dict[str, list] = defaultdict(list)
            for i in range(start, end):
                by_user[post[i].user_id].append((i, post[i], epochs[i]))
            for u in by_user:
                if u not in user_rngs:
                    user_rngs[u] = streams.user(u)
                histories[u]  # materialise before workers touch it
            users = sorted(by_user)
            if pool is None:
                results = [run_user(u, by_user[u], model) for u in users]
            else:
                results = list(pool.map(lambda u: run_user(u, by_user[u], model), users))
            batch = sorted((r for res in results for r in res), key=lambda r: r[0])
            for _, sv, cold in batch:
                simulated.append(sv)
                modes[sv.mode] += 1
                cold_rec += cold
            if triggers[end - 1]:
                retrains += 1
                if uses_model:
                    model = fit(train_set.events + tuple(simulated), retrains)
            start = end
    finally:
        if pool is not None:
            pool.shutdown()

    meta = {
        "config": config.to_dict(),
        "seed": config.seed,
        "post_events": len(post),
        "simulated_visits": len(simulated),
        "retrain_count": retrains,
        "models_trained": n_trained,
        "mode_counts": {m: modes[m] for m in sorted(modes)},
        "cold_start_recommendations": cold_rec,
        "wall_time_s": time.perf_counter() - started,
    }
    return SimulationResult(simulated, meta)


def write_simulated_visits(visits: Sequence[SimulatedVisit], catalog: Mapping, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["user_id", "venue_id", "category", "lat", "lon", "timestamp_iso8601", "mode", "epoch_index"])
        for v in visits:
            ven = catalog[v.venue_id]
            w.writerow([v.user_id, v.venue_id, ven.category, repr(ven.lat), repr(ven.lon),
                        format_timestamp(v.timestamp), v.mode, v.epoch_index])


def write_run_metadata(meta: dict, path) -> None:
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


@dataclass
class CellResult:
    eta: float
    algorithm: str
    replicate: int
    seed: int
    metrics: dict | None = None
    error: str | None = None
    result: SimulationResult | None = field(default=None, repr=False)


METRIC_KEYS = ("mean_individual_gini", "collective_gini", "alpha", "richclub_density", "peripheral_density",
               "median_degree", "node_count", "edge_count")


def run_cell(train_set: Dataset, post_set: Dataset, config: SimulationConfig, world: World,
             replicate: int, keep_visits: bool = False, on_cell=None) -> CellResult:
    cell = CellResult(config.eta, config.algorithm, replicate, config.seed)
    try:
        res = run_simulation(train_set, post_set, config, world)
        cell.metrics = M.run_metrics(res.visits, M.epoch_windows(res.visits)) if res.visits else {}
        cell.result = res
        if on_cell is not None:
            on_cell(cell)
        if not keep_visits:
            cell.result = None
    except Exception as exc:  # a failing cell must not stop the sweep
        logger.exception("cell eta=%s algo=%s rep=%d failed", config.eta, config.algorithm, replicate)
        cell.error = f"{type(exc).__name__}: {exc}"
    return cell


def sweep(train_set: Dataset, post_set: Dataset, etas: Sequence[float], algorithms: Sequence[str],
          base: SimulationConfig, world: World | None = None, keep_visits: bool = False,
          on_cell=None) -> list[CellResult]:
    """Run every (eta, algorithm, replicate) cell; replicate r uses the same seed across cells.

    ``on_cell`` is called with each successful cell while its visits are still attached.
    """
    world = world or World.build(train_set, post_set, None, base.jump_source)
    cells = []
    for algo, eta, rep in grid(etas, algorithms, base.runs):
        cfg = replace(base, eta=eta, algorithm=algo, seed=replicate_seed(base.seed, rep))
        cells.append(run_cell(train_set, post_set, cfg, world, rep, keep_visits, on_cell))
    return cells


def grid(etas: Sequence[float], algorithms: Sequence[str], runs: int) -> list[tuple[str, float, int]]:
    """(algorithm, eta, replicate) for every sweep cell, in execution order."""
    return [(a, float(e), r) for a in algorithms for e in etas for r in range(runs)]


def aggregate(cells: Sequence[CellResult]) -> list[dict]:
    """Mean and population standard deviation of each metric per (eta, algorithm)."""
    groups: dict[tuple[str, float], list[CellResult]] = defaultdict(list)
    for c in cells:
        groups[(c.algorithm, c.eta)].append(c)
    rows = []
    for (algo, eta), group in sorted(groups.items()):
        ok = [c for c in group if c.metrics]
        row = {"algorithm": algo, "eta": eta, "runs": len(ok), "failed": len(group) - len(ok)}
        for k in METRIC_KEYS:
            vals = [c.metrics[k] for c in ok if c.metrics.get(k) is not None]
            row[f"{k}_mean"] = float(np.mean(vals)) if vals else None
            row[f"{k}_std"] = float(np.std(vals)) if vals else None
        rows.append(row)
    return rows
