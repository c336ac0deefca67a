from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from .interactions import InteractionMatrix, build_interactions
from .models import MODEL_KINDS, Recommender, minmax
from .optim import TrainingHyper

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


@dataclass(frozen=True)
class ScoredCandidates:
    venues: tuple[str, ...]
    raw: np.ndarray
    normalized: np.ndarray
    cold_start: bool = False

    @property
    def pairs(self):
        return list(zip(self.venues, self.raw.tolist()))


def train(kind: str, m: InteractionMatrix, hyper: TrainingHyper | None = None,
          rng: np.random.Generator | None = None, catalog: Mapping | None = None) -> Recommender:
    """Fit a fresh model of ``kind`` on ``m``."""
    try:
        cls = MODEL_KINDS[kind]
    except KeyError:
        raise ValueError(f"unknown recommender kind {kind!r}; known: {sorted(MODEL_KINDS)}") from None
    rng = rng if rng is not None else np.random.default_rng(0)
    return cls(m, hyper).fit(rng, catalog)


def retrain(kind: str, base: Iterable, simulated: Iterable, hyper: TrainingHyper | None = None,
            rng: np.random.Generator | None = None, catalog: Mapping | None = None,
            venues: Sequence[str] | None = None) -> Recommender:
    """Train from scratch on the union of the base and simulated visits."""
    events = list(base) + list(simulated)
    return train(kind, build_interactions(events, venues), hyper, rng, catalog)


def score(model: Recommender, user: str, candidates: Sequence[str], context=None) -> ScoredCandidates:
    if len(candidates) == 0:
        raise ValueError("score needs at least one candidate")
    venues = tuple(candidates)
    raw, cold = model.raw_scores(user, venues, context)
    return ScoredCandidates(venues, raw, minmax(raw), cold)


def recommend(model: Recommender, user: str, candidates: Sequence[str], k: int,
              rng: np.random.Generator, context=None) -> str:
    """Sample one venue from the top-``k`` with probability proportional to its scaled score."""
    if k < 1:
        raise ValueError("k must be >= 1")
    sc = score(model, user, sorted(candidates), context)
    return choose_from_scores(sc.venues, sc.normalized, k, rng)


def choose_from_scores(venues: Sequence[str], normalized: np.ndarray, k: int, rng: np.random.Generator) -> str:
    # venues arrive sorted ascending, so a stable sort on -score breaks ties by id
    top = np.argsort(-normalized, kind="stable")[:k]
    w = normalized[top]
    total = w.sum()
    if total <= 0:
        return venues[top[rng.integers(top.size)]]
    return venues[top[rng.choice(top.size, p=w / total)]]


@dataclass
class EvaluationResult:
    algorithm: str
    hitrate: float
    mrr: float
    evaluated: int
    skipped: int


def evaluate(model: Recommender, post: Iterable, catalog: Mapping, k: int = 20) -> EvaluationResult:
    """HitRate@k and mRR@k over post-period visits, candidates restricted to the true category."""
    by_cat: dict[str, list[str]] = {}
    for vid in sorted(catalog):
        by_cat.setdefault(catalog[vid].category, []).append(vid)
    cat_pos = {c: {v: i for i, v in enumerate(vs)} for c, vs in by_cat.items()}
    hits = rr = 0.0
    n = skipped = 0
    cache: dict[tuple[str, str], np.ndarray] = {}
    for e in post:
        if not model.knows(e.user_id):
            skipped += 1
            continue
        c = catalog[e.venue_id].category
        key = (e.user_id, c)
        s = cache.get(key)
        if s is None:
            s, _ = model.raw_scores(e.user_id, by_cat[c])
            cache[key] = s
        i = cat_pos[c][e.venue_id]
        # ties rank the lower venue id first
        rank = 1 + int(np.sum(s > s[i])) + int(np.sum(s[:i] == s[i]))
        n += 1
        if rank <= k:
            hits += 1
            rr += 1.0 / rank
    if skipped:
        logger.info("evaluation skipped %d visits by users unseen in training", skipped)
    return EvaluationResult(model.kind, hits / n if n else 0.0, rr / n if n else 0.0, n, skipped)


def write_evaluation(results: Sequence[EvaluationResult], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["algorithm", "hitrate_at_20", "mrr_at_20", "evaluated_visits", "skipped_visits"])
        for r in results:
            w.writerow([r.algorithm, f"{r.hitrate:.6f}", f"{r.mrr:.6f}", r.evaluated, r.skipped])


def save_model(model: Recommender, path) -> None:
    """Serialise to a single ``.npz`` holding a JSON header and the learned arrays."""
    m = model.interactions
    header = {
        "format_version": FORMAT_VERSION,
        "kind": model.kind,
        "hyper": asdict(model.hyper),
        "users": list(m.users),
        "venues": list(m.venues),
    }
    arrays = {f"state__{k}": np.asarray(v) for k, v in model.state().items()}
    np.savez(path, header=np.array(json.dumps(header)), m_indptr=m.matrix.indptr,
             m_indices=m.matrix.indices, m_shape=np.array(m.matrix.shape), **arrays)


def load_model(path) -> Recommender:
    with np.load(Path(path), allow_pickle=False) as z:
        header = json.loads(str(z["header"]))
        if header["format_version"] != FORMAT_VERSION:
            raise ValueError(f"unsupported model format {header['format_version']}")
        indices = z["m_indices"]
        mat = sp.csr_matrix((np.ones(indices.size), indices, z["m_indptr"]), shape=tuple(z["m_shape"]))
        state = {k[len("state__"):]: z[k] for k in z.files if k.startswith("state__")}
    m = InteractionMatrix(tuple(header["users"]), tuple(header["venues"]), mat)
    model = MODEL_KINDS[header["kind"]](m, TrainingHyper(**header["hyper"]))
    model.load_state(state)
    return model
