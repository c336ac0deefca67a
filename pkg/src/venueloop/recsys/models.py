"""Recommender kinds behind one scoring interface.

Every model scores (user, candidate venues) pairs with raw, unnormalised
scores. New kinds register themselves with :func:`register` and become
available to :func:`train` and to the simulation engine by name.
"""

from __future__ import annotations

from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

from ..geo import haversine_many
from .interactions import InteractionMatrix
from .optim import TrainingHyper, fit_factors

MODEL_KINDS: dict[str, type["Recommender"]] = {}


def register(name: str):
    def deco(cls):
        cls.kind = name
        MODEL_KINDS[name] = cls
        return cls
    return deco


def minmax(x: np.ndarray) -> np.ndarray:
    """Min-max scale to [0, 1]; a constant vector maps to the uniform 1/n."""
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        return x
    lo, hi = x.min(), x.max()
    if hi - lo <= 0:
        return np.full(x.size, 1.0 / x.size)
    return (x - lo) / (hi - lo)


def _csr_lookup(m: sp.csr_matrix, row: int, cols: np.ndarray) -> np.ndarray:
    """Values of ``m[row, cols]`` for a CSR matrix with sorted indices."""
    lo, hi = m.indptr[row], m.indptr[row + 1]
    idx, dat = m.indices[lo:hi], m.data[lo:hi]
    out = np.zeros(len(cols))
    if idx.size == 0:
        return out
    pos = np.searchsorted(idx, cols)
    pos_c = np.minimum(pos, idx.size - 1)
    hit = idx[pos_c] == cols
    out[hit] = dat[pos_c[hit]]
    return out


def cosine_topk(X: sp.csr_matrix, k: int) -> sp.csr_matrix:
    """Row-wise cosine similarity of binary rows, keeping the ``k`` largest per row.

    Self-similarity is dropped; ties go to the lower row index.
    """
    X = sp.csr_matrix(X, dtype=float)
    norms = np.sqrt(np.asarray(X.multiply(X).sum(axis=1)).ravel())
    inv = np.divide(1.0, norms, out=np.zeros_like(norms), where=norms > 0)
    S = (X @ X.T).tocsr()
    S = sp.diags(inv) @ S @ sp.diags(inv)
    S = S.tocsr()
    S.setdiag(0.0)
    S.eliminate_zeros()
    S.sort_indices()
    rows, cols, vals = [], [], []
    for r in range(S.shape[0]):
        lo, hi = S.indptr[r], S.indptr[r + 1]
        if hi == lo:
            continue
        idx, dat = S.indices[lo:hi], S.data[lo:hi]
        order = np.lexsort((idx, -dat))[:k]
        rows.append(np.full(order.size, r))
        cols.append(idx[order])
        vals.append(dat[order])
    if not rows:
        return sp.csr_matrix(S.shape)
    out = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=S.shape)
    out.sort_indices()
    return out


class Recommender:
    """Base class: popularity counts plus the interaction index every kind needs."""

    kind = "base"

    def __init__(self, interactions: InteractionMatrix, hyper: TrainingHyper | None = None):
        self.interactions = interactions
        self.hyper = hyper or TrainingHyper()
        self.popularity = np.asarray(interactions.matrix.sum(axis=0)).ravel()

    # subclasses override
    def fit(self, rng: np.random.Generator, catalog: Mapping | None = None) -> "Recommender":
        return self

    def _user_scores(self, uidx: int, cols: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def knows(self, user: str) -> bool:
        return user in self.interactions.user_index

    def columns(self, venues: Sequence[str]) -> tuple[np.ndarray, np.ndarray]:
        """Column indices for ``venues`` and a mask of those the model has seen."""
        vi = self.interactions.venue_index
        cols = np.fromiter((vi.get(v, -1) for v in venues), dtype=np.int64, count=len(venues))
        return np.maximum(cols, 0), cols >= 0

    def popularity_scores(self, venues: Sequence[str]) -> np.ndarray:
        cols, known = self.columns(venues)
        return np.where(known, self.popularity[cols], 0.0)

    def raw_scores(self, user: str, venues: Sequence[str], context=None) -> tuple[np.ndarray, bool]:
        """Raw scores for ``venues`` and whether the popularity fallback was used."""
        if not self.knows(user):
            return self.popularity_scores(venues), True
        cols, known = self.columns(venues)
        s = self._user_scores(self.interactions.user_index[user], cols)
        return np.where(known, s, 0.0), False

    def state(self) -> dict[str, np.ndarray]:
        """Learned arrays, for serialisation."""
        return {"popularity": self.popularity}

    def load_state(self, arrays: Mapping[str, np.ndarray]) -> None:
        self.popularity = arrays["popularity"]


@register("Popularity")
class Popularity(Recommender):
    """Scores a venue by its number of distinct visitors."""

    def _user_scores(self, uidx, cols):
        return self.popularity[cols].astype(float)


@register("UserKNN")
class UserKNN(Recommender):
    def fit(self, rng, catalog=None):
        X = self.interactions.matrix
        self.neighbors = cosine_topk(X, self.hyper.neighbors)
        self.scores = (self.neighbors @ X).tocsr()
        self.scores.sort_indices()
        return self

    def _user_scores(self, uidx, cols):
        return _csr_lookup(self.scores, uidx, cols)

    def state(self):
        return {**super().state(), **_csr_state("neighbors", self.neighbors)}

    def load_state(self, arrays):
        super().load_state(arrays)
        self.neighbors = _csr_from_state("neighbors", arrays)
        self.scores = (self.neighbors @ self.interactions.matrix).tocsr()
        self.scores.sort_indices()


@register("ItemKNN")
class ItemKNN(Recommender):
    def fit(self, rng, catalog=None):
        X = self.interactions.matrix
        # row v holds the top-k neighbours of venue v
        self.neighbors = cosine_topk(X.T.tocsr(), self.hyper.neighbors)
        self.scores = (X @ self.neighbors.T).tocsr()
        self.scores.sort_indices()
        return self

    def _user_scores(self, uidx, cols):
        return _csr_lookup(self.scores, uidx, cols)

    def state(self):
        return {**super().state(), **_csr_state("neighbors", self.neighbors)}

    def load_state(self, arrays):
        super().load_state(arrays)
        self.neighbors = _csr_from_state("neighbors", arrays)
        self.scores = (self.interactions.matrix @ self.neighbors.T).tocsr()
        self.scores.sort_indices()


class _FactorModel(Recommender):
    objective = "bpr"

    def fit(self, rng, catalog=None):
        self.user_factors, self.item_factors, self.loss_history = fit_factors(
            self.objective, self.interactions.matrix, self.hyper, rng)
        return self

    def _user_scores(self, uidx, cols):
        return self.item_factors[cols] @ self.user_factors[uidx]

    def state(self):
        return {**super().state(), "user_factors": self.user_factors, "item_factors": self.item_factors}

    def load_state(self, arrays):
        super().load_state(arrays)
        self.user_factors = arrays["user_factors"]
        self.item_factors = arrays["item_factors"]


@register("MF")
class MF(_FactorModel):
    """Matrix factorisation on squared loss with one sampled negative per positive."""

    objective = "squared"


@register("BPRMF")
class BPRMF(_FactorModel):
    objective = "bpr"


@register("PGN")
class PGN(Recommender):
    """Average of min-max scaled UserKNN, popularity and proximity-to-centroid scores."""

    def fit(self, rng, catalog=None):
        if catalog is None:
            raise ValueError("PGN needs the venue catalog for coordinates")
        self.knn = UserKNN(self.interactions, self.hyper).fit(rng)
        venues = self.interactions.venues
        self.venue_lat = np.array([catalog[v].lat for v in venues])
        self.venue_lon = np.array([catalog[v].lon for v in venues])
        X = self.interactions.matrix
        counts = np.diff(X.indptr)
        with np.errstate(invalid="ignore", divide="ignore"):
            self.centroids = np.column_stack([X @ self.venue_lat / counts, X @ self.venue_lon / counts])
        return self

    def raw_scores(self, user, venues, context=None):
        if not self.knows(user):
            return self.popularity_scores(venues), True
        uidx = self.interactions.user_index[user]
        knn, _ = self.knn.raw_scores(user, venues)
        pop = self.popularity_scores(venues)
        cols, known = self.columns(venues)
        clat, clon = self.centroids[uidx]
        geo = np.where(known, 1.0 / (1.0 + haversine_many(clat, clon, self.venue_lat[cols], self.venue_lon[cols])), 0.0)
        return (minmax(knn) + minmax(pop) + minmax(geo)) / 3.0, False

    def state(self):
        return {**super().state(), **_csr_state("neighbors", self.knn.neighbors), "centroids": self.centroids,
                "venue_lat": self.venue_lat, "venue_lon": self.venue_lon}

    def load_state(self, arrays):
        super().load_state(arrays)
        self.knn = UserKNN(self.interactions, self.hyper)
        self.knn.load_state(arrays)
        self.centroids = arrays["centroids"]
        self.venue_lat = arrays["venue_lat"]
        self.venue_lon = arrays["venue_lon"]


def _csr_state(prefix, m: sp.csr_matrix):
    return {f"{prefix}_data": m.data, f"{prefix}_indices": m.indices, f"{prefix}_indptr": m.indptr,
            f"{prefix}_shape": np.array(m.shape)}


def _csr_from_state(prefix, arrays):
    m = sp.csr_matrix((arrays[f"{prefix}_data"], arrays[f"{prefix}_indices"], arrays[f"{prefix}_indptr"]),
                      shape=tuple(arrays[f"{prefix}_shape"]))
    m.sort_indices()
    return m
