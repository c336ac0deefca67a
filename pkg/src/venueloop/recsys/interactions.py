from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary user x venue matrix; entry is 1 iff the user visited the venue."""

    users: tuple[str, ...]
    venues: tuple[str, ...]
    matrix: sp.csr_matrix
    user_index: dict = field(repr=False, compare=False, default=None)
    venue_index: dict = field(repr=False, compare=False, default=None)

    def __post_init__(self):
        if self.user_index is None:
            object.__setattr__(self, "user_index", {u: i for i, u in enumerate(self.users)})
        if self.venue_index is None:
            object.__setattr__(self, "venue_index", {v: i for i, v in enumerate(self.venues)})

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nnz(self) -> int:
        return int(self.matrix.nnz)

    def row(self, user: str) -> np.ndarray:
        """Column indices visited by ``user`` (sorted)."""
        i = self.user_index[user]
        m = self.matrix
        return m.indices[m.indptr[i]:m.indptr[i + 1]]


def build_interactions(events: Iterable, venues: Sequence[str] | None = None) -> InteractionMatrix:
    """Binarise visit events.

    Users and venues are indexed in order of first appearance. ``venues``, when
    given, fixes the leading column universe (e.g. the whole catalog) so that
    unvisited venues still get a column.
    """
    user_index: dict[str, int] = {}
    venue_index: dict[str, int] = {v: i for i, v in enumerate(venues)} if venues is not None else {}
    rows, cols = [], []
    for e in events:
        u = user_index.setdefault(e.user_id, len(user_index))
        v = venue_index.setdefault(e.venue_id, len(venue_index))
        rows.append(u)
        cols.append(v)
    shape = (len(user_index), len(venue_index))
    m = sp.csr_matrix((np.ones(len(rows)), (np.array(rows, dtype=np.int64), np.array(cols, dtype=np.int64))), shape=shape)
    m.sum_duplicates()
    m.data[:] = 1.0
    m.sort_indices()
    return InteractionMatrix(tuple(user_index), tuple(venue_index), m, user_index, venue_index)
