"""Latent-factor losses, their gradients and a minibatch Adam trainer.

Both objectives average over the minibatch and add an L2 penalty on the
embedding rows that take part in each sample:

    BPR:     mean_b[ -ln sigmoid(p_u.(q_i - q_j)) + reg (|p_u|^2 + |q_i|^2 + |q_j|^2) ]
    squared: mean_b[ (p_u.q_v - y)^2 + reg (|p_u|^2 + |q_v|^2) ]

Adam moments are kept per embedding row and only rows touched by a batch are
updated (lazy Adam); bias correction uses the global step count.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numba import njit

logger = logging.getLogger(__name__)

BETA1, BETA2, EPS = 0.9, 0.999, 1e-8


@dataclass
class TrainingHyper:
    factors: int = 32
    learning_rate: float = 0.001
    reg: float = 0.0001
    batch_size: int = 16
    max_epochs: int = 500
    patience: int = 5
    tol: float = 1e-6
    init_scale: float = 0.01
    neighbors: int = 10


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bpr_loss_grad(P, Q, u, i, j, reg):
    """Batch BPR loss and dense gradients w.r.t. ``P`` and ``Q``."""
    B = len(u)
    pu, qi, qj = P[u], Q[i], Q[j]
    x = np.sum(pu * (qi - qj), axis=1)
    loss = _softplus(-x).mean() + reg * (np.sum(pu**2) + np.sum(qi**2) + np.sum(qj**2)) / B
    g = -_sigmoid(-x) / B
    gP = np.zeros_like(P)
    gQ = np.zeros_like(Q)
    np.add.at(gP, u, g[:, None] * (qi - qj) + 2 * reg * pu / B)
    np.add.at(gQ, i, g[:, None] * pu + 2 * reg * qi / B)
    np.add.at(gQ, j, -g[:, None] * pu + 2 * reg * qj / B)
    return float(loss), gP, gQ


def squared_loss_grad(P, Q, u, v, y, reg):
    """Batch squared-error loss and dense gradients w.r.t. ``P`` and ``Q``."""
    B = len(u)
    pu, qv = P[u], Q[v]
    err = np.sum(pu * qv, axis=1) - y
    loss = np.mean(err**2) + reg * (np.sum(pu**2) + np.sum(qv**2)) / B
    g = 2 * err / B
    gP = np.zeros_like(P)
    gQ = np.zeros_like(Q)
    np.add.at(gP, u, g[:, None] * qv + 2 * reg * pu / B)
    np.add.at(gQ, v, g[:, None] * pu + 2 * reg * qv / B)
    return float(loss), gP, gQ


class AdamState:
    def __init__(self, P, Q):
        self.mP, self.vP = np.zeros_like(P), np.zeros_like(P)
        self.mQ, self.vQ = np.zeros_like(Q), np.zeros_like(Q)
        self.step = 0


def _adam_rows(X, m, v, G, rows, step, lr):
    b1c, b2c = 1 - BETA1**step, 1 - BETA2**step
    g = G[rows]
    m[rows] = BETA1 * m[rows] + (1 - BETA1) * g
    v[rows] = BETA2 * v[rows] + (1 - BETA2) * g * g
    X[rows] -= lr * (m[rows] / b1c) / (np.sqrt(v[rows] / b2c) + EPS)


def reference_epoch(objective, P, Q, state, a, b, c, hyper: TrainingHyper) -> float:
    """Plain-numpy epoch; slow, kept as an independent check on the compiled one.

    For ``objective == "bpr"`` the triples are (user, positive, negative); for
    ``"squared"`` they are (user, venue, target).
    """
    if objective == "bpr":
        c = np.asarray(c).astype(np.int64)
    losses = []
    for s in range(0, len(a), hyper.batch_size):
        sl = slice(s, s + hyper.batch_size)
        if objective == "bpr":
            loss, gP, gQ = bpr_loss_grad(P, Q, a[sl], b[sl], c[sl], hyper.reg)
            qrows = np.unique(np.concatenate([b[sl], c[sl]]))
        else:
            loss, gP, gQ = squared_loss_grad(P, Q, a[sl], b[sl], c[sl], hyper.reg)
            qrows = np.unique(b[sl])
        state.step += 1
        _adam_rows(P, state.mP, state.vP, gP, np.unique(a[sl]), state.step, hyper.learning_rate)
        _adam_rows(Q, state.mQ, state.vQ, gQ, qrows, state.step, hyper.learning_rate)
        losses.append(loss)
    return float(np.mean(losses))


@njit(cache=True)
def _adam_apply(X, m, v, G, rows, nrows, step, lr):
    b1c = 1.0 - BETA1**step
    b2c = 1.0 - BETA2**step
    k = X.shape[1]
    for t in range(nrows):
        r = rows[t]
        for f in range(k):
            g = G[r, f]
            m[r, f] = BETA1 * m[r, f] + (1.0 - BETA1) * g
            v[r, f] = BETA2 * v[r, f] + (1.0 - BETA2) * g * g
            X[r, f] -= lr * (m[r, f] / b1c) / (np.sqrt(v[r, f] / b2c) + EPS)
            G[r, f] = 0.0


@njit(cache=True)
def _mark(flag, rows, nrows, r):
    if not flag[r]:
        flag[r] = True
        rows[nrows] = r
        nrows += 1
    return nrows


@njit(cache=True)
def _compiled_epoch(is_bpr, P, Q, mP, vP, mQ, vQ, step, a, b, c, batch, lr, reg):
    n = a.size
    k = P.shape[1]
    GP = np.zeros_like(P)
    GQ = np.zeros_like(Q)
    flagP = np.zeros(P.shape[0], dtype=np.bool_)
    flagQ = np.zeros(Q.shape[0], dtype=np.bool_)
    rowsP = np.empty(batch, dtype=np.int64)
    rowsQ = np.empty(2 * batch, dtype=np.int64)
    total = 0.0
    nb = 0
    for s in range(0, n, batch):
        e = min(n, s + batch)
        B = e - s
        loss = 0.0
        npr = 0
        nqr = 0
        for t in range(s, e):
            u = a[t]
            i = b[t]
            x = 0.0
            norm = 0.0
            if is_bpr:
                j = int(c[t])
                for f in range(k):
                    x += P[u, f] * (Q[i, f] - Q[j, f])
                    norm += P[u, f] ** 2 + Q[i, f] ** 2 + Q[j, f] ** 2
                # -ln sigmoid(x), numerically stable
                loss += max(-x, 0.0) + np.log1p(np.exp(-abs(x)))
                g = -(1.0 / (1.0 + np.exp(x))) / B
                for f in range(k):
                    pu = P[u, f]
                    GP[u, f] += g * (Q[i, f] - Q[j, f]) + 2.0 * reg * pu / B
                    GQ[i, f] += g * pu + 2.0 * reg * Q[i, f] / B
                    GQ[j, f] += -g * pu + 2.0 * reg * Q[j, f] / B
                nqr = _mark(flagQ, rowsQ, nqr, j)
            else:
                for f in range(k):
                    x += P[u, f] * Q[i, f]
                    norm += P[u, f] ** 2 + Q[i, f] ** 2
                err = x - c[t]
                loss += err * err
                g = 2.0 * err / B
                for f in range(k):
                    pu = P[u, f]
                    GP[u, f] += g * Q[i, f] + 2.0 * reg * pu / B
                    GQ[i, f] += g * pu + 2.0 * reg * Q[i, f] / B
            loss += reg * norm
            npr = _mark(flagP, rowsP, npr, u)
            nqr = _mark(flagQ, rowsQ, nqr, i)
        step += 1
        # rows are applied in sorted order to mirror the reference path exactly
        rp = np.sort(rowsP[:npr])
        rq = np.sort(rowsQ[:nqr])
        _adam_apply(P, mP, vP, GP, rp, npr, step, lr)
        _adam_apply(Q, mQ, vQ, GQ, rq, nqr, step, lr)
        for t in range(npr):
            flagP[rp[t]] = False
        for t in range(nqr):
            flagQ[rq[t]] = False
        total += loss / B
        nb += 1
    return total / max(nb, 1), step


def compiled_epoch(objective, P, Q, state: AdamState, a, b, c, hyper: TrainingHyper) -> float:
    loss, state.step = _compiled_epoch(
        objective == "bpr", P, Q, state.mP, state.vP, state.mQ, state.vQ, state.step,
        np.ascontiguousarray(a, dtype=np.int64), np.ascontiguousarray(b, dtype=np.int64),
        np.ascontiguousarray(c, dtype=np.float64), hyper.batch_size, hyper.learning_rate, hyper.reg,
    )
    return float(loss)


def sample_negatives(indptr, indices, users, n_items, rng) -> np.ndarray:
    """One uniformly drawn non-interacted item per entry of ``users``."""
    neg = rng.integers(n_items, size=len(users))
    counts = np.diff(indptr)
    if np.any(counts[users] >= n_items):
        raise ValueError("a user has interacted with every item; no negatives exist")
    keys = np.repeat(np.arange(len(counts), dtype=np.int64), counts) * n_items + indices
    for _ in range(1000):
        bad = np.isin(users.astype(np.int64) * n_items + neg, keys, assume_unique=False)
        if not bad.any():
            return neg
        neg[bad] = rng.integers(n_items, size=int(bad.sum()))
    raise RuntimeError("negative sampling did not converge")


def fit_factors(objective: str, matrix, hyper: TrainingHyper, rng: np.random.Generator,
                epoch_fn=compiled_epoch):
    """Fit user/item factors on a binary CSR matrix; returns (P, Q, loss_history)."""
    n_users, n_items = matrix.shape
    if matrix.nnz == 0:
        raise ValueError("cannot fit latent factors on a matrix without positives")
    P = rng.uniform(-hyper.init_scale, hyper.init_scale, size=(n_users, hyper.factors))
    Q = rng.uniform(-hyper.init_scale, hyper.init_scale, size=(n_items, hyper.factors))
    state = AdamState(P, Q)
    pos_u = np.repeat(np.arange(n_users), np.diff(matrix.indptr))
    pos_i = matrix.indices.astype(np.int64)
    # users who visited every item have no negatives; their positives are left out
    saturated = np.diff(matrix.indptr)[pos_u] >= n_items
    if saturated.all():
        raise ValueError("no user has an unvisited item to sample as a negative")
    if saturated.any():
        logger.info("%d positives of saturated users left out of training", int(saturated.sum()))
        pos_u, pos_i = pos_u[~saturated], pos_i[~saturated]
    history = []
    best, stale = np.inf, 0
    for epoch in range(hyper.max_epochs):
        neg = sample_negatives(matrix.indptr, matrix.indices, pos_u, n_items, rng)
        if objective == "bpr":
            order = rng.permutation(len(pos_u))
            a, b, c = pos_u[order], pos_i[order], neg[order].astype(np.float64)
        else:
            a = np.concatenate([pos_u, pos_u])
            b = np.concatenate([pos_i, neg])
            c = np.concatenate([np.ones(len(pos_u)), np.zeros(len(pos_u))])
            order = rng.permutation(len(a))
            a, b, c = a[order], b[order], c[order]
        loss = epoch_fn(objective, P, Q, state, a, b, c, hyper)
        if not np.isfinite(loss):
            raise FloatingPointError(f"non-finite training loss at epoch {epoch}")
        history.append(loss)
        if loss < best - hyper.tol:
            best, stale = loss, 0
        else:
            stale += 1
            if stale >= hyper.patience:
                logger.debug("early stop at epoch %d (loss %.6f)", epoch, loss)
                break
    return P, Q, history
