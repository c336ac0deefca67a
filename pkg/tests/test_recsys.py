import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from venueloop.ingest import Venue, VisitEvent
from venueloop.recsys import (
    MODEL_KINDS,
    TrainingHyper,
    build_interactions,
    choose_from_scores,
    evaluate,
    load_model,
    recommend,
    retrain,
    save_model,
    score,
    train,
    write_evaluation,
)
from venueloop.recsys.models import cosine_topk, minmax

FAST = TrainingHyper(max_epochs=30)


def ev(rows):
    return [VisitEvent(u, v, t) for t, (u, v) in enumerate(rows)]


def toy_catalog(n=6, cat="c"):
    return {f"v{i}": Venue(f"v{i}", cat, 40.0 + 0.01 * i, -74.0 + 0.01 * i) for i in range(n)}


def test_build_interactions_examples():
    m = build_interactions(ev([("u1", "v1")] * 3))
    assert m.matrix[m.user_index["u1"], m.venue_index["v1"]] == 1
    assert build_interactions([]).shape == (0, 0)
    m = build_interactions(ev([("u1", "a"), ("u1", "b"), ("u2", "b"), ("u2", "c"), ("u1", "a")]))
    assert m.shape == (2, 3) and m.nnz == 4


def test_build_interactions_column_universe():
    m = build_interactions(ev([("u", "b")]), venues=["a", "b", "c"])
    assert m.venues == ("a", "b", "c") and m.shape == (1, 3)


def dense_cosine(X):
    X = np.asarray(X, dtype=float)
    n = np.linalg.norm(X, axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        S = (X @ X.T) / np.outer(n, n)
    return np.nan_to_num(S)


def test_cosine_examples():
    X = sp.csr_matrix(np.array([[1, 1, 0], [1, 0, 1], [1, 1, 0], [0, 0, 1.0]]))
    S = cosine_topk(X, 10).toarray()
    assert S[0, 2] == pytest.approx(1.0)  # identical rows
    assert S[0, 3] == 0.0  # disjoint rows
    assert S[0, 1] == pytest.approx(0.5)
    assert np.all(np.diag(S) == 0)


binary = arrays(np.int8, st.tuples(st.integers(1, 12), st.integers(1, 10)), elements=st.integers(0, 1))


@settings(max_examples=60, deadline=None)
@given(binary, st.integers(1, 12))
def test_cosine_topk_matches_dense_oracle(X, k):
    S = cosine_topk(sp.csr_matrix(X.astype(float)), k).toarray()
    full = dense_cosine(X)
    np.fill_diagonal(full, 0.0)
    for r in range(X.shape[0]):
        order = sorted(range(X.shape[0]), key=lambda c: (-full[r, c], c))
        keep = [c for c in order if full[r, c] > 0][:k]
        want = np.zeros(X.shape[0])
        want[keep] = full[r, keep]
        assert np.allclose(S[r], want, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(binary)
def test_knn_similarity_symmetric_in_unit_interval(X):
    S = cosine_topk(sp.csr_matrix(X.astype(float)), X.shape[0]).toarray()
    assert np.allclose(S, S.T)
    assert S.min() >= 0 and S.max() <= 1 + 1e-12


def test_userknn_scores_match_neighbourhood_sum():
    rng = np.random.default_rng(4)
    rows = [(f"u{u}", f"v{v}") for u in range(15) for v in range(12) if rng.random() < 0.3]
    m = build_interactions(ev(rows))
    model = train("UserKNN", m)
    X = m.matrix.toarray()
    S = dense_cosine(X)
    np.fill_diagonal(S, 0)
    for u in m.users:
        ui = m.user_index[u]
        nb = sorted(range(len(X)), key=lambda c: (-S[ui, c], c))[:10]
        nb = [c for c in nb if S[ui, c] > 0]
        want = S[ui, nb] @ X[nb]
        got, cold = model.raw_scores(u, m.venues)
        assert not cold
        assert np.allclose(got, want)


def test_itemknn_scores_match_neighbourhood_sum():
    rng = np.random.default_rng(5)
    rows = [(f"u{u}", f"v{v}") for u in range(15) for v in range(12) if rng.random() < 0.3]
    m = build_interactions(ev(rows))
    model = train("ItemKNN", m)
    X = m.matrix.toarray()
    S = dense_cosine(X.T)
    np.fill_diagonal(S, 0)
    N = np.zeros_like(S)
    for v in range(S.shape[0]):
        nb = [c for c in sorted(range(S.shape[0]), key=lambda c: (-S[v, c], c))[:10] if S[v, c] > 0]
        N[v, nb] = S[v, nb]
    for u in m.users:
        got, _ = model.raw_scores(u, m.venues)
        assert np.allclose(got, X[m.user_index[u]] @ N.T)


def test_minmax_examples():
    assert np.allclose(minmax(np.array([1.0, 3.0, 5.0])), [0, 0.5, 1])
    assert np.allclose(minmax(np.array([7.0])), [1.0])
    assert np.allclose(minmax(np.array([2.0, 2.0, 2.0, 2.0])), [0.25] * 4)


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.integers(2, 30), elements=st.floats(-1e6, 1e6)))
def test_minmax_rank_invariance(x):
    if np.ptp(x) == 0:
        return
    y = minmax(x)
    assert y.min() == 0 and y.max() == 1
    dx, dy = np.subtract.outer(x, x), np.subtract.outer(y, y)
    assert np.all(dy[dx > 0] >= 0)  # order never flips
    resolvable = dx > 1e-9 * np.ptp(x)
    assert np.all(dy[resolvable] > 0)  # and is strict wherever rounding allows


def test_popularity_scores():
    m = build_interactions(ev([(f"u{i}", "v1") for i in range(10)]), venues=["v1", "v2"])
    sc = score(train("Popularity", m), "u0", ["v1", "v2"])
    assert list(sc.raw) == [10, 0] and list(sc.normalized) == [1, 0]


def test_cold_start_uses_popularity():
    m = build_interactions(ev([("a", "v1"), ("b", "v1"), ("b", "v2")]))
    for kind in ("UserKNN", "ItemKNN", "BPRMF"):
        model = train(kind, m, FAST)
        sc = score(model, "stranger", ["v1", "v2"])
        assert sc.cold_start and list(sc.raw) == [2, 1]


def test_score_rejects_empty():
    m = build_interactions(ev([("a", "v1")]))
    with pytest.raises(ValueError):
        score(train("Popularity", m), "a", [])


def test_unknown_kind():
    with pytest.raises(ValueError):
        train("MultiVAE", build_interactions(ev([("a", "v1")])))


def test_recommend_examples():
    m = build_interactions(ev([(f"u{i}", "A") for i in range(3)] + [("u0", "C")]), venues=["A", "B", "C"])
    model = train("Popularity", m)
    rng = np.random.default_rng(0)
    assert {recommend(model, "u0", ["C", "B", "A"], 1, rng) for _ in range(20)} == {"A"}
    with pytest.raises(ValueError):
        recommend(model, "u0", ["A"], 0, rng)


def test_choose_from_scores_proportional():
    rng = np.random.default_rng(1)
    draws = [choose_from_scores(("A", "B", "C"), np.array([1.0, 0.0, 0.5]), 3, rng) for _ in range(30000)]
    freq = {v: draws.count(v) / len(draws) for v in "ABC"}
    assert abs(freq["A"] - 2 / 3) < 0.02 and abs(freq["C"] - 1 / 3) < 0.02 and freq["B"] == 0


def test_choose_from_scores_zero_is_uniform_over_topk():
    rng = np.random.default_rng(2)
    draws = [choose_from_scores(("A", "B", "C"), np.zeros(3), 2, rng) for _ in range(20000)]
    assert set(draws) == {"A", "B"}
    assert abs(draws.count("A") / len(draws) - 0.5) < 0.02


def test_retrain_examples():
    base = ev([("a", "v1"), ("b", "v2"), ("a", "v2"), ("c", "v1")])
    m = build_interactions(base)
    for kind in ("Popularity", "UserKNN", "ItemKNN"):
        a, b = train(kind, m), retrain(kind, base, [])
        for u in ("a", "b", "c"):
            assert np.array_equal(a.raw_scores(u, ["v1", "v2"])[0], b.raw_scores(u, ["v1", "v2"])[0])
    # two new visits by a new user and one repeated pair
    sim = [VisitEvent("d", "v2", 10), VisitEvent("d", "v2", 11), VisitEvent("a", "v2", 12)]
    pop = retrain("Popularity", base, sim)
    assert pop.raw_scores("a", ["v2"])[0][0] == train("Popularity", m).raw_scores("a", ["v2"])[0][0] + 1
    knn_a, knn_b = train("UserKNN", m), retrain("UserKNN", base, [VisitEvent("a", "v1", 20)])
    assert np.allclose(knn_a.neighbors.toarray(), knn_b.neighbors.toarray())


def test_factor_retrain_deterministic_given_seed():
    base = ev([(f"u{i}", f"v{(i * 3 + j) % 7}") for i in range(8) for j in range(3)])
    m = build_interactions(base)
    a = train("BPRMF", m, FAST, np.random.default_rng(9))
    b = retrain("BPRMF", base, [], FAST, np.random.default_rng(9))
    assert np.array_equal(a.user_factors, b.user_factors)


def test_evaluate_examples():
    cat = {"A": Venue("A", "bar", 0, 0), "B": Venue("B", "bar", 0, 0), "C": Venue("C", "bar", 0, 0),
           "D": Venue("D", "cafe", 0, 0)}
    # popularity: A=3 visitors, B=2, C=1; visits of u to C rank it 3rd
    train_ev = ev([("u1", "A"), ("u2", "A"), ("u3", "A"), ("u1", "B"), ("u2", "B"), ("u3", "C")])
    model = train("Popularity", build_interactions(train_ev, sorted(cat)))
    r = evaluate(model, [VisitEvent("u1", "C", 99)], cat)
    assert (r.hitrate, r.mrr) == (1.0, pytest.approx(1 / 3))
    r = evaluate(model, [VisitEvent("u1", "A", 99), VisitEvent("u2", "D", 99)], cat)
    assert (r.hitrate, r.mrr, r.evaluated) == (1.0, 1.0, 2)
    r = evaluate(model, [VisitEvent("ghost", "A", 99)], cat)
    assert r.skipped == 1 and r.evaluated == 0


def test_evaluate_perfect_memorisation():
    cat = {"only": Venue("only", "c", 1, 1)}
    events = ev([("a", "only"), ("b", "only")])
    r = evaluate(train("Popularity", build_interactions(events)), events, cat)
    assert (r.hitrate, r.mrr) == (1.0, 1.0)


def test_write_evaluation(tmp_path):
    cat = {"only": Venue("only", "c", 1, 1)}
    events = ev([("a", "only")])
    p = tmp_path / "e.csv"
    write_evaluation([evaluate(train("Popularity", build_interactions(events)), events, cat)], p)
    assert p.read_text().splitlines()[0] == "algorithm,hitrate_at_20,mrr_at_20,evaluated_visits,skipped_visits"


@pytest.mark.parametrize("kind", sorted(MODEL_KINDS))
def test_save_load_roundtrip(kind, tmp_path):
    cat = toy_catalog(7)
    events = ev([(f"u{i}", f"v{(i * 2 + j) % 7}") for i in range(9) for j in range(3)])
    m = build_interactions(events, sorted(cat))
    model = train(kind, m, FAST, np.random.default_rng(1), cat)
    path = tmp_path / f"{kind}.npz"
    save_model(model, path)
    back = load_model(path)
    assert back.kind == model.kind
    for u in ("u0", "u3", "nobody"):
        a, ca = model.raw_scores(u, sorted(cat))
        b, cb = back.raw_scores(u, sorted(cat))
        assert ca == cb and np.array_equal(a, b)


def test_pgn_blends_three_scaled_components():
    cat = toy_catalog(6)
    events = ev([("a", "v0"), ("a", "v1"), ("b", "v1"), ("b", "v2"), ("c", "v4"), ("c", "v1")])
    m = build_interactions(events, sorted(cat))
    pgn = train("PGN", m, catalog=cat)
    knn = train("UserKNN", m)
    venues = sorted(cat)
    lat = np.array([cat[v].lat for v in venues])
    lon = np.array([cat[v].lon for v in venues])
    from venueloop.geo import haversine_many

    cen = (np.mean([cat["v0"].lat, cat["v1"].lat]), np.mean([cat["v0"].lon, cat["v1"].lon]))
    geo = 1.0 / (1.0 + haversine_many(cen[0], cen[1], lat, lon))
    want = (minmax(knn.raw_scores("a", venues)[0]) + minmax(m.matrix.sum(axis=0).A1) + minmax(geo)) / 3
    assert np.allclose(pgn.raw_scores("a", venues)[0], want)
    with pytest.raises(ValueError):
        train("PGN", m)
