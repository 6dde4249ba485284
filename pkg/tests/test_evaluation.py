import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nftmars.config import MODALITIES, TrainConfig
from nftmars.dataset import TEST, TRAIN, VALIDATION, SplitAssignment, interactions_from_pairs, split_interactions
from nftmars.evaluation import (
    SCORE_COLUMNS, attention_report, build_candidates, evaluate, metric_table, ndcg_at_k, popularity_baseline,
    recall_at_k, summarize,
)
from nftmars.model import NFTMars, init_params
from nftmars.synthetic import make_market, toy_problem
from nftmars.training import TrainingData


def brute_recall(ranked, relevant, k):
    hits = np.isin(np.asarray(ranked)[:k], np.asarray(sorted(relevant)))
    return hits.sum() / len(relevant)


def brute_ndcg(ranked, relevant, k):
    gains = np.array([1.0 if x in relevant else 0.0 for x in ranked[:k]])
    disc = np.log2(np.arange(2, gains.size + 2))
    ideal = np.ones(min(k, len(relevant)))
    return (gains / disc).sum() / (ideal / np.log2(np.arange(2, ideal.size + 2))).sum()


def test_metric_examples():
    assert recall_at_k([7, 1, 2], {7}, 30) == 1.0
    assert recall_at_k([1, 9, 2, 3, 8, 4], {1, 2, 5, 6}, 3) == 0.5
    assert ndcg_at_k([4, 5, 6], {4}, 10) == 1.0
    assert ndcg_at_k([4, 5, 6], {6}, 3) == pytest.approx(0.5, abs=1e-15)
    assert ndcg_at_k([4, 5, 6], {6}, 2) == 0.0
    assert ndcg_at_k([3, 1, 2, 0], {1, 3}, 2) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        recall_at_k([1], set(), 1)


def test_metrics_match_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        ranked = rng.permutation(n * 2)[:n].tolist()
        n_rel = int(rng.integers(1, n + 1))
        relevant = set(rng.choice(ranked, n_rel, replace=False).tolist())
        relevant |= set(rng.integers(200, 210, int(rng.integers(0, 2))).tolist())  # relevant but not ranked
        k = int(rng.integers(1, n + 5))
        assert abs(recall_at_k(ranked, relevant, k) - brute_recall(ranked, relevant, k)) <= 1e-9
        assert abs(ndcg_at_k(ranked, relevant, k) - brute_ndcg(ranked, relevant, k)) <= 1e-9


@settings(max_examples=80, deadline=None)
@given(st.permutations(list(range(15))), st.sets(st.integers(0, 14), min_size=1), st.integers(1, 14))
def test_metrics_bounded_and_monotone(ranked, relevant, k):
    r1, r2 = recall_at_k(ranked, relevant, k), recall_at_k(ranked, relevant, k + 1)
    n1, n2 = ndcg_at_k(ranked, relevant, k), ndcg_at_k(ranked, relevant, k + 1)
    assert 0 <= r1 <= r2 <= 1
    assert 0 <= n1 <= 1 + 1e-12 and 0 <= n2 <= 1 + 1e-12
    # the ideal DCG grows with k until k reaches the number of relevant items,
    # so NDCG is only monotone from there on
    if k >= len(relevant):
        assert n1 <= n2
    top = set(ranked[:len(relevant)])
    assert (abs(ndcg_at_k(ranked, relevant, 15) - 1.0) < 1e-12) == (top == relevant)


def planted():
    """40 filler users make item j's training count 40 - j; ten evaluated users
    each train on item 39 and hold out item 3u for testing."""
    pairs = []
    for f in range(40):
        pairs += [(f, j) for j in range(40 - f)]
    for u in range(10):
        pairs += [(40 + u, 39), (40 + u, 3 * u)]
    us, its = zip(*pairs)
    m = interactions_from_pairs(50, 40, us, its)
    tags = np.where((m.user_idx >= 40) & (m.item_idx != 39), TEST, TRAIN).astype(np.int8)
    return m, SplitAssignment(tags)


def test_popularity_baseline_planted_recall():
    m, split = planted()
    cands = build_candidates(m, split, seed=0)
    assert len(cands) == 10 and cands.skipped == 40
    assert cands.short.tolist() == list(range(40, 50))  # only 38 negatives exist
    ranks = popularity_baseline(m, split, cands)
    table = metric_table(cands, ranks, ks=(10, 30))
    s = summarize(table)
    t = 3 * np.arange(10)
    assert s["Recall@10"] == pytest.approx(np.mean(t < 10))
    assert s["Recall@30"] == pytest.approx(np.mean(t < 30))
    assert s["NDCG@10"] == pytest.approx(np.mean(np.where(t < 10, 1 / np.log2(t + 2), 0.0)))


def test_popularity_ordering_and_ties():
    # item 0 bought by three users, item 1 by one; items 2..4 tie
    pairs = [(0, 0), (1, 0), (2, 0), (0, 1), (1, 2), (2, 3), (0, 4), (3, 5), (3, 6)]
    us, its = zip(*pairs)
    m = interactions_from_pairs(4, 7, us, its)
    tags = np.where((m.user_idx == 3) & (m.item_idx == 6), TEST, TRAIN).astype(np.int8)
    split = SplitAssignment(tags)
    cands = build_candidates(m, split, seed=1)
    (ranked,) = popularity_baseline(m, split, cands)
    # item 6 has no training count; 0 first, then the tie 1..4 in id order
    assert ranked.tolist() == [0, 1, 2, 3, 4, 6]


@pytest.fixture(scope="module")
def market():
    m, fs, uf = make_market(n_users=60, n_items=300, seed=3).dataset()
    return m, split_interactions(m, 3), fs, uf


def test_candidates_sizes_disjoint_deterministic(market):
    m, split, _, _ = market
    cands = build_candidates(m, split, seed=9)
    again = build_candidates(m, split, seed=9)
    assert np.array_equal(cands.items, again.items)
    assert not np.array_equal(cands.items, build_candidates(m, split, seed=10).items)
    ptr, own = m.user_items()
    counts = split.counts_per_user(m)
    for k, u in enumerate(cands.users):
        c, rel = cands.of(k)
        assert c.size == counts[u, TEST] + 100
        assert len(set(c.tolist())) == c.size
        mine = set(own[ptr[u]:ptr[u + 1]].tolist())
        assert not (set(c[rel.size:].tolist()) & mine)
    assert any(counts[u, TEST] == 2 for u in cands.users)
    val = build_candidates(m, split, seed=9, tag=VALIDATION)
    assert not np.array_equal(val.items, cands.items)


def test_attention_report_rows_and_summary(market):
    m, split, fs, uf = market
    data = TrainingData.prepare(m, split, fs, uf)
    cfg = TrainConfig(dim=8, hops=1, d_k=4, seed=1)
    params = init_params(data.graphs, cfg)
    model = NFTMars(data.graphs, cfg)
    table, summary = attention_report(model, params, data.train_ptr, data.train_items)
    assert len(table) == m.n_users
    assert list(table.columns) == ["user", *SCORE_COLUMNS]
    assert list(summary.index) == list(MODALITIES)
    for col, mod in zip(SCORE_COLUMNS, MODALITIES):
        vals = table[col].tolist()
        assert summary.loc[mod, "mean"] == pytest.approx(math.fsum(vals) / len(vals), rel=1e-12)
        assert summary.loc[mod, "median"] == pytest.approx(sorted(vals)[len(vals) // 2] if len(vals) % 2 else
                                                           0.5 * sum(sorted(vals)[len(vals) // 2 - 1:][:2]))
    _, _, fused = model.inference(params, data.train_ptr, data.train_items)
    np.testing.assert_allclose(fused.weights.data.sum(axis=1), 1.0, atol=1e-9)


def test_identical_modalities_give_equal_scores():
    m, split, fs, uf = toy_problem(dims=(5, 5, 5, 5))
    same = type(fs)(fs.items, fs.image, fs.image, fs.image, fs.image)
    data = TrainingData.prepare(m, split, same, uf)
    cfg = TrainConfig(dim=6, hops=2, d_k=3, num_negatives=2, seed=4)
    params = init_params(data.graphs, cfg)
    for k in list(params):
        mod, _, rest = k.partition(".")
        if mod in MODALITIES and mod != "image":
            params[k].data[...] = params[f"image.{rest}"].data
    model = NFTMars(data.graphs, cfg)
    table, _ = attention_report(model, params, data.train_ptr, data.train_items)
    s = table[list(SCORE_COLUMNS)].to_numpy()
    np.testing.assert_allclose(s, np.repeat(s[:, :1], 4, axis=1), rtol=1e-12)
    _, _, fused = model.inference(params, data.train_ptr, data.train_items)
    np.testing.assert_allclose(fused.weights.data, 0.25, atol=1e-9)


def test_evaluate_ignores_held_out_interactions(market, tmp_path):
    m, split, fs, uf = market
    data = TrainingData.prepare(m, split, fs, uf)
    cfg = TrainConfig(dim=8, hops=1, d_k=4, seed=2)
    params = init_params(data.graphs, cfg)
    model = NFTMars(data.graphs, cfg)
    rep, pop = evaluate(model, params, m, split, seed=5, ks=(10, 50))
    assert rep.n_users == pop.n_users == rep.meta["evaluated_users"]
    assert set(rep.summary) == {"Recall@10", "Recall@50", "NDCG@10", "NDCG@50"}
    assert all(0.0 <= v <= 1.0 for v in rep.summary.values())
    assert len(rep.attention) == rep.n_users
    # scores come from training positives only: the same data with held-out rows
    # dropped from the training CSR gives an identical score matrix
    ptr, items = m.user_items(split.train)
    np.testing.assert_array_equal(model.scores(params, ptr, items), model.scores(params, data.train_ptr, data.train_items))
    rep.write(tmp_path)
    back = pd.read_csv(tmp_path / "metrics.csv")
    assert list(back.columns) == ["user", "metric", "k", "value"]
    text = (tmp_path / "summary.txt").read_text()
    assert "Recall@10 = " in text and "split = test" in text
    assert list(pd.read_csv(tmp_path / "attention.csv").columns) == ["user", *SCORE_COLUMNS]
