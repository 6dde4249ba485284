import math
import os

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nftmars import dataset as ds


def _tx(token, buyer, seller, price, ts, cur="ETH", coll="bayc"):
    return (coll, token, buyer, seller, price, cur, ts)


def test_load_three_rows_sorted(csv_writer):
    path = csv_writer([_tx("1", "a", "b", 1.0, 300), _tx("2", "c", "d", 2.0, 100), _tx("3", "e", "f", 3.0, 200)])
    log = ds.load_transactions(path, "bayc")
    assert len(log) == 3
    assert list(log.frame["timestamp"]) == [100, 200, 300]


def test_negative_price_rejected_with_line(csv_writer):
    path = csv_writer([_tx("1", "a", "b", 1.0, 300), _tx("2", "c", "d", -2.0, 100)])
    with pytest.raises(ds.DataError, match=r"line 3.*price"):
        ds.load_transactions(path)


def test_missing_field_rejected(csv_writer):
    path = csv_writer([_tx("1", "", "b", 1.0, 300)])
    with pytest.raises(ds.DataError, match=r"line 2, column 3 \(buyer\)"):
        ds.load_transactions(path)


def test_bad_timestamp_and_self_trade(csv_writer):
    with pytest.raises(ds.DataError, match="timestamp"):
        ds.load_transactions(csv_writer([_tx("1", "a", "b", 1.0, "x")]))
    with pytest.raises(ds.DataError, match="buyer equals seller"):
        ds.load_transactions(csv_writer([_tx("1", "a", "a", 1.0, 5)]))


def test_empty_file(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(ds.DataError, match="empty"):
        ds.load_transactions(p)
    p.write_text(",".join(ds.COLUMNS) + "\n")
    with pytest.raises(ds.DataError, match="no transactions"):
        ds.load_transactions(p)


def test_quoted_fields(tmp_path):
    p = tmp_path / "q.csv"
    p.write_text(",".join(ds.COLUMNS) + '\n"bayc","tok,1","a","b","1.5","eth","10"\n')
    log = ds.load_transactions(p)
    assert log.frame["token_id"][0] == "tok,1"
    assert log.frame["currency"][0] == "ETH"


def _log(rows):
    return ds._from_rows(rows)


def _counts_log(counts):
    rows, ts = [], 1
    for b, n in enumerate(counts):
        for k in range(n):
            rows.append(_tx(f"t{b}_{k}", f"buyer{b}", "mint", 1.0, ts))
            ts += 1
    return _log(rows)


def test_filter_users_threshold():
    log = _counts_log([4, 5])
    kept = ds.filter_users(log, 5)
    assert set(kept.buyers) == {"buyer1"}


def test_filter_users_counts_one_to_ten():
    kept = ds.filter_users(_counts_log(range(1, 11)), 5)
    assert len(kept.buyers) == 6


def test_filter_users_idempotent_and_error():
    log = _counts_log([7, 2, 5, 9])
    once = ds.filter_users(log)
    twice = ds.filter_users(once)
    pd.testing.assert_frame_equal(once.frame, twice.frame)
    with pytest.raises(ds.DataError):
        ds.filter_users(_counts_log([1, 2]))
    with pytest.raises(ValueError):
        ds.filter_users(log, 0)


def test_filter_users_drops_incomplete_items_first():
    log = _counts_log([5, 6])
    complete = [t for t in log.tokens if t != "t0_0"]
    kept = ds.filter_users(log, 5, complete_items=complete)
    assert set(kept.buyers) == {"buyer1"}


def _token_log(prices):
    return _log([_tx("x", f"b{k}", f"s{k}", p, 10 + k) for k, p in enumerate(prices)])


def test_price_labels_rule():
    assert list(ds.compute_price_labels(_token_log([1.0, 1.5, 1.2]))) == [1, 0, 0]
    assert list(ds.compute_price_labels(_token_log([3.0]))) == [0]
    assert list(ds.compute_price_labels(_token_log([2.0, 2.0]))) == [0, 0]


def test_price_labels_interleaved_tokens():
    log = _log([_tx("a", "u1", "s", 1.0, 1), _tx("b", "u2", "s", 5.0, 2), _tx("a", "u3", "s", 2.0, 3),
                _tx("b", "u4", "s", 4.0, 4)])
    assert list(ds.compute_price_labels(log)) == [1, 0, 0, 0]


def test_build_interactions_collapses_duplicates():
    log = _log([_tx("a", "u1", "s", 1.0, 1), _tx("a", "u2", "u1", 2.0, 2), _tx("a", "u1", "u2", 3.0, 3),
                _tx("b", "u1", "s", 1.0, 4)])
    m = ds.build_interactions(log)
    assert len(m) == 3
    assert len(m.price_labels) == 4  # one per event
    row = [k for k in range(len(m)) if m.users[m.user_idx[k]] == "u1" and m.items[m.item_idx[k]] == "a"][0]
    assert m.timestamp[row] == 3
    assert set(m.price_labels.values()) <= {0, 1}


def _uniform_matrix(n_per_user, n_items=40):
    us, its = [], []
    for u, n in enumerate(n_per_user):
        us += [u] * n
        its += list(range(n))
    return ds.interactions_from_pairs(len(n_per_user), n_items, us, its)


def test_split_sizes():
    m = _uniform_matrix([10, 5])
    split = ds.split_interactions(m, seed=1)
    counts = split.counts_per_user(m)
    assert counts[0].tolist() == [6, 2, 2]
    assert counts[1].tolist() == [3, 1, 1]


def test_split_odd_pool_favours_validation():
    m = _uniform_matrix([8])  # round(3.2) = 3 held out
    assert ds.split_interactions(m, 0).counts_per_user(m)[0].tolist() == [5, 2, 1]


def test_split_deterministic():
    m = _uniform_matrix([9, 12, 7])
    a = ds.split_interactions(m, 5).tags
    b = ds.split_interactions(m, 5).tags
    np.testing.assert_array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(5, 30), min_size=1, max_size=6), st.integers(0, 1000))
def test_split_conserves_counts(ns, seed):
    m = _uniform_matrix(ns, n_items=30)
    c = ds.split_interactions(m, seed).counts_per_user(m)
    for n, row in zip(ns, c):
        held = math.floor(0.4 * n + 0.5)
        assert row.sum() == n
        assert row[1] + row[2] == held
        assert row[1] - row[2] == held % 2
        assert row[0] >= 1


def test_split_csv_roundtrip(tmp_path):
    m = _uniform_matrix([6, 7])
    split = ds.split_interactions(m, 3)
    split.to_csv(m, tmp_path / "s.csv")
    head = (tmp_path / "s.csv").read_text().splitlines()[0]
    assert head == "user,item,timestamp,split"
    np.testing.assert_array_equal(ds.SplitAssignment.from_csv(m, tmp_path / "s.csv").tags, split.tags)


def _sampling_matrix():
    rng = np.random.default_rng(0)
    us, its = [], []
    for u in range(8):
        items = rng.choice(30, size=6, replace=False)
        us += [u] * 6
        its += list(items)
    return ds.interactions_from_pairs(8, 30, us, its)


def test_negatives_five_per_positive_and_disjoint():
    m = _sampling_matrix()
    split = ds.split_interactions(m, 0)
    batch = ds.sample_negatives(m, split, seed=3)
    assert len(batch) == 5 * split.train.sum()
    owned = set(zip(m.user_idx.tolist(), m.item_idx.tolist()))
    assert all((u, j) not in owned for u, j in zip(batch.users, batch.neg))
    assert all((u, i) in owned for u, i in zip(batch.users, batch.pos))
    grouped = batch.neg.reshape(-1, 5)
    assert all(len(set(r)) == 5 for r in grouped)
    train_pop = m.item_counts(split.train)
    assert (train_pop[batch.neg] > 0).all()


def test_negatives_deterministic():
    m = _sampling_matrix()
    split = ds.split_interactions(m, 0)
    a = ds.sample_negatives(m, split, 11)
    b = ds.sample_negatives(m, split, 11)
    np.testing.assert_array_equal(a.neg, b.neg)


def test_negatives_single_positive_gives_five():
    # one user with one training item, plenty of popular items elsewhere
    us = [0] + [1] * 10 + [2] * 11
    its = [0] + list(range(1, 11)) + list(range(5, 16))
    m = ds.interactions_from_pairs(3, 16, us, its)
    split = ds.SplitAssignment(np.zeros(len(m), dtype=np.int8))
    batch = ds.sample_negatives(m, split, 0)
    assert (batch.users == 0).sum() == 5


def test_negatives_impossible_raises():
    m = ds.interactions_from_pairs(1, 2, [0, 0], [0, 1])
    split = ds.SplitAssignment(np.zeros(2, dtype=np.int8))
    with pytest.raises(ds.SamplingError):
        ds.sample_negatives(m, split, 0)


def test_popularity_draw_frequency():
    # multinomial oracle: p(item0) = 9 / (9 + 1) = 0.9, sd = sqrt(.09 / 1e4) = .003
    ptr = np.zeros(2, dtype=np.int64)
    draws = ds.draw_popular(np.array([9.0, 1.0]), ptr, np.zeros(0, dtype=np.int64),
                            np.zeros(10_000, dtype=np.int64), 1, np.random.default_rng(42))
    assert abs((draws == 0).mean() - 0.90) <= 0.02


def test_power_law_degenerate():
    m = ds.interactions_from_pairs(3, 3, [0, 1, 2], [0, 1, 2])
    rep = ds.power_law_report(m)
    assert rep.item_slope is None
    assert len(rep.table) == 1


def test_power_law_recovers_exponent():
    # construct item degrees with freq(k) = 256 k^-2 for k = 1..8
    freq = {k: round(256 / k**2) for k in range(1, 9)}
    degrees = [k for k, f in freq.items() for _ in range(f)]
    us, its = [], []
    for item, deg in enumerate(degrees):
        us += list(range(deg))
        its += [item] * deg
    m = ds.interactions_from_pairs(max(degrees), len(degrees), us, its)
    rep = ds.power_law_report(m)
    # least-squares slope of the rounded table, computed independently
    k = np.array(list(freq))
    f = np.array([freq[x] for x in k], dtype=float)
    oracle = np.polyfit(np.log(k), np.log(f), 1)[0]
    assert rep.item_slope == pytest.approx(oracle, abs=1e-12)
    assert abs(rep.item_slope + 2.0) <= 0.1
    assert (rep.table["count"] * rep.table["n_items"]).sum() == len(m)


BAYC = os.environ.get("MARS_BAYC_CSV")


@pytest.mark.skipif(not BAYC, reason="set MARS_BAYC_CSV to the released BAYC export")
def test_bayc_counts():
    _, m = ds.load_dataset(BAYC, collection=os.environ.get("MARS_BAYC_COLLECTION"))
    assert (m.n_users, m.n_items, len(m)) == (1230, 6726, 13737)
    rep = ds.power_law_report(m)
    assert (rep.table["count"] * rep.table["n_items"]).sum() == 13737
