"""Sampled top-K evaluation, the popularity baseline and attention reports."""
import json
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .config import MODALITIES
from .dataset import TEST, VALIDATION

NUM_CANDIDATE_NEGATIVES = 100
DEFAULT_KS = (30, 50)
SCORE_COLUMNS = ("img_score", "txt_score", "price_score", "txn_score")


@dataclass(frozen=True)
class CandidateSet:
    """Per evaluated user: held-out positives followed by sampled negatives.

    ``items[ptr[k]:ptr[k+1]]`` are the candidates of ``users[k]``; the first
    ``n_pos[k]`` of them are the relevant ones.
    """
    users: np.ndarray
    ptr: np.ndarray
    items: np.ndarray
    n_pos: np.ndarray
    short: np.ndarray  # users that received fewer than the requested negatives
    skipped: int       # users with no held-out positives

    def __len__(self):
        return self.users.shape[0]

    def of(self, k):
        c = self.items[self.ptr[k]:self.ptr[k + 1]]
        return c, c[:self.n_pos[k]]


def build_candidates(m, split, seed, tag=TEST, n_neg=NUM_CANDIDATE_NEGATIVES):
    """Held-out positives plus popularity-weighted negatives (training counts).

    Negatives never include any of the user's items, whatever the split, and
    only items seen in training can be drawn.
    """
    pop = m.item_counts(split.train).astype(np.float64)
    ptr_all, own = m.user_items()
    held = split.tags == tag
    h_ptr, h_items = m.user_items(held)
    users, ptrs, items, n_pos, short = [], [0], [], [], []
    skipped = 0
    for u in range(m.n_users):
        rel = h_items[h_ptr[u]:h_ptr[u + 1]]
        if rel.size == 0:
            skipped += 1
            continue
        mask = pop > 0
        mask[own[ptr_all[u]:ptr_all[u + 1]]] = False
        pool = np.flatnonzero(mask)
        if pool.size <= n_neg:
            neg = pool
            if pool.size < n_neg:
                short.append(u)
        else:
            rng = np.random.default_rng([seed, u])
            w = pop[pool]
            neg = np.sort(rng.choice(pool, size=n_neg, replace=False, p=w / w.sum()))
        users.append(u)
        items.append(np.concatenate([rel, neg]))
        ptrs.append(ptrs[-1] + rel.size + neg.size)
        n_pos.append(rel.size)
    cat = np.concatenate(items) if items else np.zeros(0, dtype=np.int64)
    return CandidateSet(np.array(users, dtype=np.int64), np.array(ptrs, dtype=np.int64), cat.astype(np.int64),
                        np.array(n_pos, dtype=np.int64), np.array(short, dtype=np.int64), skipped)


def recall_at_k(ranked, relevant, k):
    rel = set(relevant)
    if not rel:
        raise ValueError("recall_at_k: empty relevant set")
    return sum(1 for x in list(ranked)[:k] if x in rel) / len(rel)


def ndcg_at_k(ranked, relevant, k):
    rel = set(relevant)
    if not rel:
        raise ValueError("ndcg_at_k: empty relevant set")
    dcg = sum(1.0 / math.log2(r + 2) for r, x in enumerate(list(ranked)[:k]) if x in rel)
    idcg = sum(1.0 / math.log2(r + 2) for r in range(min(k, len(rel))))
    return dcg / idcg


def rank_candidates(cands, item_scores):
    """Candidate lists ordered by descending score, ties by item id."""
    out = []
    for k in range(len(cands)):
        c, _ = cands.of(k)
        s = item_scores(k, c)
        out.append(c[np.lexsort((c, -s))])
    return out


def model_rankings(scores, cands):
    """Rank with a dense (n_users, n_items) score matrix."""
    return rank_candidates(cands, lambda k, c: scores[cands.users[k], c])


def popularity_baseline(m, split, cands):
    pop = m.item_counts(split.train).astype(np.float64)
    return rank_candidates(cands, lambda k, c: pop[c])


def metric_table(cands, rankings, ks=DEFAULT_KS):
    rows = []
    for k in range(len(cands)):
        _, rel = cands.of(k)
        for kk in ks:
            rows.append((int(cands.users[k]), "recall", kk, recall_at_k(rankings[k], rel, kk)))
            rows.append((int(cands.users[k]), "ndcg", kk, ndcg_at_k(rankings[k], rel, kk)))
    return pd.DataFrame(rows, columns=["user", "metric", "k", "value"])


def summarize(table):
    g = table.groupby(["metric", "k"])["value"].mean()
    return {f"{metric.capitalize() if metric == 'recall' else metric.upper()}@{k}": float(v)
            for (metric, k), v in g.items()}


def mean_recall(cands, rankings, k):
    vals = [recall_at_k(rankings[j], cands.of(j)[1], k) for j in range(len(cands))]
    return float(np.mean(vals)) if vals else 0.0


@dataclass
class EvalReport:
    metrics: pd.DataFrame          # user, metric, k, value
    summary: dict
    attention: pd.DataFrame | None = None
    meta: dict = field(default_factory=dict)

    @property
    def n_users(self):
        return int(self.metrics["user"].nunique()) if len(self.metrics) else 0

    def write(self, out_dir):
        from pathlib import Path
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.metrics.to_csv(out / "metrics.csv", index=False)
        if self.attention is not None:
            self.attention.to_csv(out / "attention.csv", index=False)
        lines = [f"{k} = {_fmt(v)}" for k, v in sorted(self.summary.items())]
        lines += [f"{k} = {_fmt(v)}" for k, v in sorted(self.meta.items())]
        (out / "summary.txt").write_text("\n".join(lines) + "\n")


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, sort_keys=True)
    return str(v)


def attention_report(model, params, ptr, items, users=None):
    """Raw per-modality attention scores per user plus a summary (mean, quartiles)."""
    _, _, fused = model.inference(params, ptr, items)
    s = fused.scores.data
    users = np.arange(s.shape[0]) if users is None else np.asarray(users)
    table = pd.DataFrame(s[users], columns=list(SCORE_COLUMNS))
    table.insert(0, "user", users)
    return table, attention_summary(table)


def attention_summary(table):
    rows = {}
    for col, mod in zip(SCORE_COLUMNS, MODALITIES):
        v = table[col].to_numpy()
        rows[mod] = {"mean": float(v.mean()), "q1": float(np.quantile(v, 0.25)),
                     "median": float(np.quantile(v, 0.5)), "q3": float(np.quantile(v, 0.75))}
    return pd.DataFrame(rows).T


def evaluate(model, params, m, split, seed, tag=TEST, ks=DEFAULT_KS, cands=None):
    """Score held-out candidates with the model; returns (EvalReport, pop EvalReport)."""
    ptr, items = m.user_items(split.train)
    if cands is None:
        cands = build_candidates(m, split, seed, tag)
    scores = model.scores(params, ptr, items)
    table = metric_table(cands, model_rankings(scores, cands), ks)
    pop_table = metric_table(cands, popularity_baseline(m, split, cands), ks)
    att, _ = attention_report(model, params, ptr, items, cands.users)
    meta = {"split": {VALIDATION: "validation", TEST: "test"}[tag], "evaluated_users": len(cands),
            "skipped_users": cands.skipped, "short_candidate_users": int(cands.short.size)}
    return (EvalReport(table, summarize(table), att, meta),
            EvalReport(pop_table, summarize(pop_table), None, dict(meta, model="pop")))
