"""The full recommender: graphs -> fusion -> heads."""
from dataclasses import dataclass

import numpy as np

from .config import MODALITIES
from .fusion import build_keys_values, cross_attend, fuse_query, init_fusion_params
from .graph import init_graph_params, propagate
from .heads import bce_loss, bpr_loss, combined_loss, init_price_params, item_final, price_predict, rec_score
from .numerics import Tensor, gather


@dataclass
class BatchLoss:
    total: Tensor
    rec: Tensor
    price: Tensor
    pos_scores: Tensor
    neg_scores: Tensor


def init_params(graphs, cfg, seed=None):
    """All trainable tensors, drawn from a generator keyed on the config seed."""
    rng = np.random.default_rng([cfg.seed if seed is None else seed, 1])
    width = cfg.hops * cfg.dim
    raw = init_graph_params(graphs, cfg.dim, cfg.hops, rng)
    raw.update(init_fusion_params(rng, width, cfg.d_k))
    raw.update(init_price_params(rng, width, cfg.dim))
    return {k: Tensor(v, requires_grad=True) for k, v in raw.items()}


class NFTMars:
    """Stateless forward passes over a fixed set of modality graphs.

    ``params`` is passed explicitly so gradient checks can swap in perturbed
    tensors without touching the model.
    """

    def __init__(self, graphs, cfg):
        self.graphs = graphs
        self.cfg = cfg
        g = next(iter(graphs.values()))
        self.n_users = g.n_users
        self.n_items = g.n_items

    def node_embeddings(self, params, trace=None):
        return [propagate(self.graphs[m], params, self.cfg.hops, trace) for m in MODALITIES]

    def fuse(self, params, embs, users, pos, owner=None, n_owners=None):
        query = fuse_query([gather(e, users) for e in embs])
        slots = build_keys_values(embs, pos + self.n_users, owner, n_owners)
        return cross_attend(query, slots, params)

    def batch_loss(self, params, users, pos, neg, pair_rows, pair_labels, alpha=None, reg=None):
        """Combined objective on one batch of (user, pos, neg) triples.

        ``pair_rows`` index the triples whose (user, pos) pair carries a price
        label; each distinct pair appears once.
        """
        alpha = self.cfg.alpha if alpha is None else alpha
        reg = self.cfg.reg if reg is None else reg
        embs = self.node_embeddings(params)
        fused = self.fuse(params, embs, users, np.unique(pos))
        e_u = fused.e_u
        u0 = self.n_users
        e_pos = item_final([gather(e, pos + u0) for e in embs])
        e_neg = item_final([gather(e, neg + u0) for e in embs])
        s_pos = rec_score(e_u, e_pos)
        s_neg = rec_score(e_u, e_neg)
        l_rec = bpr_loss(s_pos, s_neg)
        pred = price_predict(gather(e_u, pair_rows), gather(e_pos, pair_rows), params)
        l_price = bce_loss(pred, pair_labels)
        total = combined_loss(l_rec, l_price, alpha, reg, params)
        return BatchLoss(total, l_rec, l_price, s_pos, s_neg)

    def inference(self, params, ptr, items):
        """User and item embeddings with each user's training positives as keys.

        ``ptr``/``items`` are the CSR training positives per user. Returns numpy
        arrays (e_u, e_i, FusionOutput).
        """
        embs = [Tensor(e.data) for e in self.node_embeddings(params)]
        frozen = {k: Tensor(v.data) for k, v in params.items()}
        users = np.arange(self.n_users)
        owner = np.repeat(users, np.diff(ptr))
        fused = self.fuse(frozen, embs, users, np.asarray(items, dtype=np.int64), owner, self.n_users)
        e_i = item_final([Tensor(e.data[self.n_users:]) for e in embs])
        return fused.e_u.data, e_i.data, fused

    def scores(self, params, ptr, items):
        e_u, e_i, _ = self.inference(params, ptr, items)
        return e_u @ e_i.T


def price_pairs(users, pos, train_keys, train_labels, n_items):
    """Rows of a triple batch that carry each distinct positive pair once, and their labels."""
    key = users.astype(np.int64) * n_items + pos
    _, rows = np.unique(key, return_index=True)
    loc = np.searchsorted(train_keys, key[rows])
    return rows, train_labels[loc]
