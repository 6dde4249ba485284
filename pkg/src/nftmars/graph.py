"""Per-modality user-item graphs and gated attention propagation."""
import math
from dataclasses import dataclass

import numpy as np

from .config import MODALITIES
from .dataset import DataError
from .numerics import (
    Tensor, add, concat, edge_aggregate, edge_dot, glorot, leaky_relu, matmul, mul, scale, segment_softmax, sigmoid,
    tanh,
)


@dataclass(frozen=True)
class ModalGraph:
    """Bipartite graph for one modality.

    Nodes ``0..n_users-1`` are users and ``n_users..n_users+n_items-1`` items.
    ``src``/``dst`` list every undirected edge in both directions.
    """
    modality: str
    n_users: int
    n_items: int
    src: np.ndarray
    dst: np.ndarray
    item_features: np.ndarray
    user_features: np.ndarray

    @property
    def n_nodes(self):
        return self.n_users + self.n_items

    @property
    def n_edges(self):
        return self.src.shape[0] // 2

    @property
    def feature_dim(self):
        return self.item_features.shape[1]

    def neighbors(self, h):
        return np.sort(self.src[self.dst == h])

    def degree(self):
        return np.bincount(self.dst, minlength=self.n_nodes)


def edge_lists(n_users, user_idx, item_idx):
    """Both directions of each user-item edge, ordered by destination node."""
    u = np.asarray(user_idx, dtype=np.int64)
    i = np.asarray(item_idx, dtype=np.int64) + n_users
    src = np.concatenate([i, u])
    dst = np.concatenate([u, i])
    order = np.lexsort((src, dst))
    return src[order], dst[order]


def build_modal_graphs(m, train_mask, features, user_features):
    """One graph per modality over the training interactions, sharing a single topology.

    ``features`` is an ItemFeatureSet aligned with ``m.items``; ``user_features``
    a (n_users, k) array already normalised.
    """
    train_mask = np.asarray(train_mask, dtype=bool)
    if tuple(features.items) != tuple(m.items):
        raise DataError("item features are not aligned with the interaction matrix")
    uf = np.asarray(user_features, dtype=np.float64)
    if uf.shape[0] != m.n_users:
        raise DataError(f"user features have {uf.shape[0]} rows for {m.n_users} users")
    users, items = m.user_idx[train_mask], m.item_idx[train_mask]
    deg = np.bincount(users, minlength=m.n_users)
    if (deg == 0).any():
        bad = int(np.flatnonzero(deg == 0)[0])
        raise DataError(f"user {m.users[bad]!r} has no training interactions")
    src, dst = edge_lists(m.n_users, users, items)
    src.setflags(write=False)
    dst.setflags(write=False)
    return {mod: ModalGraph(mod, m.n_users, m.n_items, src, dst, features.modality(mod), uf) for mod in MODALITIES}


def init_graph_params(graphs, dim, hops, rng):
    """Glorot weights per modality plus the shared ID embedding table.

    Layer 1 maps the native feature width to ``dim``; deeper layers share one
    ``dim x dim`` pair. ``W3`` is shared by all layers.
    """
    p = {}
    g0 = next(iter(graphs.values()))
    for mod, g in graphs.items():
        dm = g.feature_dim
        p[f"{mod}.Wu"] = glorot(rng, g.user_features.shape[1], dm)
        p[f"{mod}.W1.0"] = glorot(rng, dm, dim)
        p[f"{mod}.W2.0"] = glorot(rng, dm, dim)
        if hops > 1:
            p[f"{mod}.W1.1"] = glorot(rng, dim, dim)
            p[f"{mod}.W2.1"] = glorot(rng, dim, dim)
        p[f"{mod}.W3"] = glorot(rng, dim, dim)
    p["id"] = rng.normal(0.0, 0.01, size=(g0.n_nodes, dim))
    return p


def init_embeddings(g, params):
    """Layer-0 node matrix: tanh-projected user features stacked over raw item features."""
    users = tanh(matmul(Tensor(g.user_features), params[f"{g.modality}.Wu"]))
    return concat([users, Tensor(g.item_features)], axis=0)


def attention_and_gate(g, proj, ids):
    """Per-edge attention (softmax over each ego's neighbours) and sigmoid gate.

    Edge ``e`` carries a message from ``src[e]`` to the ego ``dst[e]``.
    """
    f_a = segment_softmax(scale(edge_dot(proj, proj, g.dst, g.src), 1.0 / math.sqrt(proj.shape[1])),
                          g.dst, g.n_nodes)
    f_g = sigmoid(edge_dot(ids, proj, g.dst, g.src))
    return f_a, f_g


def propagate(g, params, hops, trace=None):
    """Run ``hops`` layers and return the concatenated per-layer outputs (n_nodes, hops*dim)."""
    mod = g.modality
    ids = params["id"]
    h = init_embeddings(g, params)
    outs = []
    for layer in range(hops):
        k = min(layer, 1)
        proj = matmul(h, params[f"{mod}.W1.{k}"])
        f_a, f_g = attention_and_gate(g, proj, ids)
        if trace is not None:
            trace.append((f_a.data, f_g.data))
        e_n = leaky_relu(edge_aggregate(proj, mul(f_a, f_g), g.src, g.dst, g.n_nodes))
        e_self = leaky_relu(add(matmul(h, params[f"{mod}.W2.{k}"]), ids))
        h = leaky_relu(add(matmul(e_n, params[f"{mod}.W3"]), e_self))
        outs.append(h)
    return outs[0] if hops == 1 else concat(outs, axis=1)
