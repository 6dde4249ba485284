"""User-wise cross-attention over the four modality representations."""
import math
from dataclasses import dataclass

import numpy as np

from .numerics import (
    ShapeError, Tensor, add, gather, getitem, glorot, inner, matmul, mul, scale, segment_sum, softmax, stack,
)


@dataclass
class FusionOutput:
    e_u: Tensor      # (B, L*d)
    scores: Tensor   # (B, 4) raw pre-softmax s_u
    weights: Tensor  # (B, 4) softmax of scores


def init_fusion_params(rng, width, d_k):
    return {"Wq": glorot(rng, width, d_k), "Wk": glorot(rng, width, d_k), "Wv": glorot(rng, width, width)}


def fuse_query(user_embs):
    """Elementwise mean of the per-modality user representations."""
    shapes = {tuple(t.shape) for t in user_embs}
    if len(shapes) != 1:
        raise ShapeError(f"fuse_query: modality embeddings differ in shape: {sorted(shapes)}")
    acc = user_embs[0]
    for t in user_embs[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(user_embs))


def build_keys_values(item_embs, pos, owner=None, n_owners=None):
    """Per-modality mean of item representations over a positive set.

    With ``owner`` unset, ``pos`` is one shared set and each slot is (1, width).
    Otherwise ``owner[k]`` names the row that ``pos[k]`` belongs to, giving
    (n_owners, width) slots, one positive set per row.
    """
    pos = np.asarray(pos, dtype=np.int64)
    if pos.size == 0:
        raise ValueError("build_keys_values: empty positive set")
    if owner is None:
        owner = np.zeros(pos.size, dtype=np.int64)
        n_owners = 1
    owner = np.asarray(owner, dtype=np.int64)
    counts = np.bincount(owner, minlength=n_owners).astype(np.float64)
    if (counts == 0).any():
        raise ValueError(f"build_keys_values: row {int(np.flatnonzero(counts == 0)[0])} has no positives")
    inv = Tensor((1.0 / counts)[:, None])
    return [mul(segment_sum(gather(e, pos), owner, n_owners), inv) for e in item_embs]


def cross_attend(query, slots, params):
    """Single-head attention of one query per user over the modality slots."""
    wq, wk, wv = params["Wq"], params["Wk"], params["Wv"]
    d_k = wq.shape[1]
    q = matmul(query, wq)
    raw = [scale(inner(q, matmul(s, wk)), 1.0 / math.sqrt(d_k)) for s in slots]
    scores = stack(raw, axis=1)
    weights = softmax(scores)
    e_u = None
    for k, s in enumerate(slots):
        term = mul(getitem(weights, (slice(None), slice(k, k + 1))), matmul(s, wv))
        e_u = term if e_u is None else add(e_u, term)
    return FusionOutput(e_u, scores, weights)
