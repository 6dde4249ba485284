"""Scoring heads and the multi-task objective."""
import numpy as np

from .numerics import (
    ShapeError, Tensor, add, clamp, concat, glorot, inner, leaky_relu, log, log_sigmoid, matmul, mean, mul, scale,
    sigmoid, sub, sumsq,
)

PROB_EPS = 1e-12
HEAD_PREFIX = "head."


def item_final(item_embs):
    acc = item_embs[0]
    for t in item_embs[1:]:
        acc = add(acc, t)
    return scale(acc, 1.0 / len(item_embs))


def rec_score(e_u, e_i):
    if e_u.shape[-1] != e_i.shape[-1]:
        raise ShapeError(f"rec_score: length mismatch {e_u.shape} vs {e_i.shape}")
    return inner(e_u, e_i)


def bpr_loss(pos, neg):
    """Mean of -log sigmoid(pos - neg) over triples."""
    return scale(mean(log_sigmoid(sub(pos, neg))), -1.0)


def init_price_params(rng, width, hidden):
    return {
        "head.W1": glorot(rng, 2 * width, hidden),
        "head.b1": np.zeros(hidden),
        "head.W2": glorot(rng, hidden, 1),
        "head.b2": np.zeros(1),
    }


def price_predict(e_u, e_i, params):
    """Probability that the next sale is higher, from the concatenated pair."""
    x = concat([e_u, e_i], axis=1)
    h = leaky_relu(add(matmul(x, params["head.W1"]), params["head.b1"]))
    z = add(matmul(h, params["head.W2"]), params["head.b2"])
    return sigmoid(z.reshape(-1))


def bce_loss(pred, labels):
    y = np.asarray(labels, dtype=np.float64)
    p = clamp(pred, PROB_EPS, 1.0 - PROB_EPS)
    pos = mul(Tensor(y), log(p))
    neg = mul(Tensor(1.0 - y), log(sub(1.0, p)))
    return scale(mean(add(pos, neg)), -1.0)


def is_regularized(name):
    """Biases are exempt from the L2 penalty."""
    return not name.rsplit(".", 1)[-1].startswith("b")


def l2_penalty(params):
    """Sum over weight tensors of their mean squared entry, so the weight of the
    penalty does not grow with layer width or catalogue size."""
    total = None
    for name, t in params.items():
        if is_regularized(name):
            s = scale(sumsq(t), 1.0 / t.data.size)
            total = s if total is None else add(total, s)
    return total if total is not None else Tensor(0.0)


def combined_loss(l_rec, l_price, alpha, reg, params=None):
    out = add(scale(l_rec, 1.0 - alpha), scale(l_price, alpha))
    if reg and params:
        out = add(out, scale(l2_penalty(params), reg))
    return out
