"""Hot inner loops with a numba path and a pure-numpy fallback.

The backend is chosen once at import time. Set ``MARS_NUMBA=0`` to force the
numpy fallback (or run without numba installed). Both implementations of each
kernel are importable under explicit ``*_numba`` / ``*_numpy`` names so tests
and the benchmark can compare them directly.
"""
import os

import numpy as np

try:
    import numba
    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("MARS_NUMBA", "1").strip().lower() not in ("0", "false", "no", "off")


def _identity(*args, **kwargs):
    if len(args) == 1 and callable(args[0]):
        return args[0]

    def _f(f):
        return f
    return _f


njit = numba.njit if HAS_NUMBA else _identity



def thread_cap():
    """Worker count requested through ``MARS_THREADS`` (None when unset or invalid)."""
    raw = os.environ.get("MARS_THREADS", "").strip()
    try:
        n = int(raw)
    except ValueError:
        return None
    return n if n > 0 else None


if HAS_NUMBA and thread_cap():
    numba.set_num_threads(min(thread_cap(), numba.config.NUMBA_NUM_THREADS))


# ---------------------------------------------------------------------------
# segment reductions over edge lists (messages grouped by destination node)

@njit(cache=True)
def _segment_sum_nb(values, seg, n):
    out = np.zeros((n, values.shape[1]))
    for e in range(values.shape[0]):
        s = seg[e]
        for k in range(values.shape[1]):
            out[s, k] += values[e, k]
    return out


def segment_sum_numba(values, seg, n):
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.ndim == 1:
        return _segment_sum_nb(values[:, None], np.asarray(seg, dtype=np.int64), n)[:, 0]
    return _segment_sum_nb(values, np.asarray(seg, dtype=np.int64), n)


def segment_sum_numpy(values, seg, n):
    values = np.asarray(values, dtype=np.float64)
    out = np.zeros((n,) + values.shape[1:])
    np.add.at(out, np.asarray(seg, dtype=np.int64), values)
    return out


@njit(cache=True)
def _segment_softmax_nb(scores, seg, n):
    m = np.full(n, -np.inf)
    for e in range(scores.shape[0]):
        if scores[e] > m[seg[e]]:
            m[seg[e]] = scores[e]
    out = np.empty_like(scores)
    z = np.zeros(n)
    for e in range(scores.shape[0]):
        out[e] = np.exp(scores[e] - m[seg[e]])
        z[seg[e]] += out[e]
    for e in range(scores.shape[0]):
        out[e] /= z[seg[e]]
    return out


def segment_softmax_numba(scores, seg, n):
    return _segment_softmax_nb(np.ascontiguousarray(scores, dtype=np.float64),
                               np.asarray(seg, dtype=np.int64), n)


def segment_softmax_numpy(scores, seg, n):
    scores = np.asarray(scores, dtype=np.float64)
    seg = np.asarray(seg, dtype=np.int64)
    m = np.full(n, -np.inf)
    np.maximum.at(m, seg, scores)
    ex = np.exp(scores - m[seg])
    z = np.zeros(n)
    np.add.at(z, seg, ex)
    return ex / z[seg]


# ---------------------------------------------------------------------------
# fused edge kernels: avoid materialising (n_edges, d) gathers

@njit(cache=True)
def _edge_dot_nb(a, b, ia, ib):
    out = np.empty(ia.shape[0])
    for e in range(ia.shape[0]):
        r, c = ia[e], ib[e]
        acc = 0.0
        for k in range(a.shape[1]):
            acc += a[r, k] * b[c, k]
        out[e] = acc
    return out


@njit(cache=True)
def _edge_dot_grad_nb(g, a, b, ia, ib):
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    for e in range(ia.shape[0]):
        r, c, w = ia[e], ib[e], g[e]
        for k in range(a.shape[1]):
            ga[r, k] += w * b[c, k]
            gb[c, k] += w * a[r, k]
    return ga, gb


@njit(cache=True)
def _edge_aggregate_nb(x, w, src, dst, n):
    out = np.zeros((n, x.shape[1]))
    for e in range(src.shape[0]):
        s, t, c = src[e], dst[e], w[e]
        for k in range(x.shape[1]):
            out[t, k] += c * x[s, k]
    return out


@njit(cache=True)
def _edge_aggregate_grad_nb(g, x, w, src, dst):
    gx = np.zeros_like(x)
    gw = np.empty(src.shape[0])
    for e in range(src.shape[0]):
        s, t, c = src[e], dst[e], w[e]
        acc = 0.0
        for k in range(x.shape[1]):
            gx[s, k] += c * g[t, k]
            acc += g[t, k] * x[s, k]
        gw[e] = acc
    return gx, gw


def _f64(x):
    return np.ascontiguousarray(x, dtype=np.float64)


def _i64(x):
    return np.ascontiguousarray(x, dtype=np.int64)


def edge_dot_numba(a, b, ia, ib):
    """``out[e] = a[ia[e]] . b[ib[e]]``."""
    return _edge_dot_nb(_f64(a), _f64(b), _i64(ia), _i64(ib))


def edge_dot_grad_numba(g, a, b, ia, ib):
    return _edge_dot_grad_nb(_f64(g), _f64(a), _f64(b), _i64(ia), _i64(ib))


def edge_aggregate_numba(x, w, src, dst, n):
    """``out[t] = sum over edges e with dst[e] == t of w[e] * x[src[e]]``."""
    return _edge_aggregate_nb(_f64(x), _f64(w), _i64(src), _i64(dst), n)


def edge_aggregate_grad_numba(g, x, w, src, dst):
    return _edge_aggregate_grad_nb(_f64(g), _f64(x), _f64(w), _i64(src), _i64(dst))


def edge_dot_numpy(a, b, ia, ib):
    return np.einsum("ij,ij->i", a[ia], b[ib])


def edge_dot_grad_numpy(g, a, b, ia, ib):
    g = np.asarray(g)[:, None]
    return (segment_sum_numpy(g * b[ib], ia, a.shape[0]), segment_sum_numpy(g * a[ia], ib, b.shape[0]))


def edge_aggregate_numpy(x, w, src, dst, n):
    return segment_sum_numpy(np.asarray(w)[:, None] * x[src], dst, n)


def edge_aggregate_grad_numpy(g, x, w, src, dst):
    gd = g[dst]
    return segment_sum_numpy(np.asarray(w)[:, None] * gd, src, x.shape[0]), np.einsum("ij,ij->i", gd, x[src])


# ---------------------------------------------------------------------------
# popularity-proportional negative sampling with per-user exclusion
#
# Uniforms are drawn by the caller so both backends consume the same stream
# and produce identical samples.

@njit(cache=True)
def _popularity_negatives_nb(cdf, excl_ptr, excl_items, users, n_neg, uniforms, out):
    n_items = cdf.shape[0]
    total = cdf[n_items - 1]
    pos = 0
    picked = np.empty(n_neg, dtype=np.int64)
    for r in range(users.shape[0]):
        u = users[r]
        lo = excl_ptr[u]
        hi = excl_ptr[u + 1]
        got = 0
        while got < n_neg:
            if pos >= uniforms.shape[0]:
                return -1
            x = uniforms[pos] * total
            pos += 1
            j = np.searchsorted(cdf, x, side="right")
            if j >= n_items:
                j = n_items - 1
            # excluded: the user's own items (sorted slice)
            k = np.searchsorted(excl_items[lo:hi], j)
            if k < hi - lo and excl_items[lo + k] == j:
                continue
            dup = False
            for q in range(got):
                if picked[q] == j:
                    dup = True
                    break
            if dup:
                continue
            picked[got] = j
            got += 1
        for q in range(n_neg):
            out[r, q] = picked[q]
    return pos


def _popularity_negatives_py(cdf, excl_ptr, excl_items, users, n_neg, uniforms, out):
    n_items = cdf.shape[0]
    total = cdf[-1]
    pos = 0
    for r in range(users.shape[0]):
        u = users[r]
        own = excl_items[excl_ptr[u]:excl_ptr[u + 1]]
        picked = []
        while len(picked) < n_neg:
            if pos >= uniforms.shape[0]:
                return -1
            j = min(int(np.searchsorted(cdf, uniforms[pos] * total, side="right")), n_items - 1)
            pos += 1
            k = np.searchsorted(own, j)
            if k < own.shape[0] and own[k] == j:
                continue
            if j in picked:
                continue
            picked.append(j)
        out[r, :] = picked
    return pos


def _run_sampler(kernel, weights, excl_ptr, excl_items, users, n_neg, rng):
    weights = np.asarray(weights, dtype=np.float64)
    cdf = np.cumsum(weights)
    users = np.asarray(users, dtype=np.int64)
    out = np.empty((users.shape[0], n_neg), dtype=np.int64)
    size = max(64, 4 * n_neg * users.shape[0])
    state = rng.bit_generator.state
    while True:
        uniforms = rng.random(size)
        used = kernel(cdf, np.asarray(excl_ptr, dtype=np.int64), np.asarray(excl_items, dtype=np.int64),
                      users, n_neg, uniforms, out)
        if used >= 0:
            break
        # pool exhausted: restart from the same state with a larger pool so the
        # outcome depends only on the seed, not on the pool size
        rng.bit_generator.state = state
        size *= 4
    return out


def popularity_negatives_numba(weights, excl_ptr, excl_items, users, n_neg, rng):
    return _run_sampler(_popularity_negatives_nb, weights, excl_ptr, excl_items, users, n_neg, rng)


def popularity_negatives_numpy(weights, excl_ptr, excl_items, users, n_neg, rng):
    return _run_sampler(_popularity_negatives_py, weights, excl_ptr, excl_items, users, n_neg, rng)


_KERNELS = ("segment_sum", "segment_softmax", "edge_dot", "edge_dot_grad", "edge_aggregate",
            "edge_aggregate_grad", "popularity_negatives")
_suffix = "_numba" if USE_NUMBA else "_numpy"
for _name in _KERNELS:
    globals()[_name] = globals()[_name + _suffix]
del _name, _suffix

BACKEND = "numba" if USE_NUMBA else "numpy"
