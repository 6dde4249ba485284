"""Compare the numba kernels with the pure-numpy fallback.

Each backend runs in its own interpreter because the choice is fixed at import
time by ``MARS_NUMBA``. Timings are the best of ``--repeat`` runs after one
warm-up call (which also triggers JIT compilation).

    python3 benchmarks/bench_kernels.py [--edges 200000] [--repeat 5] [--epoch]
"""
import argparse
import json
import os
import subprocess
import sys
import time

WORKER = r"""
import json, sys, time
import numpy as np
from nftmars.numerics import kernels as K

n_edges, repeat, epoch = int(sys.argv[1]), int(sys.argv[2]), sys.argv[3] == "1"
rng = np.random.default_rng(0)
n_nodes, d = max(n_edges // 10, 10), 64
src = rng.integers(0, n_nodes, n_edges)
dst = np.sort(rng.integers(0, n_nodes, n_edges))
x = rng.normal(size=(n_nodes, d))
w = rng.normal(size=n_edges)
g_nodes = rng.normal(size=(n_nodes, d))
g_edges = rng.normal(size=n_edges)
weights = rng.random(n_nodes) + 0.1
lists = [np.unique(rng.integers(0, n_nodes, 5)) for _ in range(n_nodes // 10)]
ptr = np.concatenate([[0], np.cumsum([len(o) for o in lists])]).astype(np.int64)
own = np.concatenate(lists).astype(np.int64)
users = rng.integers(0, len(ptr) - 1, n_edges // 5)
xs = x[src]

cases = {
    "segment_sum": lambda: K.segment_sum(xs, dst, n_nodes),
    "segment_softmax": lambda: K.segment_softmax(g_edges, dst, n_nodes),
    "edge_dot": lambda: K.edge_dot(x, x, dst, src),
    "edge_dot_grad": lambda: K.edge_dot_grad(g_edges, x, x, dst, src),
    "edge_aggregate": lambda: K.edge_aggregate(x, w, src, dst, n_nodes),
    "edge_aggregate_grad": lambda: K.edge_aggregate_grad(g_nodes, x, w, src, dst),
    "popularity_negatives": lambda: K.popularity_negatives(weights, ptr, own, users, 5,
                                                           np.random.default_rng(1)),
}
out = {"backend": K.BACKEND}
for name, f in cases.items():
    f()
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        f()
        best = min(best, time.perf_counter() - t)
    out[name] = best

if epoch:
    from nftmars.config import TrainConfig
    from nftmars.dataset import split_interactions
    from nftmars.synthetic import make_market
    from nftmars.training import TrainingData, train
    m, fs, uf = make_market(seed=0).dataset()
    data = TrainingData.prepare(m, split_interactions(m, 0), fs, uf)
    train(data, TrainConfig(epochs=1))
    t = time.perf_counter()
    train(data, TrainConfig(epochs=1))
    out["train_epoch"] = time.perf_counter() - t
print(json.dumps(out))
"""


def run_backend(flag, args):
    env = dict(os.environ, MARS_NUMBA=flag)
    res = subprocess.run([sys.executable, "-c", WORKER, str(args.edges), str(args.repeat), "1" if args.epoch else "0"],
                         env=env, capture_output=True, text=True)
    if res.returncode:
        sys.exit(f"worker failed (MARS_NUMBA={flag}):\n{res.stderr}")
    return json.loads(res.stdout.strip().splitlines()[-1])


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--edges", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--epoch", action="store_true", help="also time one training epoch on the synthetic market")
    ap.add_argument("--json", help="write raw timings here")
    args = ap.parse_args()
    t0 = time.perf_counter()
    nb = run_backend("1", args)
    np_ = run_backend("0", args)
    if nb["backend"] != "numba":
        print("numba unavailable: both runs used the numpy fallback")
    print(f"{'kernel':<22}{'numba ms':>12}{'numpy ms':>12}{'speed-up':>10}")
    for key in nb:
        if key == "backend":
            continue
        a, b = nb[key] * 1e3, np_[key] * 1e3
        print(f"{key:<22}{a:>12.2f}{b:>12.2f}{b / a:>9.1f}x")
    print(f"({args.edges} edges, best of {args.repeat}; total {time.perf_counter() - t0:.1f}s)")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump({"numba": nb, "numpy": np_, "edges": args.edges}, fh, indent=2)


if __name__ == "__main__":
    main()
