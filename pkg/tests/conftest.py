import csv

import pytest

from nftmars.dataset import COLUMNS


def write_csv(path, rows, header=COLUMNS):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow(r)
    return path


@pytest.fixture
def csv_writer(tmp_path):
    def _write(rows, name="tx.csv", header=COLUMNS):
        return write_csv(tmp_path / name, rows, header)
    return _write


def toy_setup(**overrides):
    """Toy training data plus a small config (d=8, two hops, d_k=4)."""
    from nftmars.config import TrainConfig
    from nftmars.synthetic import toy_problem
    from nftmars.training import TrainingData

    m, split, fs, uf = toy_problem()
    cfg = TrainConfig(**{**dict(dim=8, hops=2, d_k=4, num_negatives=2, batch_size=16, epochs=10, seed=0), **overrides})
    return TrainingData.prepare(m, split, fs, uf), cfg


def model_gradient_errors(data, cfg):
    """Max relative finite-difference error of the combined loss, per parameter tensor."""
    from nftmars.dataset import sample_negatives
    from nftmars.model import NFTMars, init_params, price_pairs
    from nftmars.numerics import gradient_check

    model = NFTMars(data.graphs, cfg)
    params = init_params(data.graphs, cfg)
    tb = sample_negatives(data.m, data.split, [cfg.seed, 7], cfg.num_negatives)
    rows, labels = price_pairs(tb.users, tb.pos, data.train_keys, data.train_labels, data.m.n_items)
    out = {}
    for name, p in params.items():
        def loss(x, name=name):
            return model.batch_loss(dict(params, **{name: x}), tb.users, tb.pos, tb.neg, rows, labels).total
        out[name] = gradient_check(loss, p.data, epsilon=1e-4)
    return out
