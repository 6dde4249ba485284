import struct
import zlib

import numpy as np
import pytest
from conftest import model_gradient_errors, toy_setup

from nftmars.checkpoint import VERSION, CheckpointError, decode, encode, load_checkpoint, save_checkpoint
from nftmars.dataset import TEST
from nftmars.evaluation import evaluate
from nftmars.model import NFTMars, init_params
from nftmars.numerics import Adam, Tensor
from nftmars.training import random_search, sample_config, train


@pytest.fixture(scope="module")
def toy():
    return toy_setup()


@pytest.fixture(scope="module")
def toy_run(toy):
    data, cfg = toy
    return train(data, cfg)


def test_toy_loss_descends(toy_run):
    trace = toy_run.trace
    assert [r["epoch"] for r in trace] == list(range(1, 11))
    assert trace[-1]["loss"] < trace[0]["loss"]
    assert all(np.isfinite(r["loss"]) for r in trace)


def test_training_is_deterministic(toy, toy_run):
    data, cfg = toy
    again = train(data, cfg)
    strip = lambda tr: [{k: v for k, v in r.items() if k != "seconds"} for r in tr]
    assert strip(again.trace) == strip(toy_run.trace)
    for k, v in toy_run.final_params.items():
        assert np.array_equal(v, again.final_params[k])
    assert encode(again.params, again.meta()) == encode(toy_run.params, toy_run.meta())


def test_best_epoch_snapshot(toy_run):
    vals = [r[f"val_recall@{toy_run.config.eval_k}"] for r in toy_run.trace]
    assert toy_run.best_val == max(vals)
    assert toy_run.best_epoch == vals.index(max(vals)) + 1


def test_alpha_zero_keeps_price_head(toy):
    data, cfg = toy
    cfg0 = cfg.replace(alpha=0.0, reg=0.0, epochs=3)
    init = {k: v.data.copy() for k, v in init_params(data.graphs, cfg0).items()}
    res = train(data, cfg0)
    for k, v in init.items():
        if k.startswith("head."):
            assert np.array_equal(res.final_params[k], v), k
    assert not np.array_equal(res.final_params["Wq"], init["Wq"])


def test_zero_gradient_adam_step():
    rng = np.random.default_rng(0)
    params = {"a": Tensor(rng.normal(size=(3, 2)), requires_grad=True), "b": Tensor(rng.normal(size=4), requires_grad=True)}
    before = {k: v.data.copy() for k, v in params.items()}
    opt = Adam(params, lr=0.1, clip_norm=5.0)
    for _ in range(3):
        opt.zero_grad()
        opt.step()
    for k in params:
        assert np.array_equal(params[k].data, before[k])


def test_adam_first_step_moves_by_lr():
    p = {"w": Tensor(np.array([1.0, -2.0]), requires_grad=True)}
    opt = Adam(p, lr=0.01)
    p["w"].grad = np.array([3.0, -0.5])
    opt.step()
    np.testing.assert_allclose(p["w"].data, [0.99, -1.99], rtol=1e-6)


def test_random_search_single_trial_and_point_space(toy):
    data, cfg = toy
    base = cfg.replace(epochs=2)
    space = {"dim": [4, 8], "alpha": [0.1, 0.2]}
    best, res, hist = random_search(data, 1, seed=3, base=base, space=space)
    assert len(hist) == 1 and hist[0][0] == best
    assert best == sample_config(np.random.default_rng([3, 5]), space, base)
    point = {"dim": [4], "alpha": [0.1], "hops": [1]}
    best, res, hist = random_search(data, 2, seed=3, base=base, space=point)
    assert (best.dim, best.alpha, best.hops) == (4, 0.1, 1)
    assert res.best_val == max(v for _, v in hist)
    with pytest.raises(ValueError):
        random_search(data, 0, seed=3, base=base, space=point)


def test_random_search_ties_go_to_earlier_trial(toy, monkeypatch):
    data, cfg = toy
    import nftmars.training as tr

    class Fake:
        def __init__(self, c):
            self.best_val = 0.5
            self.config = c

    monkeypatch.setattr(tr, "train", lambda d, c: Fake(c))
    best, res, hist = random_search(data, 4, seed=1, base=cfg, space={"dim": [4, 8, 16, 32]})
    assert best == hist[0][0]


def test_checkpoint_roundtrip(tmp_path, toy_run):
    path = tmp_path / "ck.mars"
    toy_run.save(path)
    params, meta = load_checkpoint(path)
    assert set(params) == set(toy_run.params)
    for k, v in toy_run.params.items():
        assert params[k].dtype == np.float64
        assert np.array_equal(params[k], v)
    assert meta["epoch"] == toy_run.best_epoch
    assert meta["config"] == toy_run.config.to_dict()


def test_checkpoint_corruption(tmp_path):
    params = {"w": np.arange(6.0).reshape(2, 3), "s": np.array(2.5)}
    raw = encode(params, {"x": 1})
    with pytest.raises(CheckpointError, match="checksum"):
        decode(raw[:-7])
    flipped = bytearray(raw)
    flipped[40] ^= 1
    with pytest.raises(CheckpointError, match="checksum"):
        decode(bytes(flipped))
    with pytest.raises(CheckpointError, match="magic"):
        decode(b"NOPE" + raw[4:])
    # re-sign a body carrying a newer version so only the version check trips
    body = raw[:4] + struct.pack("<I", VERSION + 1) + raw[8:-4]
    with pytest.raises(CheckpointError, match="version"):
        decode(body + struct.pack("<I", zlib.crc32(body)))
    back, meta = decode(raw)
    assert back["s"].shape == () and back["s"] == 2.5 and meta == {"x": 1}
    with pytest.raises(CheckpointError, match="cannot read"):
        load_checkpoint(tmp_path / "missing.mars")
    save_checkpoint(params, tmp_path / "sub" / "a.mars")
    assert (tmp_path / "sub" / "a.mars").read_bytes() == encode(params)


def test_load_then_evaluate_reproduces_metrics(tmp_path, toy, toy_run):
    data, cfg = toy
    model = NFTMars(data.graphs, cfg)
    as_t = lambda p: {k: Tensor(v) for k, v in p.items()}
    before, _ = evaluate(model, as_t(toy_run.params), data.m, data.split, seed=1, tag=TEST, ks=(3, 5))
    toy_run.save(tmp_path / "ck")
    loaded, _ = load_checkpoint(tmp_path / "ck")
    after, _ = evaluate(model, as_t(loaded), data.m, data.split, seed=1, tag=TEST, ks=(3, 5))
    assert before.summary == after.summary
    assert before.metrics.equals(after.metrics)


def test_full_model_gradient_check():
    data, cfg = toy_setup(reg=0.01, alpha=0.3)
    errors = model_gradient_errors(data, cfg)
    assert len(errors) == len(init_params(data.graphs, cfg))
    bad = {k: v for k, v in errors.items() if not v < 1e-3}
    assert not bad
