"""Optimisation loop, best-epoch selection and hyperparameter search."""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .checkpoint import save_checkpoint
from .config import SEARCH_SPACE, TrainConfig
from .dataset import VALIDATION, sample_negatives
from .evaluation import build_candidates, mean_recall, model_rankings
from .features.io import UserFeatureMatrix
from .graph import build_modal_graphs
from .model import NFTMars, init_params, price_pairs
from .numerics import Adam, NonFiniteError

log = logging.getLogger(__name__)


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainingData:
    m: object
    split: object
    features: object
    user_features: np.ndarray
    graphs: dict
    train_ptr: np.ndarray
    train_items: np.ndarray
    train_keys: np.ndarray
    train_labels: np.ndarray

    @classmethod
    def prepare(cls, m, split, features, user_features):
        """Build graphs from the training split; ``user_features`` raw or normalised."""
        if isinstance(user_features, UserFeatureMatrix):
            user_features = user_features.normalized()
        train = split.train
        graphs = build_modal_graphs(m, train, features, user_features)
        ptr, items = m.user_items(train)
        keys = m.user_idx[train] * m.n_items + m.item_idx[train]
        order = np.argsort(keys, kind="stable")
        return cls(m, split, features, np.asarray(user_features), graphs, ptr, items, keys[order],
                   m.label[train][order].astype(np.float64))


@dataclass
class TrainResult:
    config: TrainConfig
    params: dict          # best-validation parameters (numpy)
    final_params: dict
    trace: list = field(default_factory=list)
    best_epoch: int = 0
    best_val: float = -1.0

    def meta(self):
        return {"config": self.config.to_dict(), "epoch": self.best_epoch,
                "metrics": {f"val_recall@{self.config.eval_k}": self.best_val}}

    def save(self, path):
        save_checkpoint(self.params, path, self.meta())


def _snapshot(params):
    return {k: v.data.copy() for k, v in params.items()}


def validation_recall(model, params, data, cands, k):
    scores = model.scores(params, data.train_ptr, data.train_items)
    return mean_recall(cands, model_rankings(scores, cands), k)


def train(data, cfg, on_epoch=None, init=None):
    """Run ``cfg.epochs`` epochs of minibatch Adam and keep the best validation epoch.

    ``init`` optionally supplies starting parameters (name -> array).
    """
    model = NFTMars(data.graphs, cfg)
    params = init_params(data.graphs, cfg)
    if init is not None:
        for k, v in init.items():
            params[k].data[...] = v
    opt = Adam(params, lr=cfg.learning_rate, clip_norm=cfg.clip_norm)
    val_cands = build_candidates(data.m, data.split, cfg.seed, tag=VALIDATION)
    result = TrainResult(cfg, _snapshot(params), {})
    n_items = data.m.n_items
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        triples = sample_negatives(data.m, data.split, [cfg.seed, 100, epoch], cfg.num_negatives)
        rng = np.random.default_rng([cfg.seed, 200, epoch])
        sums = np.zeros(3)
        for b, batch in enumerate(triples.batches(cfg.batch_size, rng)):
            rows, labels = price_pairs(batch.users, batch.pos, data.train_keys, data.train_labels, n_items)
            opt.zero_grad()
            try:
                out = model.batch_loss(params, batch.users, batch.pos, batch.neg, rows, labels)
                out.total.backward()
            except NonFiniteError as exc:
                raise TrainingError(f"non-finite value in epoch {epoch}, batch {b}: {exc}") from exc
            opt.step()
            sums += len(batch) * np.array([out.total.item(), out.rec.item(), out.price.item()])
        if not all(np.isfinite(v.data).all() for v in params.values()):
            raise TrainingError(f"parameters became non-finite in epoch {epoch}")
        loss, rec, price = sums / len(triples)
        val = validation_recall(model, params, data, val_cands, cfg.eval_k) if len(val_cands) else 0.0
        row = {"epoch": epoch, "loss": loss, "rec_loss": rec, "price_loss": price,
               f"val_recall@{cfg.eval_k}": val, "seconds": time.perf_counter() - t0}
        result.trace.append(row)
        if val > result.best_val:
            result.best_val, result.best_epoch = val, epoch
            result.params = _snapshot(params)
        log.info("epoch %d loss %.5f val_recall@%d %.4f", epoch, loss, cfg.eval_k, val)
        if on_epoch is not None:
            on_epoch(row)
    result.final_params = _snapshot(params)
    return result


def sample_config(rng, space, base):
    picks = {k: v[int(rng.integers(len(v)))] for k, v in space.items()}
    return base.replace(**picks)


def random_search(data, trials, seed, base=None, space=None, on_trial=None):
    """Uniform random search over a discrete space; best validation recall wins, ties to the earlier trial."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    base = TrainConfig() if base is None else base
    space = SEARCH_SPACE if space is None else space
    rng = np.random.default_rng([seed, 5])
    best, history = None, []
    for t in range(trials):
        cfg = sample_config(rng, space, base)
        res = train(data, cfg)
        history.append((cfg, res.best_val))
        if on_trial is not None:
            on_trial(t, cfg, res.best_val)
        if best is None or res.best_val > best[1].best_val:
            best = (cfg, res)
    return best[0], best[1], history
