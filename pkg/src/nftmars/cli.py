"""Command-line entry point: ``nftmars <verb> [options]``.

Verbs share one working directory (``--out``). ``ingest`` writes the cleaned
log and the split interactions there, ``featurize`` adds the feature files,
and the remaining verbs read them back.

Exit codes: 0 success, 1 usage error, 2 data error.
"""
import argparse
import logging
import sys
from pathlib import Path

import pandas as pd

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2

TRANSACTIONS = "transactions.csv"
INTERACTIONS = "interactions.csv"
ITEM_FEATURES = "item_features.npz"
USER_FEATURES = "user_features.npz"
CHECKPOINT = "model.mars"
IMAGE_DIM, TEXT_DIM = 64, 300

log = logging.getLogger("nftmars")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _common(p):
    p.add_argument("--out", default=".", help="working directory (default: current)")
    p.add_argument("--seed", type=int, help="random seed (overrides the config file)")
    p.add_argument("--collection", help="collection name to select from the transaction log")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_flags(p):
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--alpha", type=float)
    p.add_argument("--hops", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, dest="learning_rate")
    p.add_argument("--reg", type=float)


def build_parser():
    parser = _Parser(prog="nftmars", description="Multi-modal graph-attention recommender for NFT collections.")
    sub = parser.add_subparsers(dest="verb", metavar="verb", parser_class=_Parser)

    p = sub.add_parser("ingest", help="clean transactions, build interactions and splits")
    _common(p)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--transactions", help="transaction CSV export")
    src.add_argument("--synthetic", action="store_true", help="generate a planted-preference demo market")
    p.add_argument("--min-interactions", type=int, default=5)
    p.add_argument("--image-embeddings", help="keep only items present here (and in --text-embeddings)")
    p.add_argument("--text-embeddings")
    p.add_argument("--users", type=int, default=200, help="synthetic market size")
    p.add_argument("--items", type=int, default=500, help="synthetic market size")

    p = sub.add_parser("featurize", help="build item and user feature files")
    _common(p)
    p.add_argument("--image-embeddings", help="precomputed 'item_id,64' CSV")
    p.add_argument("--images", help="token_id,filename manifest for the image autoencoder")
    p.add_argument("--cae-epochs", type=int, default=100)
    p.add_argument("--text-embeddings", help="precomputed 'item_id,300' CSV")
    p.add_argument("--traits", help="token_id,trait_name,value CSV")
    p.add_argument("--word-vectors", help="word2vec text file")

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    _common(p)
    _model_flags(p)
    p.add_argument("--checkpoint", help=f"output path (default: OUT/{CHECKPOINT})")

    p = sub.add_parser("evaluate", help="top-K metrics on the test split")
    _common(p)
    p.add_argument("--checkpoint", help=f"trained model (default: OUT/{CHECKPOINT})")
    p.add_argument("--k", type=int, action="append", help="cut-off; repeatable (default: 30 and 50)")
    p.add_argument("--split", choices=("test", "validation"), default="test")

    p = sub.add_parser("search", help="random hyperparameter search")
    _common(p)
    _model_flags(p)
    p.add_argument("--trials", type=int, default=8)
    p.add_argument("--checkpoint", help="also save the best model here")

    p = sub.add_parser("analyze", help="power-law and attention reports")
    _common(p)
    p.add_argument("--checkpoint", help="add the attention report for this model")
    return parser


# ---------------------------------------------------------------------------


def _need(path, hint):
    from .dataset import DataError
    if not Path(path).exists():
        raise DataError(f"{path}: not found ({hint})")
    return path


def _load_data(out):
    from .dataset import load_interactions
    from .features import ItemFeatureSet, UserFeatureMatrix
    m, split = load_interactions(_need(out / INTERACTIONS, "run ingest first"))
    fs = ItemFeatureSet.load(_need(out / ITEM_FEATURES, "run featurize first"))
    uf = UserFeatureMatrix.load(_need(out / USER_FEATURES, "run featurize first"))
    if fs.items != m.items or uf.users != m.users:
        from .dataset import DataError
        raise DataError("feature files do not match the interactions; rerun featurize")
    return m, split, fs, uf


def _config(args):
    from .config import load_config
    keys = ("seed", "alpha", "hops", "dim", "batch_size", "epochs", "learning_rate", "reg")
    over = {k: getattr(args, k, None) for k in keys}
    if args.config:
        _need(args.config, "config file")
    try:
        return load_config(args.config, **over)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _checkpoint_path(args, out):
    return Path(args.checkpoint) if args.checkpoint else out / CHECKPOINT


def cmd_ingest(args, out):
    from .dataset import load_dataset, save_interactions, split_interactions, write_transactions
    from .features import load_precomputed_embeddings

    out.mkdir(parents=True, exist_ok=True)
    seed = 0 if args.seed is None else args.seed
    if args.synthetic:
        from .synthetic import make_market
        mk = make_market(n_users=args.users, n_items=args.items, seed=seed,
                         collection=args.collection or "synthetic")
        mk.write(out / "raw")
        src = out / "raw" / TRANSACTIONS
        img, txt = out / "raw" / "image_embeddings.csv", out / "raw" / "text_embeddings.csv"
    else:
        src = _need(args.transactions, "transaction export")
        img, txt = args.image_embeddings, args.text_embeddings
    complete = None
    if img or txt:
        sets = [set(load_precomputed_embeddings(p, d)) for p, d in ((img, IMAGE_DIM), (txt, TEXT_DIM)) if p]
        complete = set.intersection(*sets)
    raw, m = load_dataset(src, args.collection, args.min_interactions, complete)
    split = split_interactions(m, seed)
    write_transactions(raw, out / TRANSACTIONS)
    save_interactions(m, split, out / INTERACTIONS)
    counts = split.counts_per_user(m).sum(axis=0)
    print(f"users: {m.n_users}")
    print(f"items: {m.n_items}")
    print(f"interactions: {len(m)} (train {counts[0]}, validation {counts[1]}, test {counts[2]})")
    if args.synthetic:
        print(f"embeddings: {img}, {txt}")
    return EXIT_OK


def cmd_featurize(args, out):
    from .dataset import DataError, load_interactions, load_transactions
    from .features import (
        WordVectorStore, build_text_matrix, embeddings_matrix, item_feature_set, load_images,
        load_precomputed_embeddings, load_traits, train_image_autoencoder, user_feature_matrix,
    )

    m, _ = load_interactions(_need(out / INTERACTIONS, "run ingest first"))
    raw = load_transactions(out / TRANSACTIONS)
    items = list(m.items)
    if args.image_embeddings:
        image = embeddings_matrix(load_precomputed_embeddings(args.image_embeddings, IMAGE_DIM), items)
    elif args.images:
        tokens, imgs = load_images(args.images)
        pos = {t: k for k, t in enumerate(tokens)}
        missing = [i for i in items if i not in pos]
        if missing:
            raise DataError(f"{args.images}: no image for item {missing[0]!r}")
        enc = train_image_autoencoder(imgs[[pos[i] for i in items]], epochs=args.cae_epochs,
                                      seed=args.seed or 0)
        log.info("image autoencoder mse %.5f -> %.5f", enc.history[0], enc.final_mse)
        image = enc.encode(imgs[[pos[i] for i in items]])
    else:
        raise UsageError("featurize: one of --image-embeddings or --images is required")
    if args.text_embeddings:
        text = embeddings_matrix(load_precomputed_embeddings(args.text_embeddings, TEXT_DIM), items)
    elif args.traits and args.word_vectors:
        text, chosen = build_text_matrix(load_traits(args.traits), WordVectorStore.load(args.word_vectors), items)
        print(f"traits: {', '.join(chosen)}")
    else:
        raise UsageError("featurize: give --text-embeddings, or --traits with --word-vectors")
    fs = item_feature_set(raw, items, image, text)
    fs.save(out / ITEM_FEATURES)
    user_feature_matrix(raw, list(m.users)).save(out / USER_FEATURES)
    print("dims: " + ", ".join(f"{k}={v}" for k, v in fs.dims.items()))
    return EXIT_OK


def _trace_frame(trace):
    return pd.DataFrame([{k: v for k, v in r.items() if k != "seconds"} for r in trace])


def cmd_train(args, out):
    from .training import TrainingData, train

    cfg = _config(args)
    m, split, fs, uf = _load_data(out)
    data = TrainingData.prepare(m, split, fs, uf)
    res = train(data, cfg)
    path = _checkpoint_path(args, out)
    res.save(path)
    _trace_frame(res.trace).to_csv(out / "trace.csv", index=False)
    print(f"best epoch {res.best_epoch}: val_recall@{cfg.eval_k} = {res.best_val:.4f}")
    print(f"checkpoint: {path}")
    return EXIT_OK


def _load_model(args, out, data):
    from .checkpoint import load_checkpoint
    from .config import TrainConfig
    from .model import NFTMars
    from .numerics import Tensor

    params, meta = load_checkpoint(_need(_checkpoint_path(args, out), "train a model or pass --checkpoint"))
    cfg = TrainConfig.from_dict(meta.get("config", {}))
    return NFTMars(data.graphs, cfg), {k: Tensor(v) for k, v in params.items()}, cfg, meta


def cmd_evaluate(args, out):
    from .dataset import TEST, VALIDATION
    from .evaluation import DEFAULT_KS, evaluate
    from .training import TrainingData

    m, split, fs, uf = _load_data(out)
    data = TrainingData.prepare(m, split, fs, uf)
    model, params, cfg, meta = _load_model(args, out, data)
    ks = tuple(sorted(set(args.k))) if args.k else DEFAULT_KS
    if min(ks) < 1:
        raise UsageError("--k must be positive")
    seed = cfg.seed if args.seed is None else args.seed
    tag = TEST if args.split == "test" else VALIDATION
    rep, pop = evaluate(model, params, m, split, seed, tag=tag, ks=ks)
    rep.meta.update(seed=seed, checkpoint=str(_checkpoint_path(args, out)), epoch=meta.get("epoch"),
                    config=cfg.to_dict())
    rep.write(out / "eval")
    pop.write(out / "eval" / "pop")
    print(f"evaluated users: {rep.n_users} (skipped {rep.meta['skipped_users']})")
    for key in sorted(rep.summary):
        print(f"{key:<10} model {rep.summary[key]:.4f}   pop {pop.summary[key]:.4f}")
    return EXIT_OK


def cmd_search(args, out):
    from .config import SEARCH_SPACE, dump_config
    from .training import TrainingData, random_search

    if args.trials < 1:
        raise UsageError("--trials must be >= 1")
    base = _config(args)
    m, split, fs, uf = _load_data(out)
    data = TrainingData.prepare(m, split, fs, uf)
    # explicit flags pin their dimension of the search space
    space = {k: [getattr(args, k)] if getattr(args, k) is not None else v for k, v in SEARCH_SPACE.items()}
    best, res, hist = random_search(data, args.trials, base.seed, base=base, space=space, on_trial=lambda t, c, v: log.info(
        "trial %d  dim=%d alpha=%g batch=%d hops=%d reg=%g  val %.4f", t, c.dim, c.alpha, c.batch_size, c.hops,
        c.reg, v))
    rows = [dict(trial=t, **{k: getattr(c, k) for k in ("dim", "alpha", "batch_size", "hops", "reg")},
                 val_recall=v) for t, (c, v) in enumerate(hist)]
    pd.DataFrame(rows).to_csv(out / "search.csv", index=False)
    (out / "best_config.txt").write_text(dump_config(best))
    if args.checkpoint:
        res.save(args.checkpoint)
    print(f"best: dim={best.dim} alpha={best.alpha} batch_size={best.batch_size} hops={best.hops} reg={best.reg}"
          f"  val_recall@{best.eval_k} = {res.best_val:.4f}")
    return EXIT_OK


def cmd_analyze(args, out):
    from .dataset import load_interactions, power_law_report
    from .evaluation import attention_report
    from .training import TrainingData

    if args.checkpoint:
        _need(args.checkpoint, "checkpoint")
    m, split = load_interactions(_need(out / INTERACTIONS, "run ingest first"))
    rep = power_law_report(m)
    out.mkdir(parents=True, exist_ok=True)
    rep.table.to_csv(out / "power_law.csv", index=False)
    fmt = lambda s: "n/a" if s is None else f"{s:.3f}"
    print(f"log-log slope: items {fmt(rep.item_slope)}, users {fmt(rep.user_slope)}")
    if args.checkpoint:
        m, split, fs, uf = _load_data(out)
        data = TrainingData.prepare(m, split, fs, uf)
        model, params, _, _ = _load_model(args, out, data)
        table, summary = attention_report(model, params, data.train_ptr, data.train_items)
        table.to_csv(out / "attention.csv", index=False)
        summary.to_csv(out / "attention_summary.csv", index_label="modality")
        print(summary.to_string(float_format=lambda v: f"{v:.4f}"))
    return EXIT_OK


COMMANDS = {"ingest": cmd_ingest, "featurize": cmd_featurize, "train": cmd_train, "evaluate": cmd_evaluate,
            "search": cmd_search, "analyze": cmd_analyze}


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    if args.verb is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .checkpoint import CheckpointError
    from .dataset import DataError
    from .features import FeatureError
    from .training import TrainingError
    try:
        return COMMANDS[args.verb](args, Path(args.out))
    except UsageError as exc:
        print(f"nftmars {args.verb}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FeatureError, CheckpointError, TrainingError, OSError, ValueError) as exc:
        print(f"nftmars {args.verb}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
