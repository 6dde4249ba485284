"""Planted-structure marketplace generator for end-to-end checks and demos.

Items fall into latent blocks; every wallet prefers one block and buys most of
its tokens there. Block identity also leaks into the image/text vectors and
the price level, so each modality carries some signal.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .dataset import TransactionLog, build_interactions, compute_price_labels, filter_users
from .features.io import item_feature_set, user_feature_matrix

DAY = 86400
T0 = 1_640_995_200  # 2022-01-01


@dataclass
class SyntheticMarket:
    log: TransactionLog
    items: list
    image: np.ndarray
    text: np.ndarray
    item_block: np.ndarray
    user_block: dict

    def dataset(self):
        """(InteractionMatrix, ItemFeatureSet, UserFeatureMatrix) via the regular pipeline."""
        labels = compute_price_labels(self.log)
        kept = filter_users(self.log)
        m = build_interactions(kept, labels[self.log.frame["buyer"].isin(set(kept.frame["buyer"])).to_numpy()])
        pos = {t: k for k, t in enumerate(self.items)}
        rows = [pos[t] for t in m.items]
        fs = item_feature_set(self.log, m.items, self.image[rows], self.text[rows])
        return m, fs, user_feature_matrix(self.log, m.users)

    def write(self, out_dir):
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        from .dataset import write_transactions
        write_transactions(self.log, out / "transactions.csv")
        for name, mat in (("image", self.image), ("text", self.text)):
            with open(out / f"{name}_embeddings.csv", "w") as fh:
                fh.write(f"item_id,{mat.shape[1]}\n")
                for tok, row in zip(self.items, mat):
                    fh.write(tok + "," + ",".join(repr(float(x)) for x in row) + "\n")
        return out


def make_market(n_users=200, n_items=500, n_blocks=5, in_block=0.8, per_user=(10, 20), image_dim=64,
                text_dim=300, signal=1.0, seed=0, collection="synthetic"):
    rng = np.random.default_rng([seed, 42])
    item_block = np.arange(n_items) * n_blocks // n_items
    # heavy-tailed popularity, shuffled so it is unrelated to block
    pop = rng.permutation(1.0 / np.arange(1, n_items + 1) ** 0.7)
    user_block = rng.integers(n_blocks, size=n_users)
    buys = []
    for u in range(n_users):
        n = int(rng.integers(per_user[0], per_user[1] + 1))
        home = np.flatnonzero(item_block == user_block[u])
        away = np.flatnonzero(item_block != user_block[u])
        n_home = min(int(rng.binomial(n, in_block)), home.size)
        picks = [rng.choice(home, n_home, replace=False, p=pop[home] / pop[home].sum()),
                 rng.choice(away, n - n_home, replace=False, p=pop[away] / pop[away].sum())]
        buys += [(u, int(i)) for i in np.concatenate(picks)]
    tokens = [f"tok{i:04d}" for i in range(n_items)]
    wallets = [f"w{u:04d}" for u in range(n_users)]
    base_price = np.exp(rng.normal(0.0, 0.3, n_blocks)) * (1 + np.arange(n_blocks))
    hold_days = 3.0 + 4.0 * np.arange(n_blocks)
    rows = []
    by_item = {}
    for u, i in buys:
        by_item.setdefault(i, []).append(u)
    for i, owners in sorted(by_item.items()):
        order = rng.permutation(owners)
        t = T0 + int(rng.integers(0, 30 * DAY))
        price = base_price[item_block[i]] * float(np.exp(rng.normal(0, 0.2)))
        seller = "mint"
        for u in order:
            cur = "ETH" if rng.random() > 0.05 else "USDC"
            rows.append((collection, tokens[i], wallets[u], seller, round(price, 6), cur, t))
            seller = wallets[u]
            t += int(rng.exponential(hold_days[item_block[i]]) * DAY) + 1
            price *= float(np.exp(rng.normal(0.02, 0.15)))
    frame = pd.DataFrame(rows, columns=["collection", "token_id", "buyer", "seller", "price", "currency", "timestamp"])
    frame = frame.sort_values(["timestamp", "token_id"], kind="stable").reset_index(drop=True)
    centres_img = rng.normal(size=(n_blocks, image_dim))
    centres_txt = rng.normal(size=(n_blocks, text_dim))
    image = signal * centres_img[item_block] + rng.normal(size=(n_items, image_dim))
    text = signal * centres_txt[item_block] + rng.normal(size=(n_items, text_dim))
    return SyntheticMarket(TransactionLog(frame), tokens, image, text, item_block,
                           {wallets[u]: int(b) for u, b in enumerate(user_block)})


def toy_problem(n_users=5, n_items=10, dims=(6, 9, 4, 4), seed=0):
    """Tiny two-group instance: (InteractionMatrix, SplitAssignment, ItemFeatureSet, user features).

    Even users favour the first half of the catalogue and odd users the second
    half; each owns four favoured items and one other.
    """
    from .dataset import interactions_from_pairs, split_interactions
    from .features.io import ItemFeatureSet

    rng = np.random.default_rng([seed, 43])
    half = n_items // 2
    us, its = [], []
    for u in range(n_users):
        home = np.arange(half) + (u % 2) * half
        away = np.setdiff1d(np.arange(n_items), home)
        picks = np.concatenate([rng.choice(home, 4, replace=False), rng.choice(away, 2, replace=False)])
        us += [u] * picks.size
        its += picks.tolist()
    labels = rng.integers(0, 2, len(us))
    m = interactions_from_pairs(n_users, n_items, us, its, labels=labels)
    split = split_interactions(m, seed)
    group = (np.arange(n_items) >= half).astype(float)[:, None]
    mats = [group * 2.0 - 1.0 + 0.5 * rng.normal(size=(n_items, d)) for d in dims]
    fs = ItemFeatureSet(m.items, *mats)
    return m, split, fs, rng.normal(size=(n_users, 3))
