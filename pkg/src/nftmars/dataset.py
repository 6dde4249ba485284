"""Transaction ingestion, filtering, price labels, splits and negative sampling."""
import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd

from .numerics import kernels

log = logging.getLogger(__name__)

COLUMNS = ("collection", "token_id", "buyer", "seller", "price", "currency", "timestamp")
ETH_CURRENCIES = frozenset({"ETH", "WETH"})

TRAIN, VALIDATION, TEST = 0, 1, 2
SPLIT_NAMES = ("train", "validation", "test")


class DataError(ValueError):
    """Raised for malformed or unusable input data."""


class SamplingError(DataError):
    pass


@dataclass
class TransactionLog:
    """Sale events sorted by timestamp (file order breaks ties)."""
    frame: pd.DataFrame

    def __len__(self):
        return len(self.frame)

    @property
    def buyers(self):
        return self.frame["buyer"].unique()

    @property
    def tokens(self):
        return self.frame["token_id"].unique()

    def eth_price(self):
        """Price with non-ETH/WETH quotes replaced by zero."""
        f = self.frame
        return np.where(f["currency"].str.upper().isin(ETH_CURRENCIES), f["price"].to_numpy(), 0.0)


def _from_rows(rows):
    frame = pd.DataFrame(rows, columns=COLUMNS)
    frame["price"] = frame["price"].astype(np.float64)
    frame["timestamp"] = frame["timestamp"].astype(np.int64)
    frame = frame.sort_values("timestamp", kind="stable").reset_index(drop=True)
    return TransactionLog(frame)


def load_transactions(path, collection=None):
    """Read a transaction CSV; every invalid row is reported with its line number."""
    path = Path(path)
    errors, rows = [], []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DataError(f"{path}: empty file")
        header = [h.strip() for h in header]
        missing = [c for c in COLUMNS if c not in header]
        if missing:
            raise DataError(f"{path}: line 1: header missing columns {missing}")
        pos = {c: header.index(c) for c in COLUMNS}
        for row in reader:
            lineno = reader.line_num
            if not any(cell.strip() for cell in row):
                continue
            rec, problem = _parse_row(row, pos)
            if problem:
                errors.append(f"line {lineno}, column {problem}")
                continue
            if collection is None or rec[0] == collection:
                rows.append(rec)
    if errors:
        raise DataError(f"{path}: {len(errors)} invalid row(s): " + "; ".join(errors[:20]))
    if not rows:
        raise DataError(f"{path}: no transactions" + (f" for collection {collection!r}" if collection else ""))
    return _from_rows(rows)


def _parse_row(row, pos):
    vals = {}
    for c in COLUMNS:
        k = pos[c]
        v = row[k].strip() if k < len(row) else ""
        if not v:
            return None, f"{k + 1} ({c}): missing value"
        vals[c] = v
    try:
        price = float(vals["price"])
    except ValueError:
        return None, f"{pos['price'] + 1} (price): not a number: {vals['price']!r}"
    if not math.isfinite(price) or price < 0:
        return None, f"{pos['price'] + 1} (price): must be a finite non-negative number, got {vals['price']}"
    try:
        ts = int(vals["timestamp"])
    except ValueError:
        return None, f"{pos['timestamp'] + 1} (timestamp): not an integer: {vals['timestamp']!r}"
    if ts <= 0:
        return None, f"{pos['timestamp'] + 1} (timestamp): must be positive, got {ts}"
    if vals["buyer"].lower() == vals["seller"].lower():
        return None, f"{pos['buyer'] + 1} (buyer): buyer equals seller"
    return (vals["collection"], vals["token_id"], vals["buyer"].lower(), vals["seller"].lower(),
            price, vals["currency"].upper(), ts), None


def write_transactions(log_, path):
    log_.frame.to_csv(path, columns=list(COLUMNS), index=False)


def filter_items(log_, complete_items):
    """Keep only sales of tokens that have every modality feature."""
    keep = log_.frame["token_id"].isin(set(complete_items))
    return TransactionLog(log_.frame[keep].reset_index(drop=True))


def filter_users(log_, min_interactions=5, complete_items=None):
    """Drop buyers with fewer than ``min_interactions`` distinct purchased tokens.

    When ``complete_items`` is given, sales of other tokens are dropped first.
    A single pass: it does not iterate to a fixpoint.
    """
    if min_interactions < 1:
        raise ValueError("min_interactions must be >= 1")
    if complete_items is not None:
        log_ = filter_items(log_, complete_items)
    f = log_.frame
    counts = f.groupby("buyer")["token_id"].nunique()
    keep = set(counts.index[counts >= min_interactions])
    if not keep:
        raise DataError(f"no buyer has {min_interactions} or more purchases")
    return TransactionLog(f[f["buyer"].isin(keep)].reset_index(drop=True))


def compute_price_labels(log_):
    """Per-event label: 1 iff the token's next sale is strictly more expensive."""
    f = log_.frame
    nxt = f.groupby("token_id", sort=False)["price"].shift(-1)
    return (nxt > f["price"]).to_numpy().astype(np.int8)


@dataclass(frozen=True)
class InteractionMatrix:
    """Binary implicit feedback over (user, item) pairs plus per-event price labels.

    One row per distinct (user, item) pair; its timestamp, price and label come
    from the user's latest purchase of that item.
    """
    users: tuple
    items: tuple
    user_idx: np.ndarray
    item_idx: np.ndarray
    timestamp: np.ndarray
    price: np.ndarray
    label: np.ndarray
    events: pd.DataFrame = field(repr=False)

    @property
    def n_users(self):
        return len(self.users)

    @property
    def n_items(self):
        return len(self.items)

    def __len__(self):
        return self.user_idx.shape[0]

    @property
    def price_labels(self):
        e = self.events
        return {(self.users[u], self.items[i], int(t)): int(y)
                for u, i, t, y in zip(e["user"], e["item"], e["timestamp"], e["label"])}

    def user_items(self, mask=None):
        """CSR-style (ptr, sorted items) of each user's items, optionally masked."""
        u, i = self.user_idx, self.item_idx
        if mask is not None:
            u, i = u[mask], i[mask]
        order = np.lexsort((i, u))
        ptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.add.at(ptr, u + 1, 1)
        return np.cumsum(ptr), i[order].astype(np.int64)

    def item_counts(self, mask=None):
        idx = self.item_idx if mask is None else self.item_idx[mask]
        return np.bincount(idx, minlength=self.n_items)

    def user_counts(self, mask=None):
        idx = self.user_idx if mask is None else self.user_idx[mask]
        return np.bincount(idx, minlength=self.n_users)


def build_interactions(log_, labels=None):
    """Collapse purchase events into the interaction matrix.

    ``labels`` are per-event price labels aligned with ``log_`` (computed on the
    unfiltered token history when available); defaults to labels of ``log_``.
    """
    f = log_.frame
    if labels is None:
        labels = compute_price_labels(log_)
    users = tuple(sorted(f["buyer"].unique()))
    items = tuple(sorted(f["token_id"].unique()))
    uix = {u: k for k, u in enumerate(users)}
    iix = {i: k for k, i in enumerate(items)}
    events = pd.DataFrame({
        "user": f["buyer"].map(uix).to_numpy(np.int64),
        "item": f["token_id"].map(iix).to_numpy(np.int64),
        "timestamp": f["timestamp"].to_numpy(np.int64),
        "price": log_.eth_price(),
        "label": np.asarray(labels, dtype=np.int8),
    })
    last = events.groupby(["user", "item"], sort=True).tail(1).sort_values(["user", "item"])
    return InteractionMatrix(
        users=users, items=items,
        user_idx=last["user"].to_numpy(np.int64), item_idx=last["item"].to_numpy(np.int64),
        timestamp=last["timestamp"].to_numpy(np.int64), price=last["price"].to_numpy(np.float64),
        label=last["label"].to_numpy(np.int8), events=events.reset_index(drop=True),
    )


def interactions_from_pairs(n_users, n_items, user_idx, item_idx, labels=None, timestamp=None, price=None):
    """Build an InteractionMatrix directly from index pairs (synthetic data, tests)."""
    user_idx = np.asarray(user_idx, dtype=np.int64)
    item_idx = np.asarray(item_idx, dtype=np.int64)
    n = user_idx.shape[0]
    labels = np.zeros(n, dtype=np.int8) if labels is None else np.asarray(labels, dtype=np.int8)
    timestamp = np.arange(1, n + 1, dtype=np.int64) if timestamp is None else np.asarray(timestamp, dtype=np.int64)
    price = np.ones(n) if price is None else np.asarray(price, dtype=np.float64)
    order = np.lexsort((item_idx, user_idx))
    key = user_idx[order] * n_items + item_idx[order]
    if np.any(np.diff(key) == 0):
        raise DataError("duplicate (user, item) pairs")
    events = pd.DataFrame({"user": user_idx[order], "item": item_idx[order], "timestamp": timestamp[order],
                           "price": price[order], "label": labels[order]})
    return InteractionMatrix(
        users=tuple(f"u{k}" for k in range(n_users)), items=tuple(f"i{k}" for k in range(n_items)),
        user_idx=user_idx[order], item_idx=item_idx[order], timestamp=timestamp[order],
        price=price[order], label=labels[order], events=events,
    )


def load_dataset(path, collection=None, min_interactions=5, complete_items=None):
    """Full ingestion pipeline: load, item filter, label, user filter, collapse."""
    raw = load_transactions(path, collection)
    if complete_items is not None:
        raw = filter_items(raw, complete_items)
    labels = compute_price_labels(raw)
    kept = filter_users(raw, min_interactions)
    keep_rows = raw.frame["buyer"].isin(set(kept.frame["buyer"]))
    return raw, build_interactions(kept, labels[keep_rows.to_numpy()])


# ---------------------------------------------------------------------------
# splits

@dataclass(frozen=True)
class SplitAssignment:
    tags: np.ndarray  # per interaction: TRAIN / VALIDATION / TEST

    def mask(self, which):
        code = SPLIT_NAMES.index(which) if isinstance(which, str) else which
        return self.tags == code

    @property
    def train(self):
        return self.mask(TRAIN)

    def counts_per_user(self, m):
        return np.stack([np.bincount(m.user_idx[self.tags == c], minlength=m.n_users) for c in range(3)], axis=1)

    def to_frame(self, m):
        return pd.DataFrame({
            "user": [m.users[u] for u in m.user_idx],
            "item": [m.items[i] for i in m.item_idx],
            "timestamp": m.timestamp,
            "split": [SPLIT_NAMES[t] for t in self.tags],
        })

    def to_csv(self, m, path):
        self.to_frame(m).to_csv(path, index=False)

    @classmethod
    def from_csv(cls, m, path):
        f = pd.read_csv(path, dtype={"user": str, "item": str})
        uix = {u: k for k, u in enumerate(m.users)}
        iix = {i: k for k, i in enumerate(m.items)}
        lookup = {(uix[u], iix[i]): SPLIT_NAMES.index(s) for u, i, s in zip(f["user"], f["item"], f["split"])}
        try:
            tags = np.array([lookup[(u, i)] for u, i in zip(m.user_idx, m.item_idx)], dtype=np.int8)
        except KeyError as exc:
            raise DataError(f"{path}: split file does not cover interaction {exc}") from None
        return cls(tags)


def held_out_size(n, fraction=0.4):
    return int(math.floor(fraction * n + 0.5))


def split_interactions(m, seed, fraction=0.4):
    """Per user, hold out round(0.4 n) interactions, alternating validation/test."""
    rng = np.random.default_rng(seed)
    tags = np.full(len(m), TRAIN, dtype=np.int8)
    order = np.argsort(m.user_idx, kind="stable")
    bounds = np.searchsorted(m.user_idx[order], np.arange(m.n_users + 1))
    for u in range(m.n_users):
        rows = order[bounds[u]:bounds[u + 1]]
        n = rows.shape[0]
        held = held_out_size(n, fraction)
        if n - held < 1:
            raise DataError(f"user {m.users[u]!r} would keep no training interaction ({n} total)")
        pool = rng.permutation(rows)[:held]
        tags[pool[0::2]] = VALIDATION
        tags[pool[1::2]] = TEST
    return SplitAssignment(tags)


INTERACTION_COLUMNS = ("user", "item", "timestamp", "price", "label", "split")


def save_interactions(m, split, path):
    """One row per (user, item) pair with its price label and split tag."""
    pd.DataFrame({
        "user": [m.users[u] for u in m.user_idx],
        "item": [m.items[i] for i in m.item_idx],
        "timestamp": m.timestamp,
        "price": m.price,
        "label": m.label.astype(np.int64),
        "split": [SPLIT_NAMES[t] for t in split.tags],
    }).to_csv(path, index=False)


def load_interactions(path):
    """Inverse of :func:`save_interactions`; returns (InteractionMatrix, SplitAssignment).

    Only the collapsed rows are stored, so ``events`` holds one row per pair.
    """
    try:
        f = pd.read_csv(path, dtype={"user": str, "item": str})
    except FileNotFoundError:
        raise DataError(f"{path}: no such file (run ingest first)") from None
    missing = [c for c in INTERACTION_COLUMNS if c not in f.columns]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    bad = sorted(set(f["split"]) - set(SPLIT_NAMES))
    if bad:
        raise DataError(f"{path}: unknown split name(s) {bad}")
    users = tuple(sorted(f["user"].unique()))
    items = tuple(sorted(f["item"].unique()))
    uix = {u: k for k, u in enumerate(users)}
    iix = {i: k for k, i in enumerate(items)}
    u = f["user"].map(uix).to_numpy(np.int64)
    i = f["item"].map(iix).to_numpy(np.int64)
    m = interactions_from_pairs(len(users), len(items), u, i, labels=f["label"].to_numpy(),
                                timestamp=f["timestamp"].to_numpy(), price=f["price"].to_numpy())
    m = replace(m, users=users, items=items)
    order = np.lexsort((i, u))
    tags = np.array([SPLIT_NAMES.index(s) for s in f["split"]], dtype=np.int8)[order]
    return m, SplitAssignment(tags)


# ---------------------------------------------------------------------------
# negative sampling

@dataclass(frozen=True)
class TripleBatch:
    users: np.ndarray
    pos: np.ndarray
    neg: np.ndarray

    def __len__(self):
        return self.users.shape[0]

    def batches(self, size, rng=None):
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for lo in range(0, len(self), size):
            sl = order[lo:lo + size]
            yield TripleBatch(self.users[sl], self.pos[sl], self.neg[sl])


def draw_popular(weights, excl_ptr, excl_items, users, k, rng):
    """``k`` distinct items per user, drawn proportionally to ``weights``."""
    return kernels.popularity_negatives(weights, excl_ptr, excl_items, users, k, rng)


def sample_negatives(m, split, seed, num_negatives=5):
    """Five popularity-weighted negatives per training positive."""
    train = split.train
    if not train.any():
        raise DataError("training split is empty")
    weights = m.item_counts(train).astype(np.float64)
    ptr, own = m.user_items()
    users = m.user_idx[train]
    pos = m.item_idx[train]
    avail = (weights > 0).sum() - _popular_owned(ptr, own, weights)
    short = np.flatnonzero(avail < num_negatives)
    short = short[np.isin(short, users)]
    if short.size:
        u = short[0]
        raise SamplingError(
            f"user {m.users[u]!r} has only {avail[u]} candidate negative item(s); {num_negatives} required")
    rng = np.random.default_rng(seed)
    neg = draw_popular(weights, ptr, own, users, num_negatives, rng)
    return TripleBatch(np.repeat(users, num_negatives), np.repeat(pos, num_negatives), neg.reshape(-1))


def _popular_owned(ptr, own, weights):
    owner = np.repeat(np.arange(ptr.shape[0] - 1), np.diff(ptr))
    return np.bincount(owner, weights=weights[own] > 0, minlength=ptr.shape[0] - 1).astype(np.int64)


# ---------------------------------------------------------------------------
# diagnostics

@dataclass
class PowerLawReport:
    table: pd.DataFrame  # columns: count, n_items, n_users
    item_slope: float | None
    user_slope: float | None

    @property
    def slope(self):
        return self.item_slope


def _loglog_slope(freq):
    k = np.flatnonzero(freq)
    k = k[k > 0]
    if k.size < 2:
        return None
    slope, _ = np.polyfit(np.log(k), np.log(freq[k]), 1)
    return float(slope)


def power_law_report(m):
    if len(m) == 0:
        raise DataError("empty interaction matrix")
    item_deg = m.item_counts()
    user_deg = m.user_counts()
    top = int(max(item_deg.max(), user_deg.max()))
    fi = np.bincount(item_deg, minlength=top + 1)
    fu = np.bincount(user_deg, minlength=top + 1)
    ks = np.flatnonzero((fi + fu) > 0)
    ks = ks[ks > 0]
    table = pd.DataFrame({"count": ks, "n_items": fi[ks], "n_users": fu[ks]})
    return PowerLawReport(table, _loglog_slope(fi), _loglog_slope(fu))
