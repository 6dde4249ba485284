import csv
from dataclasses import dataclass

import numpy as np

from ..config import MODALITIES
from .scalar import USER_COLUMNS, build_item_scalar_features, build_user_features, zscore


class FeatureError(ValueError):
    pass


def load_precomputed_embeddings(path, expected_dim):
    """Read ``item_id,dim`` headed CSV rows of ``token_id,v1..vdim`` into a dict."""
    out = {}
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(fh)
        header = next(rows, None)
        if header is None or len(header) != 2 or header[0].strip() != "item_id":
            raise FeatureError(f"{path}: expected header 'item_id,dim'")
        declared = header[1].strip()
        if declared != "dim":
            try:
                declared = int(declared)
            except ValueError:
                raise FeatureError(f"{path}: bad dimension in header: {declared!r}") from None
            if declared != expected_dim:
                raise FeatureError(f"{path}: header declares {declared} dims, expected {expected_dim}")
        for lineno, row in enumerate(rows, 2):
            if not row:
                continue
            tok = row[0]
            if len(row) - 1 != expected_dim:
                raise FeatureError(f"{path}: line {lineno}: item {tok!r} has {len(row) - 1} values, expected {expected_dim}")
            if tok in out:
                raise FeatureError(f"{path}: line {lineno}: duplicate item {tok!r}")
            try:
                v = np.array(row[1:], dtype=np.float64)
            except ValueError:
                raise FeatureError(f"{path}: line {lineno}: item {tok!r} has a non-numeric value") from None
            if not np.all(np.isfinite(v)):
                raise FeatureError(f"{path}: line {lineno}: item {tok!r} has a non-finite value")
            out[tok] = v
    return out


def embeddings_matrix(mapping, items):
    missing = [i for i in items if i not in mapping]
    if missing:
        raise FeatureError(f"{len(missing)} item(s) lack an embedding, e.g. {missing[0]!r}")
    return np.stack([mapping[i] for i in items])


@dataclass(frozen=True)
class ItemFeatureSet:
    items: tuple
    image: np.ndarray
    text: np.ndarray
    price: np.ndarray
    transaction: np.ndarray

    def __post_init__(self):
        for m in MODALITIES:
            a = getattr(self, m)
            if a.ndim != 2 or a.shape[0] != len(self.items):
                raise FeatureError(f"{m} features: expected {len(self.items)} rows, got shape {a.shape}")
            if not np.all(np.isfinite(a)):
                raise FeatureError(f"{m} features contain non-finite values")

    def modality(self, m):
        return getattr(self, m)

    @property
    def dims(self):
        return {m: getattr(self, m).shape[1] for m in MODALITIES}

    def save(self, path):
        np.savez(path, items=np.array(self.items, dtype=str), **{m: getattr(self, m) for m in MODALITIES})

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(tuple(z["items"].tolist()), *(z[m] for m in MODALITIES))


@dataclass(frozen=True)
class UserFeatureMatrix:
    """Raw (unnormalised) per-user scalars in the order of ``USER_COLUMNS``."""
    users: tuple
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (len(self.users), len(USER_COLUMNS)):
            raise FeatureError(f"user features: expected {(len(self.users), 3)}, got {self.values.shape}")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise FeatureError("user features must be finite and non-negative")

    def normalized(self):
        return zscore(self.values)

    def save(self, path):
        np.savez(path, users=np.array(self.users, dtype=str), values=self.values)

    @classmethod
    def load(cls, path):
        with np.load(path) as z:
            return cls(tuple(z["users"].tolist()), z["values"])


def user_feature_matrix(log_, users):
    f = build_user_features(log_, users)
    if f.isna().any().any():
        raise FeatureError("some users have no purchases in the log")
    return UserFeatureMatrix(tuple(users), f.to_numpy(np.float64))


def item_feature_set(log_, items, image, text, tile_dim=64):
    """Assemble the four item modalities; scalar ones are z-scored then tiled."""
    sc = build_item_scalar_features(log_, items)
    if sc.isna().any().any():
        raise FeatureError("some items have no sales in the log")
    z = zscore(sc.to_numpy(np.float64))
    price = np.repeat(z[:, :1], tile_dim, axis=1)
    txn = np.repeat(z[:, 1:2], tile_dim, axis=1)
    return ItemFeatureSet(tuple(items), np.asarray(image, dtype=np.float64), np.asarray(text, dtype=np.float64),
                          price, txn)
